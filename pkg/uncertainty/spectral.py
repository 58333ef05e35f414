"""
(H̄, C^{-1}) 广义特征问题的随机化求解与二阶 Taylor 矩公式

H̄ 把方向（原始量）映射为对偶量，C^{-1} 为精度算子，特征向量满足 ψᵀ C^{-1} ψ = I。
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as sla

from errors import ConfigurationError

logger = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]

DENSE_LIMIT = 1000


@dataclass
class EigenPairs:
    """按 |λ| 降序排列的广义特征对"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    oversampling: int = 0
    # Q 基下的系数 S，ψ = Q S；仅随机化求解时给出
    coefficients: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def truncated(self, n: int) -> 'EigenPairs':
        coef = None if self.coefficients is None else self.coefficients[:, :n]
        return EigenPairs(self.eigenvalues[:n], self.eigenvectors[:, :n], self.oversampling, coef)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'n': np.arange(1, self.n + 1),
            'lambda': self.eigenvalues,
            'abs_lambda': np.abs(self.eigenvalues),
        })


def _sort_by_magnitude(values: np.ndarray, vectors: np.ndarray):
    order = np.argsort(-np.abs(values), kind='stable')
    return values[order], vectors[:, order], order


def _apply_columns(op: Operator, X: np.ndarray) -> np.ndarray:
    return np.column_stack([op(X[:, j]) for j in range(X.shape[1])]) if X.shape[1] else X.copy()


def _cholesky_qr(Y: np.ndarray, apply_precision: Operator) -> np.ndarray:
    """C^{-1} 内积下的 Cholesky QR，重复一次；秩亏时退化为特征值截断"""
    for _ in range(2):
        if Y.shape[1] == 0:
            break
        Z = _apply_columns(apply_precision, Y)
        G = Y.T @ Z
        G = 0.5 * (G + G.T)
        try:
            R = sla.cholesky(G, lower=False)
            if np.min(np.abs(np.diag(R))) <= 1e-10 * np.max(np.abs(np.diag(R))):
                raise np.linalg.LinAlgError("近奇异")
            Y = sla.solve_triangular(R, Y.T, trans='T', lower=False).T
        except np.linalg.LinAlgError:
            w, V = np.linalg.eigh(G)
            keep = w > 1e-12 * max(w.max(), 0.0)
            if keep.sum() < len(w):
                logger.warning("Gram 矩阵秩亏: 只保留 %d / %d 个方向", int(keep.sum()), len(w))
            Y = (Y @ V[:, keep]) / np.sqrt(w[keep])
    return Y


def randomized_gen_eig(hessian_action: Operator,
                       apply_cov: Operator,
                       apply_precision: Operator,
                       dim: int,
                       n_eig: int,
                       oversampling: int = 10,
                       rng: Optional[np.random.Generator] = None,
                       second_pass_action: Optional[Operator] = None) -> EigenPairs:
    """
    双遍随机化广义特征求解

    1. Ω ~ N(0, I)，Y = C(H Ω)
    2. C^{-1} 加权 QR，使 Qᵀ C^{-1} Q = I
    3. T = Qᵀ H Q = S Λ Sᵀ，ψ = Q S，取前 n_eig 个

    Args:
        hessian_action: 方向 -> 对偶向量
        apply_cov: 对偶 -> 原始
        apply_precision: 原始 -> 对偶
        dim: 参数维数
        n_eig: 需要的特征对个数 N
        oversampling: 过采样数 p
        rng: 随机数发生器
        second_pass_action: 第二遍使用的 Hessian 作用，可用于记录增量状态

    Returns:
        EigenPairs，Hessian 作用共调用 2(N+p) 次
    """
    if n_eig < 1:
        raise ConfigurationError(f"特征对个数必须至少为 1: {n_eig}")
    if oversampling < 0:
        raise ConfigurationError(f"过采样数不能为负: {oversampling}")
    rng = rng if rng is not None else np.random.default_rng()
    k = min(n_eig + oversampling, dim)

    omega = rng.standard_normal((dim, k))
    Y = _apply_columns(lambda x: apply_cov(hessian_action(x)), omega)
    Q = _cholesky_qr(Y, apply_precision)

    HQ = _apply_columns(second_pass_action or hessian_action, Q)
    T = Q.T @ HQ
    T = 0.5 * (T + T.T)
    lam, S = np.linalg.eigh(T)
    lam, S, _ = _sort_by_magnitude(lam, S)
    n = min(n_eig, len(lam))
    if n < n_eig:
        logger.warning("只得到 %d 个特征对（请求 %d 个）", n, n_eig)
    return EigenPairs(lam[:n], Q @ S[:, :n], oversampling, S[:, :n])


def dense_operator(action: Operator, dim: int) -> np.ndarray:
    """逐列调用算子得到稠密矩阵"""
    if dim > DENSE_LIMIT:
        raise ConfigurationError(f"稠密算子维数 {dim} 超过上限 {DENSE_LIMIT}")
    return _apply_columns(action, np.eye(dim))


def dense_gen_eig(hessian: np.ndarray, covariance: Optional[np.ndarray] = None,
                  precision: Optional[np.ndarray] = None) -> EigenPairs:
    """稠密广义特征分解 H ψ = λ C^{-1} ψ，用作小规模校验"""
    hessian = np.asarray(hessian, dtype=float)
    dim = hessian.shape[0]
    if dim > DENSE_LIMIT:
        raise ConfigurationError(f"稠密特征分解维数 {dim} 超过上限 {DENSE_LIMIT}")
    if precision is None:
        if covariance is None:
            raise ConfigurationError("需要给出协方差或精度矩阵")
        precision = np.linalg.inv(covariance)
    precision = 0.5 * (precision + precision.T)
    lam, V = sla.eigh(0.5 * (hessian + hessian.T), precision)
    lam, V, _ = _sort_by_magnitude(lam, V)
    return EigenPairs(lam, V)


def captured_trace_fraction(eigen: EigenPairs, reference: np.ndarray) -> float:
    """Σ_1^N |λ_n| / Σ_all |λ|"""
    total = np.abs(reference).sum()
    return float(np.abs(eigen.eigenvalues).sum() / total) if total > 0 else 1.0


def t2_moments(eigen: EigenPairs, g_bar: np.ndarray, apply_cov: Operator, q_bar: float) -> Tuple[float, float]:
    """
    二阶 Taylor 近似的均值与方差

    mean = Q̄ + ½ Σ λ_n，variance = ⟨ḡ, C ḡ⟩ + ½ Σ λ_n²
    """
    lam = eigen.eigenvalues
    mean = float(q_bar + 0.5 * lam.sum())
    variance = float(g_bar @ apply_cov(g_bar) + 0.5 * (lam ** 2).sum())
    return mean, variance


@dataclass
class ResidualStudy:
    """Taylor 残差的均方误差表（Q 与 q = (Q - Q(ζ̄))^2 各一行）"""
    q_values: np.ndarray
    t1_values: np.ndarray
    t2_values: np.ndarray
    q_bar: float
    rows: List[dict] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def _mse(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1) / len(x))


def taylor_residual_study(q_of_zeta: Callable[[np.ndarray], float],
                          zeta_bar: np.ndarray,
                          g_bar: np.ndarray,
                          hessian_action: Operator,
                          sample: Callable[[np.random.Generator], np.ndarray],
                          n_samples: int,
                          rng: np.random.Generator,
                          q_bar: Optional[float] = None,
                          label: str = '') -> ResidualStudy:
    """
    用 n_samples 个样本估计 Q̂ 以及 Q - T1Q、Q - T2Q 的均方误差

    MSE(X) = 样本方差 / 样本数；q 的 Taylor 近似取 (T_k Q - Q̄)^2。
    """
    if n_samples < 2:
        raise ConfigurationError(f"残差研究至少需要 2 个样本: {n_samples}")
    if q_bar is None:
        q_bar = float(q_of_zeta(zeta_bar))
    Q = np.empty(n_samples)
    T1 = np.empty(n_samples)
    T2 = np.empty(n_samples)
    for m in range(n_samples):
        zeta = sample(rng)
        d = zeta - zeta_bar
        Q[m] = q_of_zeta(zeta)
        T1[m] = q_bar + g_bar @ d
        T2[m] = T1[m] + 0.5 * (hessian_action(d) @ d)

    q = (Q - q_bar) ** 2
    q1 = (T1 - q_bar) ** 2
    q2 = (T2 - q_bar) ** 2
    rows = [
        {'quantity': 'Q', 'label': label, 'estimate': float(Q.mean()), 'mse': _mse(Q),
         'mse_t1': _mse(Q - T1), 'mse_t2': _mse(Q - T2)},
        {'quantity': 'q', 'label': label, 'estimate': float(q.mean()), 'mse': _mse(q),
         'mse_t1': _mse(q - q1), 'mse_t2': _mse(q - q2)},
    ]
    logger.info("Taylor 残差 %s: MSE(Q)=%.3e, MSE(Q-T1Q)=%.3e, MSE(Q-T2Q)=%.3e",
                label, rows[0]['mse'], rows[0]['mse_t1'], rows[0]['mse_t2'])
    return ResidualStudy(Q, T1, T2, q_bar, rows)
