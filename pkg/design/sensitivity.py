"""
一阶与二阶伴随灵敏度

记 D_AF(u, v) = (u + u_inc)·v，pA(u, v) = u·v（逐求积点，实部虚部两分量求和），
在斗篷内 A(u, v) - F(v) 中依赖参数的部分为 -∫ k² D_AF(u, v)。
k² = k_i² exp(2(τ - ζ))，对 τ 的导数为 2k²，对 ζ 的导数为 -2k²，二阶导数均为 4k²。
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from design.objective import ObservationOperator, penalty_gradient, penalty_hessian_diag
from errors import ConfigurationError
from helmholtz.problem import ComplexField, MediumState
from helmholtz.system import HelmholtzSolver
from uncertainty.random_field import GaussianMeasure
from uncertainty.spectral import (EigenPairs, dense_gen_eig, dense_operator, randomized_gen_eig)

logger = logging.getLogger(__name__)

# 参数种类 -> k² 的一阶导数因子
SLOPE = {'tau': 2.0, 'zeta': -2.0}

Pair = Tuple[np.ndarray, np.ndarray]


class AdjointWorkspace:
    """
    固定 (τ, ζ, 源 i) 处的正向与伴随状态

    Args:
        solver: 带分解缓存的求解器
        observation: 观测算子
        medium: 介质状态
        i: 源编号
    """

    def __init__(self, solver: HelmholtzSolver, observation: ObservationOperator,
                 medium: MediumState, i: int):
        self.solver = solver
        self.observation = observation
        self.medium = medium
        self.i = i
        assembler = solver.assembler
        self.quad = assembler.cloak
        self.k2 = assembler.cloak_k2(medium, i)
        self.uinc = assembler.incident_quadrature(i)
        self.u = solver.solve_scattered(medium, i)
        self.q = observation.energy(self.u)
        self.u_q = self._interp(self.u)
        self.v: Optional[ComplexField] = None
        self.v_q: Optional[Pair] = None

    @property
    def counter(self):
        """所属求解器的计数器"""
        return self.solver.counter

    def _interp(self, f: ComplexField) -> Pair:
        return self.quad.interp(f.u1), self.quad.interp(f.u2)

    def _scatter_pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.concatenate([self.quad.scatter(a), self.quad.scatter(b)])

    def d_af(self, u_q: Pair, v_q: Pair) -> np.ndarray:
        """求积点上的 D_AF(u, v)，u 为散射场，加上入射场得到总场"""
        return (u_q[0] + self.uinc[0]) * v_q[0] + (u_q[1] + self.uinc[1]) * v_q[1]

    @staticmethod
    def p_a(u_q: Pair, v_q: Pair) -> np.ndarray:
        """求积点上的 pA(u, v)"""
        return u_q[0] * v_q[0] + u_q[1] * v_q[1]

    def solve_adjoint(self, weight: float = 1.0) -> ComplexField:
        """A^T V = -weight · 2 M̃ U"""
        rhs = -weight * self.observation.gradient(self.u)
        self.v = self.solver.solve(self.medium, self.i, rhs, transpose=True, category='adjoint')
        self.v_q = self._interp(self.v)
        return self.v

    def _require_adjoint(self) -> None:
        if self.v is None:
            self.solve_adjoint()

    def _reduce(self, kind: str, values_q: np.ndarray) -> np.ndarray:
        if kind == 'tau':
            return self.quad.cell_sum(values_q)
        return self.quad.scatter_local(values_q)

    def _direction_q(self, kind: str, d: np.ndarray) -> np.ndarray:
        if kind == 'tau':
            return np.repeat(np.asarray(d, dtype=float)[:, None], 3, axis=1)
        return self.quad.interp_local(np.asarray(d, dtype=float))

    def gradient(self, kind: str) -> np.ndarray:
        """Q 关于 τ 或 ζ 的梯度（对偶向量）"""
        self._require_adjoint()
        return -SLOPE[kind] * self._reduce(kind, self.k2 * self.d_af(self.u_q, self.v_q))

    def incremental(self, kind: str, d: np.ndarray) -> Tuple[ComplexField, ComplexField]:
        """增量正向与增量伴随状态 (û, v̂)"""
        self._require_adjoint()
        dk = SLOPE[kind] * self.k2 * self._direction_q(kind, d)
        rhs = self._scatter_pair(dk * (self.u_q[0] + self.uinc[0]), dk * (self.u_q[1] + self.uinc[1]))
        u_hat = self.solver.solve(self.medium, self.i, rhs, category='incremental_forward')
        rhs = (-self.observation.hessian_action(u_hat)
               + self._scatter_pair(dk * self.v_q[0], dk * self.v_q[1]))
        v_hat = self.solver.solve(self.medium, self.i, rhs, transpose=True, category='incremental_adjoint')
        return u_hat, v_hat

    def hessian_action(self, kind: str, d: np.ndarray,
                       incremental: Optional[Tuple[ComplexField, ComplexField]] = None) -> np.ndarray:
        """
        Q 关于 τ 或 ζ 的 Hessian 作用 H d（对偶向量）

        Args:
            kind: 'tau' 或 'zeta'
            d: 方向
            incremental: 已求得的 (û, v̂)，给出时不再求解增量方程

        Returns:
            逐求积点的 -s k² D_AF(u, v̂) - s k² pA(û, v) - 4 k² d D_AF(u, v) 归约到自由度上
        """
        self._require_adjoint()
        u_hat, v_hat = incremental if incremental is not None else self.incremental(kind, d)
        s = SLOPE[kind]
        uh_q, vh_q = self._interp(u_hat), self._interp(v_hat)
        d_q = self._direction_q(kind, d)
        values = (-s * self.k2 * self.d_af(self.u_q, vh_q)
                  - s * self.k2 * self.p_a(uh_q, self.v_q)
                  - 4.0 * self.k2 * d_q * self.d_af(self.u_q, self.v_q))
        self.counter.record('hessian_action')
        return self._reduce(kind, values)

    def zeta_gradient(self) -> np.ndarray:
        """ḡ = ∂Q/∂ζ"""
        return self.gradient('zeta')

    def zeta_incremental(self, zeta_hat: np.ndarray) -> Tuple[ComplexField, ComplexField]:
        return self.incremental('zeta', zeta_hat)

    def zeta_hessian_action(self, zeta_hat: np.ndarray,
                            incremental: Optional[Tuple[ComplexField, ComplexField]] = None) -> np.ndarray:
        return self.hessian_action('zeta', zeta_hat, incremental)

    def tau_gradient(self) -> np.ndarray:
        return self.gradient('tau')

    def tau_hessian_action(self, tau_hat: np.ndarray) -> np.ndarray:
        """τ-Hessian 作用，需要一对增量求解"""
        return self.hessian_action('tau', tau_hat)


def build_workspaces(solver: HelmholtzSolver, observation: ObservationOperator,
                     medium: MediumState, adjoint: bool = True) -> List[AdjointWorkspace]:
    """为每个源建立工作区"""
    workspaces = []
    for i in range(solver.problem.n_sources):
        ws = AdjointWorkspace(solver, observation, medium, i)
        if adjoint:
            ws.solve_adjoint()
        workspaces.append(ws)
    return workspaces


def zeta_gradient(solver: HelmholtzSolver, observation: ObservationOperator,
                  tau: np.ndarray, zeta_bar: np.ndarray, i: int = 0) -> np.ndarray:
    """ζ̄ 处 Q 关于随机场的梯度 ḡ"""
    ws = AdjointWorkspace(solver, observation, MediumState(tau, zeta_bar), i)
    return ws.zeta_gradient()


def zeta_hessian_action(workspace: AdjointWorkspace, zeta_hat: np.ndarray) -> np.ndarray:
    """H̄ ζ̂，结果为对偶向量"""
    return workspace.zeta_hessian_action(zeta_hat)


def _areas(solver: HelmholtzSolver) -> np.ndarray:
    mesh = solver.problem.mesh
    return mesh.areas[mesh.cloak_cells]


def tau_gradient_det(solver: HelmholtzSolver, observation: ObservationOperator,
                     tau: np.ndarray, zeta_bar: np.ndarray, beta_p: float, eps: float,
                     workspaces: Optional[List[AdjointWorkspace]] = None) -> np.ndarray:
    """确定性目标 Σ_i Q_i(τ, ζ̄) + β_P P(τ) 的梯度"""
    if workspaces is None:
        workspaces = build_workspaces(solver, observation, MediumState(tau, zeta_bar))
    grad = beta_p * penalty_gradient(tau, eps, _areas(solver))
    for ws in workspaces:
        grad = grad + ws.tau_gradient()
    return grad


def tau_hessian_action_det(workspaces: Sequence[AdjointWorkspace], tau_hat: np.ndarray,
                           tau: np.ndarray, beta_p: float, eps: float) -> np.ndarray:
    """确定性目标的 τ-Hessian 作用，每个源一对增量求解"""
    areas = workspaces[0].quad.areas if workspaces else None
    out = beta_p * penalty_hessian_diag(tau, eps, areas) * tau_hat
    for ws in workspaces:
        out = out + ws.tau_hessian_action(tau_hat)
    return out


def saa_weights(q_values: Sequence[float], beta_v: float) -> np.ndarray:
    """C_m = -(1/M)(1 + 2β_V Q_m - 2β_V Q̄)"""
    q = np.asarray(q_values, dtype=float)
    if len(q) < 1:
        raise ConfigurationError("SAA 至少需要一个样本")
    return -(1.0 + 2.0 * beta_v * q - 2.0 * beta_v * q.mean()) / len(q)


def saa_moments(q_values: Sequence[float]) -> Tuple[float, float]:
    """样本均值与（除以 M 的）样本方差"""
    q = np.asarray(q_values, dtype=float)
    return float(q.mean()), float(np.mean((q - q.mean()) ** 2))


def tau_gradient_saa(solver: HelmholtzSolver, observation: ObservationOperator,
                     tau: np.ndarray, samples: np.ndarray, beta_v: float, beta_p: float, eps: float,
                     workspaces: Optional[List[List[AdjointWorkspace]]] = None) -> np.ndarray:
    """
    SAA 目标的梯度，样本固定

    Args:
        samples: (M, dim) 随机场样本
        workspaces: 每个源每个样本上已求解正向问题的工作区（可选）
    """
    if workspaces is None:
        workspaces = [[AdjointWorkspace(solver, observation, MediumState(tau, z), i) for z in samples]
                      for i in range(solver.problem.n_sources)]
    grad = beta_p * penalty_gradient(tau, eps, _areas(solver))
    for per_source in workspaces:
        weights = saa_weights([ws.q for ws in per_source], beta_v)
        for ws, c in zip(per_source, weights):
            ws.solve_adjoint(weight=-c)
            grad = grad + ws.tau_gradient()
    return grad


@dataclass
class TaylorSourceState:
    """单个源在 (τ, ζ̄) 处的二阶 Taylor 近似所需量"""
    workspace: AdjointWorkspace
    g_bar: np.ndarray
    cov_g: np.ndarray
    eigen: EigenPairs
    incremental: List[Tuple[ComplexField, ComplexField]] = field(default_factory=list)

    @property
    def q_bar(self) -> float:
        return self.workspace.q

    @property
    def mean(self) -> float:
        """E_T2[Q] = Q̄ + ½ Σ λ"""
        return float(self.q_bar + 0.5 * self.eigen.eigenvalues.sum())

    @property
    def variance(self) -> float:
        """Var_T2[Q] = ⟨ḡ, Cḡ⟩ + ½ Σ λ²"""
        return float(self.g_bar @ self.cov_g + 0.5 * (self.eigen.eigenvalues ** 2).sum())


def _combine(records: List[Tuple[ComplexField, ComplexField]], coef: np.ndarray):
    out = []
    for n in range(coef.shape[1]):
        u1 = sum(c * r[0].u1 for c, r in zip(coef[:, n], records))
        u2 = sum(c * r[0].u2 for c, r in zip(coef[:, n], records))
        v1 = sum(c * r[1].u1 for c, r in zip(coef[:, n], records))
        v2 = sum(c * r[1].u2 for c, r in zip(coef[:, n], records))
        out.append((ComplexField(u1, u2), ComplexField(v1, v2)))
    return out


def taylor_source_state(workspace: AdjointWorkspace, measure: GaussianMeasure, n_eig: int,
                        oversampling: int = 10, rng: Optional[np.random.Generator] = None,
                        dense: bool = False) -> TaylorSourceState:
    """
    计算 ḡ、Cḡ 与 (H̄, C^{-1}) 的主特征对

    随机化求解时第二遍记录的增量状态按 ψ = Q S 线性组合复用，不再额外求解。
    """
    g_bar = workspace.zeta_gradient()
    cov_g = measure.apply_cov(g_bar)
    dim = measure.dim
    if n_eig == 0:
        eigen = EigenPairs(np.zeros(0), np.zeros((dim, 0)))
        return TaylorSourceState(workspace, g_bar, cov_g, eigen, [])

    if dense:
        H = dense_operator(workspace.zeta_hessian_action, dim)
        eigen = dense_gen_eig(H, precision=measure.precision_matrix()).truncated(n_eig)
        incremental = [workspace.zeta_incremental(eigen.eigenvectors[:, n]) for n in range(eigen.n)]
        return TaylorSourceState(workspace, g_bar, cov_g, eigen, incremental)

    records: List[Tuple[ComplexField, ComplexField]] = []

    def recording_action(d: np.ndarray) -> np.ndarray:
        pair = workspace.zeta_incremental(d)
        records.append(pair)
        return workspace.zeta_hessian_action(d, incremental=pair)

    eigen = randomized_gen_eig(workspace.zeta_hessian_action, measure.apply_cov, measure.apply_precision,
                               dim, n_eig, oversampling, rng, second_pass_action=recording_action)
    incremental = _combine(records, eigen.coefficients)
    return TaylorSourceState(workspace, g_bar, cov_g, eigen, incremental)


def _taylor_gradient_source(state: TaylorSourceState, beta_v: float) -> np.ndarray:
    ws = state.workspace
    quad, k2 = ws.quad, ws.k2
    solver, medium, i = ws.solver, ws.medium, ws.i
    lam = state.eigen.eigenvalues
    c = 0.5 * (1.0 + 2.0 * beta_v * lam)

    psi_q = [quad.interp_local(state.eigen.eigenvectors[:, n]) for n in range(state.eigen.n)]
    uh_q = [ws._interp(p[0]) for p in state.incremental]
    vh_q = [ws._interp(p[1]) for p in state.incremental]
    p_q = [(2.0 * cn * vh[0], 2.0 * cn * vh[1]) for cn, vh in zip(c, vh_q)]
    w_q = quad.interp_local(state.cov_g)

    zero = np.zeros_like(k2)
    coef = -4.0 * beta_v * w_q + 4.0 * sum((cn * ps ** 2 for cn, ps in zip(c, psi_q)), zero)

    # 𝔸U* = scatter(k²[-4Σ c_n ψ_n û_n + coef (u + u_inc)])
    star_u = [coef * (ws.u_q[d] + ws.uinc[d]) for d in range(2)]
    for cn, ps, uh in zip(c, psi_q, uh_q):
        star_u[0] = star_u[0] - 4.0 * cn * ps * uh[0]
        star_u[1] = star_u[1] - 4.0 * cn * ps * uh[1]
    u_star = solver.solve(medium, i, ws._scatter_pair(k2 * star_u[0], k2 * star_u[1]), category='star_forward')
    us_q = ws._interp(u_star)

    # 𝔸ᵀV* = -2M̃(u + u*) + scatter(k²[coef v - 2Σ ψ_n p_n])
    star_v = [coef * ws.v_q[d] for d in range(2)]
    for ps, pn in zip(psi_q, p_q):
        star_v[0] = star_v[0] - 2.0 * ps * pn[0]
        star_v[1] = star_v[1] - 2.0 * ps * pn[1]
    rhs = -ws.observation.gradient(ws.u + u_star) + ws._scatter_pair(k2 * star_v[0], k2 * star_v[1])
    v_star = solver.solve(medium, i, rhs, transpose=True, category='star_adjoint')
    vs_q = ws._interp(v_star)

    d_af_uv = ws.d_af(ws.u_q, ws.v_q)
    G = -coef * d_af_uv - ws.d_af(ws.u_q, vs_q) - ws.p_a(us_q, ws.v_q)
    for cn, ps, uh, pn in zip(c, psi_q, uh_q, p_q):
        G = G + 4.0 * cn * ps * ws.p_a(uh, ws.v_q) - ws.p_a(uh, pn) + 2.0 * ps * ws.d_af(ws.u_q, pn)
    return 2.0 * quad.cell_sum(k2 * G)


def tau_gradient_taylor(solver: HelmholtzSolver, observation: ObservationOperator,
                        tau: np.ndarray, measure: GaussianMeasure, eigen: Optional[Sequence[EigenPairs]],
                        beta_v: float, beta_p: float, eps: float,
                        states: Optional[Sequence[TaylorSourceState]] = None) -> np.ndarray:
    """
    J_T2 = Σ_i (Q̄_i + ½Σλ + β_V(⟨ḡ, Cḡ⟩ + ½Σλ²)) + β_P P 的 τ-梯度

    特征对须在当前 τ 处计算；给出 states 时复用其中的状态与增量解，
    否则按 eigen 为每个特征向量补算一对增量求解。
    """
    if states is None:
        if eigen is None:
            raise ConfigurationError("需要给出特征对或已计算的 Taylor 状态")
        states = []
        for i, pairs in enumerate(eigen):
            ws = AdjointWorkspace(solver, observation, MediumState(tau, measure.mean), i)
            g_bar = ws.zeta_gradient()
            incremental = [ws.zeta_incremental(pairs.eigenvectors[:, n]) for n in range(pairs.n)]
            states.append(TaylorSourceState(ws, g_bar, measure.apply_cov(g_bar), pairs, incremental))
    grad = beta_p * penalty_gradient(tau, eps, _areas(solver))
    for state in states:
        grad = grad + _taylor_gradient_source(state, beta_v)
    return grad


def finite_difference_check(fun: Callable[[np.ndarray], float], x: np.ndarray, direction: np.ndarray,
                            analytic: float, steps: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5)) -> pd.DataFrame:
    """
    中心差分检验 ⟨∇f(x), d⟩

    Returns:
        每个步长一行: h, fd, analytic, rel_error, order
    """
    rows = []
    for h in steps:
        fd = (fun(x + h * direction) - fun(x - h * direction)) / (2.0 * h)
        err = abs(fd - analytic) / max(abs(analytic), 1e-300)
        rows.append({'h': h, 'fd': fd, 'analytic': analytic, 'rel_error': err})
    frame = pd.DataFrame(rows)
    frame['order'] = np.log(frame['rel_error'] / frame['rel_error'].shift(1)) / np.log(frame['h'] / frame['h'].shift(1))
    logger.debug("差分检验:\n%s", frame.to_string())
    return frame
