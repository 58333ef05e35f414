"""
斗篷区域上的高斯随机场 N(ζ̄, C)，C = (-γΔ + δI)^{-2}

离散化: A_e = γK + δM（齐次 Neumann 边界），C = A_e^{-1} M A_e^{-1}。
梯度等对偶向量（已按质量加权）直接作为 apply_cov 的输入。
"""
import logging
from typing import Optional

import numpy as np
import scipy.sparse as sp

from errors import ConfigurationError, DimensionError
from fem.assembly import assemble_scalar_form
from fem.solver import factorize
from mesh.builder import Mesh, Region

logger = logging.getLogger(__name__)

# 参考单元质量矩阵 [[2,1,1],[1,2,1],[1,1,2]]/12 的 Cholesky 因子（乘以 sqrt(area) 后使用）
_LOCAL_MASS_CHOL = np.linalg.cholesky(np.array([[2.0, 1.0, 1.0],
                                                [1.0, 2.0, 1.0],
                                                [1.0, 1.0, 2.0]]) / 12.0)


class GaussianMeasure:
    """
    SPDE 型高斯测度，α 固定为 2

    Args:
        mesh: 网格，随机场自由度为斗篷单元的全部顶点
        gamma: 扩散系数 γ
        delta: 反应系数 δ
        alpha: 分数阶指数，只支持 2
        mean: 均值 ζ̄，默认 0
    """

    def __init__(self, mesh: Mesh, gamma: float = 10.0, delta: float = 50.0,
                 alpha: float = 2.0, mean: Optional[np.ndarray] = None):
        if alpha != 2:
            raise ConfigurationError(f"只支持 α = 2，收到 α = {alpha}")
        if gamma <= 0 or delta <= 0:
            raise ConfigurationError(f"γ 与 δ 必须为正: γ={gamma}, δ={delta}")
        self.mesh = mesh
        self.gamma = float(gamma)
        self.delta = float(delta)
        self.alpha = 2

        dof_map = mesh.cloak_dof_map()
        self.dim = len(mesh.cloak_vertices)
        cells = mesh.cells(Region.CLOAK)
        self.K = (assemble_scalar_form(mesh, Region.CLOAK, 1.0, 'stiffness_x1', dof_map, self.dim)
                  + assemble_scalar_form(mesh, Region.CLOAK, 1.0, 'stiffness_x2', dof_map, self.dim))
        self.M = assemble_scalar_form(mesh, Region.CLOAK, 1.0, 'mass', dof_map, self.dim)
        self.A = (self.gamma * self.K + self.delta * self.M).tocsc()
        self._A_lu = factorize(self.A, name='elliptic')
        self._M_lu = factorize(self.M, name='mass')

        # 白噪声因子 B (dim × 3Tc)，逐单元 Cholesky 拼接，B Bᵀ = M
        local = dof_map[mesh.triangles[cells]]
        areas = mesh.areas[cells]
        blocks = np.sqrt(areas)[:, None, None] * _LOCAL_MASS_CHOL[None, :, :]
        rows = np.repeat(local, 3, axis=1).ravel()
        cols = (3 * np.arange(len(cells))[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1).ravel()
        self.noise_factor = sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(self.dim, 3 * len(cells)))

        self.mean = np.zeros(self.dim) if mean is None else np.asarray(mean, dtype=float)
        self._check(self.mean)
        logger.info("高斯测度: %d 个自由度, γ=%g, δ=%g", self.dim, self.gamma, self.delta)

    @property
    def noise_dim(self) -> int:
        return self.noise_factor.shape[1]

    def _check(self, vec: np.ndarray) -> None:
        if len(vec) != self.dim:
            raise DimensionError(f"向量长度 {len(vec)} 与随机场自由度 {self.dim} 不一致")

    def sample_from_noise(self, xi: np.ndarray) -> np.ndarray:
        """ζ = ζ̄ + A_e^{-1} B ξ"""
        xi = np.asarray(xi, dtype=float)
        if len(xi) != self.noise_dim:
            raise DimensionError(f"噪声长度 {len(xi)} 应为 {self.noise_dim}")
        return self.mean + self._A_lu.solve(self.noise_factor @ xi)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_from_noise(rng.standard_normal(self.noise_dim))

    def samples(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n 个样本，形状 (n, dim)"""
        return np.array([self.sample(rng) for _ in range(n)]).reshape(n, self.dim)

    def apply_cov(self, w: np.ndarray) -> np.ndarray:
        """C w = A_e^{-1} M A_e^{-1} w，w 为对偶向量"""
        self._check(w)
        return self._A_lu.solve(self.M @ self._A_lu.solve(w))

    def apply_precision(self, v: np.ndarray) -> np.ndarray:
        """C^{-1} v = A_e M^{-1} A_e v"""
        self._check(v)
        return self.A @ self._M_lu.solve(self.A @ v)

    def covariance_matrix(self) -> np.ndarray:
        """稠密协方差矩阵，仅用于小规模校验"""
        Ainv = np.linalg.inv(self.A.toarray())
        return Ainv @ self.M.toarray() @ Ainv

    def precision_matrix(self) -> np.ndarray:
        A = self.A.toarray()
        return A @ np.linalg.solve(self.M.toarray(), A)
