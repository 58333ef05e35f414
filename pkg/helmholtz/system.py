"""
PML Helmholtz 方程的实值 2N×2N 分块离散

复矩阵 K_c = R + iS 写成 [[R, -S], [S, R]]，其中
R = K1[a1] + K2[a3] - M[b1]，S = K1[a2] + K2[a4] - M[b2]。
斗篷内 b1 = k^2 依赖于 (tau, zeta)，其余系数只依赖频率。
"""
import logging
from collections import OrderedDict
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from errors import DimensionError
from fem.assembly import RegionQuadrature, assemble_scalar_form, quadrature_points
from fem.solver import Factorization, SolveCounter, factorize
from helmholtz.problem import (ComplexField, MediumState, ScatteringProblem, incident_field,
                               pml_coefficients, pml_sigma)
from mesh.builder import Region

logger = logging.getLogger(__name__)

GAUSS_2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class HelmholtzAssembler:
    """缓存与介质无关的部分，按需组装系统矩阵与右端项"""

    def __init__(self, problem: ScatteringProblem):
        self.problem = problem
        mesh = problem.mesh
        self.n = mesh.n_vertices
        self.cloak: Optional[RegionQuadrature] = None
        if len(mesh.cloak_cells):
            self.cloak = RegionQuadrature(mesh, Region.CLOAK, dof_map=mesh.cloak_dof_map())
        self._base: Dict[float, Tuple[sp.csr_matrix, sp.csr_matrix]] = {}
        self._incident: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def _base_blocks(self, factor: float) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
        if factor in self._base:
            return self._base[factor]
        mesh = self.problem.mesh
        k = self.problem.k0 * factor
        sigma1, sigma2 = pml_sigma(quadrature_points(mesh, np.arange(mesh.n_triangles)), self.problem)
        c = pml_coefficients(k, sigma1, sigma2)

        outside = mesh.tags != Region.CLOAK
        R = (assemble_scalar_form(mesh, None, c.a1, 'stiffness_x1')
             + assemble_scalar_form(mesh, None, c.a3, 'stiffness_x2')
             - assemble_scalar_form(mesh, outside, c.b1, 'mass'))
        S = (assemble_scalar_form(mesh, None, c.a2, 'stiffness_x1')
             + assemble_scalar_form(mesh, None, c.a4, 'stiffness_x2')
             - assemble_scalar_form(mesh, None, c.b2, 'mass'))
        self._base[factor] = (R.tocsr(), S.tocsr())
        logger.debug("组装频率因子 %.4g 的背景分块", factor)
        return self._base[factor]

    def cloak_k2(self, medium: MediumState, i: int) -> np.ndarray:
        """斗篷求积点上的 k^2，形状 (Tc, 3)"""
        k = self.problem.wavenumber(i)
        zeta_q = self.cloak.interp_local(medium.zeta)
        return k * k * np.exp(2.0 * (medium.tau[:, None] - zeta_q))

    def incident_quadrature(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """斗篷求积点上的入射场 (uinc1, uinc2)"""
        if i not in self._incident:
            src = self.problem.sources[i]
            u1, u2, _, _ = incident_field(self.cloak.points, self.problem.wavenumber(i), src.direction)
            self._incident[i] = (u1, u2)
        return self._incident[i]

    def cloak_mass(self, coefficient_q: np.ndarray) -> sp.csr_matrix:
        return assemble_scalar_form(self.problem.mesh, Region.CLOAK, coefficient_q, 'mass')

    def system(self, medium: MediumState, i: int) -> sp.csr_matrix:
        medium.check(self.problem.mesh)
        R0, S = self._base_blocks(self.problem.sources[i].frequency_factor)
        R = R0
        if self.cloak is not None:
            R = R0 - self.cloak_mass(self.cloak_k2(medium, i))
        return sp.bmat([[R, -S], [S, R]], format='csc')

    def load(self, medium: MediumState, i: int) -> np.ndarray:
        medium.check(self.problem.mesh)
        mesh = self.problem.mesh
        k = self.problem.wavenumber(i)
        src = self.problem.sources[i]
        F1 = np.zeros(self.n)
        F2 = np.zeros(self.n)

        if self.cloak is not None:
            contrast = self.cloak_k2(medium, i) - k * k
            u1q, u2q = self.incident_quadrature(i)
            F1 += self.cloak.scatter(contrast * u1q)
            F2 += self.cloak.scatter(contrast * u2q)

        if len(mesh.facets):
            pa = mesh.vertices[mesh.facets[:, 0]]
            pb = mesh.vertices[mesh.facets[:, 1]]
            length = np.linalg.norm(pb - pa, axis=1)
            for t in GAUSS_2:
                x = (1.0 - t) * pa + t * pb
                _, _, g1, g2 = incident_field(x, k, src.direction)
                w = 0.5 * length
                # -∫ ∇u_inc·n v，n 指向障碍物内部
                flux1 = -np.einsum('fd,fd->f', g1, mesh.normals) * w
                flux2 = -np.einsum('fd,fd->f', g2, mesh.normals) * w
                for col, phi in ((0, 1.0 - t), (1, t)):
                    np.add.at(F1, mesh.facets[:, col], flux1 * phi)
                    np.add.at(F2, mesh.facets[:, col], flux2 * phi)
        return np.concatenate([F1, F2])


def assemble_system(problem: ScatteringProblem, medium: MediumState, i: int) -> sp.csc_matrix:
    """组装第 i 个源的 2N×2N 分块系统矩阵"""
    return HelmholtzAssembler(problem).system(medium, i)


def assemble_load(problem: ScatteringProblem, medium: MediumState, i: int) -> np.ndarray:
    """组装第 i 个源的右端项，求解后得到散射场"""
    return HelmholtzAssembler(problem).load(medium, i)


class HelmholtzSolver:
    """
    带分解缓存的 Helmholtz 求解器

    缓存键为 (tau 摘要, zeta 摘要, 频率因子)；同频率不同入射方向共用一个分解，
    伴随与增量方程复用同一分解（转置求解）。
    """

    def __init__(self, problem: ScatteringProblem, counter: Optional[SolveCounter] = None,
                 cache_size: int = 8):
        self.problem = problem
        self.assembler = HelmholtzAssembler(problem)
        self.counter = counter if counter is not None else SolveCounter()
        self.cache_size = cache_size
        self._cache: 'OrderedDict[tuple, Factorization]' = OrderedDict()

    @property
    def n_dofs(self) -> int:
        return 2 * self.problem.mesh.n_vertices

    def factorization(self, medium: MediumState, i: int) -> Factorization:
        key = medium.digest() + (self.problem.sources[i].frequency_factor,)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        f = factorize(self.assembler.system(medium, i), name=f"source{i}", counter=self.counter)
        self._cache[key] = f
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return f

    def solve(self, medium: MediumState, i: int, rhs: np.ndarray, transpose: bool = False,
              category: str = 'forward') -> ComplexField:
        if len(rhs) != self.n_dofs:
            raise DimensionError(f"右端项长度 {len(rhs)} 与状态自由度 {self.n_dofs} 不一致")
        f = self.factorization(medium, i)
        self.counter.record(category)
        return ComplexField.from_stacked(f.solve(rhs, transpose=transpose))

    def solve_scattered(self, medium: MediumState, i: int) -> ComplexField:
        return self.solve(medium, i, self.assembler.load(medium, i), category='forward')


def solve_scattered(problem: ScatteringProblem, medium: MediumState, i: int) -> ComplexField:
    """求解第 i 个源的散射场"""
    return HelmholtzSolver(problem).solve_scattered(medium, i)
