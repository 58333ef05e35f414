"""散射能量 Q、其状态导数以及稀疏惩罚 P"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
import scipy.sparse as sp

from errors import ConfigurationError
from fem.assembly import assemble_scalar_form
from helmholtz.problem import ComplexField, OBSERVATION_REGIONS
from mesh.builder import Mesh

logger = logging.getLogger(__name__)


class ObservationOperator:
    """观测区域上的质量矩阵，Q(u) = ∫(u1² + u2²)"""

    def __init__(self, mesh: Mesh, observation: str = 'host'):
        if observation not in OBSERVATION_REGIONS:
            raise ConfigurationError(f"未知的观测区域: {observation}")
        self.mesh = mesh
        self.observation = observation
        self.mass: sp.csr_matrix = assemble_scalar_form(mesh, OBSERVATION_REGIONS[observation], 1.0, 'mass')
        self.area = float(mesh.areas[mesh.cells(*OBSERVATION_REGIONS[observation])].sum())

    def energy(self, u: ComplexField) -> float:
        return float(u.u1 @ (self.mass @ u.u1) + u.u2 @ (self.mass @ u.u2))

    def apply(self, u: ComplexField) -> np.ndarray:
        """分块质量矩阵作用，返回堆叠向量"""
        return np.concatenate([self.mass @ u.u1, self.mass @ u.u2])

    def gradient(self, u: ComplexField) -> np.ndarray:
        return 2.0 * self.apply(u)

    def hessian_action(self, u_hat: ComplexField) -> np.ndarray:
        return 2.0 * self.apply(u_hat)

    def average(self, values: np.ndarray) -> float:
        """P1 标量场在观测区域上的平均值"""
        return float(np.sum(self.mass @ values) / self.area)


def scattered_energy(u: ComplexField, mesh: Mesh, observation: str = 'host') -> float:
    return ObservationOperator(mesh, observation).energy(u)


def q_state_gradient(u: ComplexField, observation: ObservationOperator) -> np.ndarray:
    """∂_u Q 作为堆叠对偶向量: 2 M̃ u"""
    return observation.gradient(u)


def q_state_hessian_action(u_hat: ComplexField, observation: ObservationOperator) -> np.ndarray:
    """∂_uu Q · û = 2 M̃ û"""
    return observation.hessian_action(u_hat)


def _check_eps(eps: float) -> None:
    if eps <= 0:
        raise ConfigurationError(f"惩罚光滑参数必须为正: eps={eps}")


def penalty(tau: np.ndarray, eps: float, areas: np.ndarray) -> float:
    """P(τ) = Σ area·(τ² + ε)^{1/2}"""
    _check_eps(eps)
    return float(np.sum(areas * np.sqrt(tau ** 2 + eps)))


def penalty_gradient(tau: np.ndarray, eps: float, areas: np.ndarray) -> np.ndarray:
    _check_eps(eps)
    return areas * tau / np.sqrt(tau ** 2 + eps)


def penalty_hessian_diag(tau: np.ndarray, eps: float, areas: np.ndarray) -> np.ndarray:
    _check_eps(eps)
    return areas * eps / (tau ** 2 + eps) ** 1.5


@dataclass
class ObjectiveBreakdown:
    """
    目标函数分解: total = Σ_i (mean_i + β_V·variance_i) + β_P·penalty
    """
    means: List[float]
    variances: List[float]
    penalty: float
    beta_v: float
    beta_p: float
    eps: float
    q_values: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(sum(self.means))

    @property
    def variance(self) -> float:
        return float(sum(self.variances))

    @property
    def total(self) -> float:
        return self.mean + self.beta_v * self.variance + self.beta_p * self.penalty

    def as_row(self) -> Dict[str, float]:
        row = {
            'objective': self.total,
            'mean': self.mean,
            'variance': self.variance,
            'penalty': self.penalty,
        }
        for i, q in enumerate(self.q_values):
            row[f'Q_{i}'] = q
        return row


def breakdown(means: Sequence[float], variances: Sequence[float], tau: np.ndarray, areas: np.ndarray,
              beta_v: float, beta_p: float, eps: float, q_values: Sequence[float]) -> ObjectiveBreakdown:
    return ObjectiveBreakdown(list(map(float, means)), list(map(float, variances)),
                              penalty(tau, eps, areas), beta_v, beta_p, eps, list(map(float, q_values)))
