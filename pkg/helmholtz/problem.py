import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, DimensionError
from mesh.builder import Mesh, Region

logger = logging.getLogger(__name__)

OBSERVATION_REGIONS = {
    'host': (Region.HOST,),
    'host_pml': (Region.HOST, Region.PML),
}


@dataclass(frozen=True)
class Source:
    """平面入射波 e^{i k x·b}，k = k0 * frequency_factor"""
    direction: Tuple[float, float] = (1.0, 0.0)
    frequency_factor: float = 1.0

    def wavenumber(self, k0: float) -> float:
        return k0 * self.frequency_factor


@dataclass
class ScatteringProblem:
    """
    PML 截断的声学散射问题

    Args:
        mesh: 计算网格
        k0: 背景波数 ω/c0
        sources: 入射方向与频率因子列表
        c0: 背景声速
        sigma0: PML 吸收幅值，默认 2*k0
        observation: 观测区域，'host' 或 'host_pml'
        pml_start: PML 起点 x_start，默认由网格上的 PML 单元推断
    """
    mesh: Mesh
    k0: float = 2.0 * np.pi
    sources: List[Source] = field(default_factory=lambda: [Source()])
    c0: float = 1.0
    sigma0: Optional[float] = None
    observation: str = 'host'
    pml_start: Optional[float] = None

    def __post_init__(self):
        if self.k0 <= 0:
            raise ConfigurationError(f"波数必须为正: k0={self.k0}")
        if not self.sources:
            raise ConfigurationError("至少需要一个入射源")
        for s in self.sources:
            if abs(np.hypot(*s.direction) - 1.0) > 1e-12:
                raise ConfigurationError(f"入射方向必须为单位向量: {s.direction}")
            if s.frequency_factor <= 0:
                raise ConfigurationError(f"频率因子必须为正: {s.frequency_factor}")
        if self.observation not in OBSERVATION_REGIONS:
            raise ConfigurationError(f"未知的观测区域: {self.observation}")
        if self.sigma0 is None:
            self.sigma0 = 2.0 * self.k0
        if self.sigma0 < 0:
            raise ConfigurationError(f"PML 幅值不能为负: sigma0={self.sigma0}")
        # 未给出 pml_start 时由网格上的 PML 单元推断起点
        pml = self.mesh.cells(Region.PML)
        extent = np.abs(self.mesh.vertices).max(axis=0)
        self.l_half = float(extent.max()) if self.mesh.n_vertices else 0.0
        if self.pml_start is not None:
            self.x_start = float(self.pml_start)
        elif len(pml):
            inner = self.mesh.cells(Region.HOST, Region.CLOAK)
            inner_extent = np.abs(self.mesh.vertices[np.unique(self.mesh.triangles[inner])]).max() if len(inner) else 0.0
            self.x_start = float(inner_extent)
        else:
            self.x_start = self.l_half
        self.w_pml = self.l_half - self.x_start

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    def wavenumber(self, i: int) -> float:
        return self.sources[i].wavenumber(self.k0)

    def observation_regions(self) -> Tuple[Region, ...]:
        return OBSERVATION_REGIONS[self.observation]


@dataclass
class MediumState:
    """
    设计场 tau（斗篷单元上的 P0）与随机场 zeta（斗篷顶点上的 P1）

    斗篷内 k^2 = k_i^2 exp(2(tau - zeta))，其余区域 k^2 = k_i^2。
    """
    tau: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)

    @classmethod
    def homogeneous(cls, mesh: Mesh) -> 'MediumState':
        return cls(np.zeros(len(mesh.cloak_cells)), np.zeros(len(mesh.cloak_vertices)))

    def check(self, mesh: Mesh) -> None:
        if len(self.tau) != len(mesh.cloak_cells):
            raise DimensionError(f"设计场长度 {len(self.tau)} 与斗篷单元数 {len(mesh.cloak_cells)} 不一致")
        if len(self.zeta) != len(mesh.cloak_vertices):
            raise DimensionError(f"随机场长度 {len(self.zeta)} 与斗篷顶点数 {len(mesh.cloak_vertices)} 不一致")

    def digest(self) -> Tuple[str, str]:
        return (hashlib.sha1(np.ascontiguousarray(self.tau).tobytes()).hexdigest(),
                hashlib.sha1(np.ascontiguousarray(self.zeta).tobytes()).hexdigest())


@dataclass
class ComplexField:
    """复值 P1 场 u = u1 + i u2"""
    u1: np.ndarray
    u2: np.ndarray

    @classmethod
    def from_stacked(cls, vec: np.ndarray) -> 'ComplexField':
        n = len(vec) // 2
        return cls(np.array(vec[:n]), np.array(vec[n:]))

    @classmethod
    def zeros(cls, n: int) -> 'ComplexField':
        return cls(np.zeros(n), np.zeros(n))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u1, self.u2])

    def complex(self) -> np.ndarray:
        return self.u1 + 1j * self.u2

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u1, self.u2)

    def __add__(self, other: 'ComplexField') -> 'ComplexField':
        return ComplexField(self.u1 + other.u1, self.u2 + other.u2)

    def __sub__(self, other: 'ComplexField') -> 'ComplexField':
        return ComplexField(self.u1 - other.u1, self.u2 - other.u2)

    def scaled(self, alpha: float) -> 'ComplexField':
        return ComplexField(alpha * self.u1, alpha * self.u2)


@dataclass
class PmlCoefficients:
    """拉伸 s_d = 1 + i σ_d / k 后弱形式中的实系数"""
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


def pml_sigma(points: np.ndarray, problem: ScatteringProblem) -> Tuple[np.ndarray, np.ndarray]:
    """
    二次型 PML 吸收剖面

    Args:
        points: (..., 2) 坐标
        problem: 散射问题

    Returns:
        (σ_x1, σ_x2)，在 PML 内边界处连续为 0
    """
    points = np.asarray(points, dtype=float)
    if problem.w_pml <= 0:
        zero = np.zeros(points.shape[:-1])
        return zero, zero.copy()
    depth = np.clip(np.abs(points) - problem.x_start, 0.0, None) / problem.w_pml
    sigma = problem.sigma0 * depth ** 2
    return sigma[..., 0], sigma[..., 1]


def pml_coefficients(k: float, sigma1: np.ndarray, sigma2: np.ndarray) -> PmlCoefficients:
    k2 = k * k
    return PmlCoefficients(
        a1=(k2 + sigma1 * sigma2) / (k2 + sigma1 ** 2),
        a2=k * (sigma2 - sigma1) / (k2 + sigma1 ** 2),
        a3=(k2 + sigma1 * sigma2) / (k2 + sigma2 ** 2),
        a4=k * (sigma1 - sigma2) / (k2 + sigma2 ** 2),
        b1=k2 - sigma1 * sigma2,
        b2=k * (sigma1 + sigma2),
    )


def incident_field(points: np.ndarray, k: float, direction: Sequence[float]):
    """
    入射平面波实部、虚部及其梯度

    Returns:
        (uinc1, uinc2, grad1, grad2)，grad 形状为 points.shape
    """
    points = np.asarray(points, dtype=float)
    b = np.asarray(direction, dtype=float)
    phase = k * (points @ b)
    c, s = np.cos(phase), np.sin(phase)
    grad1 = -k * s[..., None] * b
    grad2 = k * c[..., None] * b
    return c, s, grad1, grad2


def incident_at_vertices(problem: ScatteringProblem, i: int) -> ComplexField:
    src = problem.sources[i]
    u1, u2, _, _ = incident_field(problem.mesh.vertices, problem.wavenumber(i), src.direction)
    return ComplexField(u1, u2)
