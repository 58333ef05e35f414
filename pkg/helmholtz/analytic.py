"""声硬圆柱平面波散射的分波级数解，用于校验有限元求解器"""
import logging
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import h1vp, hankel1, jvp

from fem.assembly import assemble_scalar_form
from helmholtz.problem import ComplexField
from mesh.builder import Mesh, Region

logger = logging.getLogger(__name__)


def sound_hard_cylinder(points: np.ndarray, k: float, radius: float,
                        direction: Sequence[float] = (1.0, 0.0),
                        tol: float = 1e-12, max_order: int = 200) -> np.ndarray:
    """
    u_s = -Σ ε_n i^n (J_n'(ka)/H_n'(ka)) H_n(kr) cos(nθ)

    Args:
        points: (..., 2) 观测点，须在圆柱外
        k: 波数
        radius: 圆柱半径
        direction: 入射方向
        tol: 截断阈值，系数模小于 tol 且 n > ka 时停止

    Returns:
        复数散射场
    """
    points = np.asarray(points, dtype=float)
    b = np.asarray(direction, dtype=float)
    r = np.linalg.norm(points, axis=-1)
    theta = np.arctan2(points[..., 1], points[..., 0]) - np.arctan2(b[1], b[0])
    u = np.zeros(r.shape, dtype=complex)
    ka = k * radius
    for n in range(max_order + 1):
        coef = jvp(n, ka) / h1vp(n, ka)
        if n > ka and abs(coef) < tol:
            break
        eps_n = 1.0 if n == 0 else 2.0
        u -= eps_n * (1j ** n) * coef * hankel1(n, k * r) * np.cos(n * theta)
    else:
        logger.warning("分波级数在 %d 阶时仍未收敛", max_order)
    return u


def cylinder_reference(mesh: Mesh, k: float, radius: float,
                       direction: Sequence[float] = (1.0, 0.0)) -> ComplexField:
    """网格顶点上的解析散射场"""
    u = sound_hard_cylinder(mesh.vertices, k, radius, direction)
    return ComplexField(u.real.copy(), u.imag.copy())


def relative_l2_error(mesh: Mesh, field: ComplexField, reference: ComplexField,
                      region: Region = Region.HOST) -> float:
    """区域上的相对 L2 误差 ‖u - u_ref‖ / ‖u_ref‖"""
    M: sp.csr_matrix = assemble_scalar_form(mesh, region, 1.0, 'mass')
    diff = field - reference
    num = diff.u1 @ (M @ diff.u1) + diff.u2 @ (M @ diff.u2)
    den = reference.u1 @ (M @ reference.u1) + reference.u2 @ (M @ reference.u2)
    return float(np.sqrt(num / den))
