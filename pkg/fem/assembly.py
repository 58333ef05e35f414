"""
P1/P0 有限元组装

体积分统一使用三边中点求积（对二次多项式精确），权重为 area/3。
"""
import logging
from typing import Callable, Iterable, Optional, Union

import numpy as np
import scipy.sparse as sp

from errors import DimensionError, DomainError, EmptyOperatorError
from mesh.builder import Mesh, Region

logger = logging.getLogger(__name__)

# PHI[q, i]: 第 i 个基函数在第 q 个求积点（边 (q, q+1) 的中点）处的值
PHI = np.array([[0.5, 0.5, 0.0],
                [0.0, 0.5, 0.5],
                [0.5, 0.0, 0.5]])

KINDS = ('mass', 'stiffness_x1', 'stiffness_x2')

RegionFilter = Union[None, Region, Iterable[Region], np.ndarray]
Coefficient = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def select_cells(mesh: Mesh, region: RegionFilter = None) -> np.ndarray:
    """把区域筛选条件转换为三角形编号数组"""
    if region is None:
        return np.arange(mesh.n_triangles)
    if isinstance(region, Region):
        return mesh.cells(region)
    region = np.asarray(list(region) if not isinstance(region, np.ndarray) else region)
    if region.dtype == bool:
        if len(region) != mesh.n_triangles:
            raise DimensionError(f"区域掩码长度 {len(region)} 与三角形数 {mesh.n_triangles} 不一致")
        return np.flatnonzero(region)
    return mesh.cells(*[Region(int(r)) for r in region])


def element_gradients(mesh: Mesh, cells: np.ndarray):
    """
    计算 P1 基函数梯度

    Returns:
        (grads, areas)，grads 形状为 (Tc, 3, 2)
    """
    p = mesh.vertices[mesh.triangles[cells]]
    x, y = p[..., 0], p[..., 1]
    signed = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    grads = np.empty((len(cells), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = (y[:, j] - y[:, k]) / (2.0 * signed)
        grads[:, i, 1] = (x[:, k] - x[:, j]) / (2.0 * signed)
    return grads, np.abs(signed)


def quadrature_points(mesh: Mesh, cells: np.ndarray) -> np.ndarray:
    """求积点坐标，形状 (Tc, 3, 2)"""
    return np.einsum('qi,tid->tqd', PHI, mesh.vertices[mesh.triangles[cells]])


def coefficient_at_quadrature(coefficient: Coefficient, mesh: Mesh, cells: np.ndarray) -> np.ndarray:
    """
    把系数统一转换为求积点上的取值

    支持标量、单元常数（全网格或所选单元）、求积点数组以及坐标函数。
    """
    n_cells = len(cells)
    if callable(coefficient):
        values = np.asarray(coefficient(quadrature_points(mesh, cells)), dtype=float)
        return np.broadcast_to(values, (n_cells, 3)).copy()
    values = np.asarray(coefficient, dtype=float)
    if values.ndim == 0:
        return np.full((n_cells, 3), float(values))
    if values.ndim == 1:
        if len(values) == n_cells:
            return np.repeat(values[:, None], 3, axis=1)
        if len(values) == mesh.n_triangles:
            return np.repeat(values[cells][:, None], 3, axis=1)
    if values.ndim == 2 and values.shape[1] == 3:
        if len(values) == n_cells:
            return values
        if len(values) == mesh.n_triangles:
            return values[cells]
    raise DimensionError(f"系数形状 {values.shape} 与所选 {n_cells} 个单元不匹配")


def assemble_scalar_form(mesh: Mesh,
                         region: RegionFilter = None,
                         coefficient: Coefficient = 1.0,
                         kind: str = 'mass',
                         dof_map: Optional[np.ndarray] = None,
                         n_dofs: Optional[int] = None) -> sp.csr_matrix:
    """
    组装带变系数的 P1 质量/单方向刚度矩阵

    Args:
        mesh: 网格
        region: 区域筛选，None 表示全部三角形
        coefficient: 系数
        kind: 'mass'、'stiffness_x1' 或 'stiffness_x2'
        dof_map: 顶点到自由度的映射（-1 表示不参与），默认使用全部顶点
        n_dofs: 自由度总数

    Returns:
        对称稀疏矩阵
    """
    if kind not in KINDS:
        raise ValueError(f"未知的组装类型: {kind}")
    cells = select_cells(mesh, region)
    if len(cells) == 0:
        raise EmptyOperatorError(f"区域筛选 {region!r} 没有选中任何三角形")

    coef = coefficient_at_quadrature(coefficient, mesh, cells)
    grads, areas = element_gradients(mesh, cells)
    weights = coef * (areas[:, None] / 3.0)

    if kind == 'mass':
        local = np.einsum('tq,qi,qj->tij', weights, PHI, PHI)
    else:
        d = 0 if kind == 'stiffness_x1' else 1
        g = grads[:, :, d]
        local = weights.sum(axis=1)[:, None, None] * g[:, :, None] * g[:, None, :]

    tri = mesh.triangles[cells]
    if dof_map is not None:
        tri = dof_map[tri]
        if np.any(tri < 0):
            raise DimensionError("自由度映射未覆盖所选单元的全部顶点")
    size = n_dofs if n_dofs is not None else (int(dof_map.max()) + 1 if dof_map is not None else mesh.n_vertices)

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    op = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)).tocsr()
    op.sum_duplicates()
    # 求和顺序可能使 (i,j) 与 (j,i) 相差一个舍入误差
    op = ((op + op.T) * 0.5).tocsr()
    op.eliminate_zeros()
    return op


class RegionQuadrature:
    """
    某一区域上的求积工具：插值到求积点、按基函数回散、单元求和

    sensitivity 中的导数形式都由这三个操作拼出。
    """

    def __init__(self, mesh: Mesh, region: RegionFilter = Region.CLOAK,
                 dof_map: Optional[np.ndarray] = None):
        self.mesh = mesh
        self.cells = select_cells(mesh, region)
        if len(self.cells) == 0:
            raise EmptyOperatorError(f"区域筛选 {region!r} 没有选中任何三角形")
        self.triangles = mesh.triangles[self.cells]
        self.areas = mesh.areas[self.cells]
        self.weights = np.repeat(self.areas[:, None] / 3.0, 3, axis=1)
        self.points = quadrature_points(mesh, self.cells)
        if dof_map is not None:
            self.local_triangles = dof_map[self.triangles]
            self.n_local = int(dof_map.max()) + 1
        else:
            self.local_triangles = None
            self.n_local = 0

    def interp(self, values: np.ndarray) -> np.ndarray:
        """全局 P1 向量在求积点上的值 (Tc, 3)"""
        return values[self.triangles] @ PHI.T

    def interp_local(self, values: np.ndarray) -> np.ndarray:
        """局部 P1 向量（例如斗篷上的随机场）在求积点上的值"""
        return values[self.local_triangles] @ PHI.T

    def _tested(self, values_q: np.ndarray) -> np.ndarray:
        return (self.weights * values_q) @ PHI

    def scatter(self, values_q: np.ndarray) -> np.ndarray:
        """∫ f φ_i，结果为全局顶点长度的对偶向量"""
        return np.bincount(self.triangles.ravel(), weights=self._tested(values_q).ravel(),
                           minlength=self.mesh.n_vertices)

    def scatter_local(self, values_q: np.ndarray) -> np.ndarray:
        """∫ f φ_i，结果为局部自由度长度的对偶向量"""
        return np.bincount(self.local_triangles.ravel(), weights=self._tested(values_q).ravel(),
                           minlength=self.n_local)

    def cell_sum(self, values_q: np.ndarray) -> np.ndarray:
        """每个单元上的 ∫ f"""
        return (self.weights * values_q).sum(axis=1)


def quadrature_eval(mesh: Mesh, values: np.ndarray, triangle: int, point) -> float:
    """
    在三角形内一点用重心坐标插值 P1 函数

    Args:
        mesh: 网格
        values: 顶点值
        triangle: 三角形编号
        point: 坐标 (x, y)

    Returns:
        插值结果
    """
    if len(values) != mesh.n_vertices:
        raise DimensionError(f"向量长度 {len(values)} 与顶点数 {mesh.n_vertices} 不一致")
    idx = mesh.triangles[triangle]
    p = mesh.vertices[idx]
    T = np.column_stack([p[1] - p[0], p[2] - p[0]])
    l12 = np.linalg.solve(T, np.asarray(point, dtype=float) - p[0])
    bary = np.array([1.0 - l12.sum(), l12[0], l12[1]])
    if np.any(bary < -1e-12):
        raise DomainError(f"点 {tuple(point)} 不在三角形 {triangle} 内")
    return float(bary @ np.asarray(values)[idx])
