"""
带圆形障碍物与斗篷环的方形计算域网格

区域标签: HOST 背景、CLOAK 斗篷环 r1 <= |x| <= r2、PML 吸收层。
"""
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List

import numpy as np
from scipy.spatial import Delaunay

from errors import ConfigurationError, MeshInvariantError

logger = logging.getLogger(__name__)


class Region(IntEnum):
    """三角形区域标签"""
    HOST = 0
    CLOAK = 1
    PML = 2


@dataclass(frozen=True)
class GeometrySpec:
    """
    方形计算域中心带圆形障碍物的几何描述

    Args:
        r1: 障碍物半径
        r2: 斗篷外半径
        l_half: 方形区域半宽
        w_pml: PML 层厚度
        h: 目标网格尺寸
    """
    r1: float = 1.0
    r2: float = 3.0
    l_half: float = 6.0
    w_pml: float = 1.0
    h: float = 0.25

    def validate(self) -> None:
        """
        检查几何参数

        Raises:
            ConfigurationError: 参数不满足 0 < r1 < r2 < l_half - w_pml，或斗篷环放不下一层单元
        """
        if self.h <= 0:
            raise ConfigurationError(f"网格尺寸必须为正: h={self.h}")
        if not (0 < self.r1 < self.r2 < self.l_half - self.w_pml):
            raise ConfigurationError(
                f"几何参数需满足 0 < r1 < r2 < l_half - w_pml: "
                f"r1={self.r1}, r2={self.r2}, l_half={self.l_half}, w_pml={self.w_pml}")
        if self.w_pml <= 0:
            raise ConfigurationError(f"PML 厚度必须为正: w_pml={self.w_pml}")
        # 斗篷环至少要能容纳一层单元
        if self.r2 - self.r1 < self.h:
            raise ConfigurationError(
                f"斗篷环宽度 {self.r2 - self.r1:g} 小于网格尺寸 h={self.h:g}")


@dataclass
class Mesh:
    """
    带区域标签的二维三角形网格，构造后视为只读

    vertices: (n, 2) 顶点坐标
    triangles: (T, 3) 逆时针顶点编号
    tags: (T,) Region 标签
    facets: (F, 2) 障碍物边界上的边
    normals: (F, 2) 边界单位法向，指向障碍物内部
    """
    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.tags = np.ascontiguousarray(self.tags, dtype=np.int64).reshape(-1)
        self.facets = np.ascontiguousarray(self.facets, dtype=np.int64).reshape(-1, 2)
        self.normals = np.ascontiguousarray(self.normals, dtype=float).reshape(-1, 2)
        self._cloak_vertices = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def signed_areas(self) -> np.ndarray:
        """有向面积，逆时针为正"""
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def cells(self, *regions: Region) -> np.ndarray:
        """返回属于给定区域的三角形编号"""
        return np.flatnonzero(np.isin(self.tags, [int(r) for r in regions]))

    @property
    def cloak_cells(self) -> np.ndarray:
        """P0 设计自由度对应的三角形"""
        return self.cells(Region.CLOAK)

    @property
    def cloak_vertices(self) -> np.ndarray:
        """P1 随机场自由度对应的顶点（含与 HOST 共享的顶点）"""
        if self._cloak_vertices is None:
            self._cloak_vertices = np.unique(self.triangles[self.cloak_cells].ravel())
        return self._cloak_vertices

    def cloak_dof_map(self) -> np.ndarray:
        """全局顶点编号到斗篷局部编号的映射，不在斗篷上的顶点为 -1"""
        dof_map = np.full(self.n_vertices, -1, dtype=np.int64)
        dof_map[self.cloak_vertices] = np.arange(len(self.cloak_vertices))
        return dof_map

    def summary(self) -> dict:
        """顶点数、单元数与各类自由度个数"""
        return {
            'vertices': self.n_vertices,
            'triangles': self.n_triangles,
            'state_dofs': 2 * self.n_vertices,
            'random_dofs': len(self.cloak_vertices),
            'design_dofs': len(self.cloak_cells),
            'obstacle_facets': len(self.facets),
        }


def validate_mesh(mesh: Mesh) -> Mesh:
    """检查网格不变量，违反时抛出 MeshInvariantError"""
    n = mesh.n_vertices
    if mesh.triangles.size and (mesh.triangles.min() < 0 or mesh.triangles.max() >= n):
        bad = int(np.flatnonzero(((mesh.triangles < 0) | (mesh.triangles >= n)).any(axis=1))[0])
        raise MeshInvariantError("顶点编号越界", triangle=bad)
    if len(mesh.tags) != mesh.n_triangles:
        raise MeshInvariantError(f"标签数 {len(mesh.tags)} 与三角形数 {mesh.n_triangles} 不一致")
    valid_tags = [int(r) for r in Region]
    bad_tag = np.flatnonzero(~np.isin(mesh.tags, valid_tags))
    if len(bad_tag):
        raise MeshInvariantError(f"未知区域标签 {mesh.tags[bad_tag[0]]}", triangle=int(bad_tag[0]))

    scale = max(float(np.ptp(mesh.vertices, axis=0).max()) if n else 1.0, 1.0)
    signed = mesh.signed_areas
    bad_area = np.flatnonzero(signed <= 1e-14 * scale ** 2)
    if len(bad_area):
        i = int(bad_area[0])
        raise MeshInvariantError(f"面积非正 ({signed[i]:.3e})", triangle=i)

    cloak_v = np.unique(mesh.triangles[mesh.tags == Region.CLOAK].ravel())
    pml_v = np.unique(mesh.triangles[mesh.tags == Region.PML].ravel())
    shared = np.intersect1d(cloak_v, pml_v)
    if len(shared):
        touching = np.flatnonzero((mesh.tags == Region.PML) & np.isin(mesh.triangles, shared).any(axis=1))
        raise MeshInvariantError("CLOAK 与 PML 区域相接触", triangle=int(touching[0]))

    if len(mesh.facets) != len(mesh.normals):
        raise MeshInvariantError("边界边数与法向数不一致")
    if len(mesh.facets):
        lengths = np.linalg.norm(mesh.normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-12):
            raise MeshInvariantError("障碍物边界法向不是单位向量")
        edge_count = _edge_counts(mesh.triangles)
        for a, b in mesh.facets:
            key = (min(a, b), max(a, b))
            if edge_count.get(key, 0) != 1:
                raise MeshInvariantError(f"边界边 ({a}, {b}) 不是恰好属于一个三角形")
    return mesh


def _edge_counts(triangles: np.ndarray) -> dict:
    edges = np.sort(triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    keys, counts = np.unique(edges, axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(keys, counts)}


def _ring_points(radius: float, h: float, offset: bool) -> np.ndarray:
    n_theta = max(8, int(math.ceil(2.0 * math.pi * radius / h)))
    step = 2.0 * math.pi / n_theta
    theta = np.arange(n_theta) * step + (0.5 * step if offset else 0.0)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def tag_by_centroid(centroids: np.ndarray, spec: GeometrySpec) -> np.ndarray:
    """按质心位置打区域标签，斗篷优先于 PML"""
    radius = np.linalg.norm(centroids, axis=1)
    tags = np.full(len(centroids), int(Region.HOST), dtype=np.int64)
    tags[np.abs(centroids).max(axis=1) >= spec.l_half - spec.w_pml] = int(Region.PML)
    tags[radius <= spec.r2] = int(Region.CLOAK)
    return tags


def build_disk_in_square(spec: GeometrySpec) -> Mesh:
    """
    生成带圆孔的方形区域三角网格

    斗篷环上布置同心圆周点，环外为规则方格点，再做 Delaunay 剖分并去掉孔内三角形。

    Args:
        spec: 几何参数

    Returns:
        满足全部不变量的 Mesh
    """
    spec.validate()
    h = spec.h

    n_rings = int(math.ceil((spec.r2 - spec.r1) / h))
    radii = np.linspace(spec.r1, spec.r2, n_rings + 1)
    rings = [_ring_points(r, h, offset=bool(j % 2)) for j, r in enumerate(radii)]
    n_hole = len(rings[0])

    # 方格间距取为 PML 厚度的整数分之一，使 PML 内边界落在格线上
    hs = spec.w_pml / math.ceil(spec.w_pml / h)
    n_grid = int(round(2.0 * spec.l_half / hs))
    axis = np.linspace(-spec.l_half, spec.l_half, n_grid + 1)
    gx, gy = np.meshgrid(axis, axis)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    grid = grid[np.linalg.norm(grid, axis=1) > spec.r2 + 0.5 * h]

    points = np.vstack(rings + [grid])
    triangles = Delaunay(points).simplices.astype(np.int64)

    on_hole = triangles < n_hole
    triangles = triangles[~on_hole.all(axis=1)]

    p = points[triangles]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = signed < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    # Delaunay 在共圆点上可能给出退化三角形
    keep = np.abs(signed) > 1e-12 * h * h
    triangles = triangles[keep]

    facets, normals = _hole_facets(points, triangles, n_hole)
    tags = tag_by_centroid(points[triangles].mean(axis=1), spec)

    mesh = validate_mesh(Mesh(points, triangles, tags, facets, normals))
    logger.info("生成网格: %s", mesh.summary())
    return mesh


def _hole_facets(points: np.ndarray, triangles: np.ndarray, n_hole: int):
    local = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    edges = np.sort(triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    keys, counts = np.unique(edges, axis=0, return_counts=True)
    boundary = {(int(a), int(b)) for (a, b), c in zip(keys, counts) if c == 1}

    facets, normals = [], []
    for tri in triangles:
        for i, j, k in local:
            a, b, c = int(tri[i]), int(tri[j]), int(tri[k])
            if a >= n_hole or b >= n_hole:
                continue
            if (min(a, b), max(a, b)) not in boundary:
                continue
            t = points[b] - points[a]
            n = np.array([t[1], -t[0]]) / np.hypot(t[0], t[1])
            if np.dot(n, points[c] - points[a]) > 0:
                n = -n
            facets.append((a, b))
            normals.append(n)
    facets = np.array(facets, dtype=np.int64).reshape(-1, 2)
    normals = np.array(normals, dtype=float).reshape(-1, 2)
    return facets, normals


def refine_uniform(mesh: Mesh) -> Mesh:
    """中点一分为四加密，标签与边界法向继承自父单元"""
    tri = mesh.triangles
    edges = np.sort(tri[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    keys, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[keys[:, 0]] + mesh.vertices[keys[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    mid = (inverse + n).reshape(-1, 3)
    m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    children = np.stack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    tags = np.repeat(mesh.tags, 4)

    edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(keys)}
    facets, normals = [], []
    for (a, b), nrm in zip(mesh.facets, mesh.normals):
        m = n + edge_index[(min(a, b), max(a, b))]
        facets.extend([(a, m), (m, b)])
        normals.extend([nrm, nrm])

    refined = Mesh(vertices, children, tags,
                   np.array(facets, dtype=np.int64).reshape(-1, 2),
                   np.array(normals, dtype=float).reshape(-1, 2))
    return validate_mesh(refined)


def build_mesh_hierarchy(spec: GeometrySpec, levels: int) -> List[Mesh]:
    """返回 levels 层逐次加密的网格，自由度约按 4 倍增长"""
    if levels < 1:
        raise ConfigurationError(f"网格层数必须至少为 1: {levels}")
    meshes = [build_disk_in_square(spec)]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    for level, m in enumerate(meshes, start=1):
        logger.info("mesh%d: %d 个顶点", level, m.n_vertices)
    return meshes


def hole_area(mesh: Mesh) -> float:
    """由边界边按多边形面积公式计算孔的面积"""
    if len(mesh.facets) == 0:
        return 0.0
    p = mesh.vertices[mesh.facets]
    # 法向指向孔内，按三角形逆时针方向的边围成的孔是顺时针的
    cross = p[:, 0, 0] * p[:, 1, 1] - p[:, 1, 0] * p[:, 0, 1]
    return abs(0.5 * float(cross.sum()))
