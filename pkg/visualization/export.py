"""
场、设计与特征值的文件导出

所有浮点数按 %.12e 固定格式写出，同一配置与种子重复运行得到逐字节相同的文件。
"""
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd

from errors import DimensionError
from helmholtz.problem import ComplexField
from mesh.builder import Mesh
from uncertainty.spectral import EigenPairs

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12e'
PathLike = Union[str, Path]


def _fmt(x: float) -> str:
    return FLOAT_FORMAT % x


def field_point_data(field: ComplexField, prefix: str = '') -> Dict[str, np.ndarray]:
    return {f'{prefix}u1': field.u1, f'{prefix}u2': field.u2, f'{prefix}abs_u': field.magnitude}


def design_on_cells(mesh: Mesh, tau: np.ndarray) -> np.ndarray:
    """斗篷单元上的 τ 扩展到全部单元，其余单元为 0"""
    tau = np.asarray(tau, dtype=float)
    if len(tau) != len(mesh.cloak_cells):
        raise DimensionError(f"设计场长度 {len(tau)} 与斗篷单元数 {len(mesh.cloak_cells)} 不一致")
    full = np.zeros(mesh.n_triangles)
    full[mesh.cloak_cells] = tau
    return full


def write_vtk(mesh: Mesh, path: PathLike, point_data: Optional[Mapping[str, np.ndarray]] = None,
              cell_data: Optional[Mapping[str, np.ndarray]] = None, title: str = 'cloak-design') -> Path:
    """
    写出 legacy ASCII VTK 非结构网格

    Args:
        mesh: 网格
        path: 输出路径
        point_data: 顶点标量场
        cell_data: 单元标量场（长度为全部单元数）
        title: 文件标题行
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ['# vtk DataFile Version 3.0', title, 'ASCII', 'DATASET UNSTRUCTURED_GRID',
             f'POINTS {nv} double']
    lines += [f'{_fmt(x)} {_fmt(y)} {_fmt(0.0)}' for x, y in mesh.vertices]
    lines.append(f'CELLS {nt} {4 * nt}')
    lines += [f'3 {a} {b} {c}' for a, b, c in mesh.triangles]
    lines.append(f'CELL_TYPES {nt}')
    lines += ['5'] * nt

    if point_data:
        lines.append(f'POINT_DATA {nv}')
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if len(values) != nv:
                raise DimensionError(f"顶点场 {name} 长度 {len(values)} 与顶点数 {nv} 不一致")
            lines += [f'SCALARS {name} double 1', 'LOOKUP_TABLE default']
            lines += [_fmt(v) for v in values]
    if cell_data:
        lines.append(f'CELL_DATA {nt}')
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if len(values) != nt:
                raise DimensionError(f"单元场 {name} 长度 {len(values)} 与单元数 {nt} 不一致")
            lines += [f'SCALARS {name} double 1', 'LOOKUP_TABLE default']
            lines += [_fmt(v) for v in values]

    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.info("VTK 文件已保存至: %s", path)
    return path


def write_field_csv(mesh: Mesh, field: ComplexField, path: PathLike) -> Path:
    """顶点坐标与场值: x, y, u1, u2"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        'x': mesh.vertices[:, 0],
        'y': mesh.vertices[:, 1],
        'u1': field.u1,
        'u2': field.u2,
    })
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_design_csv(mesh: Mesh, tau: np.ndarray, path: PathLike) -> Path:
    """斗篷单元编号、质心与 τ"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cells = mesh.cloak_cells
    if len(tau) != len(cells):
        raise DimensionError(f"设计场长度 {len(tau)} 与斗篷单元数 {len(cells)} 不一致")
    centroids = mesh.centroids[cells]
    frame = pd.DataFrame({'cell': cells, 'x': centroids[:, 0], 'y': centroids[:, 1], 'tau': tau})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_design_csv(mesh: Mesh, path: PathLike) -> np.ndarray:
    """
    读取 write_design_csv 写出的设计文件

    Raises:
        FileNotFoundError: 文件不存在
        DimensionError: 单元编号与当前网格的斗篷单元不一致
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"设计文件不存在: {path}")
    frame = pd.read_csv(path)
    if 'tau' not in frame.columns:
        raise DimensionError(f"设计文件缺少 tau 列: {path}")
    if 'cell' in frame.columns and not np.array_equal(frame['cell'].to_numpy(), mesh.cloak_cells):
        raise DimensionError(f"设计文件的单元编号与当前网格不一致: {path}")
    tau = frame['tau'].to_numpy(dtype=float)
    if len(tau) != len(mesh.cloak_cells):
        raise DimensionError(f"设计场长度 {len(tau)} 与斗篷单元数 {len(mesh.cloak_cells)} 不一致")
    return tau


def write_eigen_csv(eigen: EigenPairs, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    eigen.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path
