import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from errors import MeshFormatError
from mesh.builder import Mesh, Region, validate_mesh

logger = logging.getLogger(__name__)

HEADER = 'cloakmesh v1'


class MeshReader:
    """cloakmesh v1 文本网格读取器"""

    TAG_NAMES = {r.name: int(r) for r in Region}

    def __init__(self, file_path: Union[str, Path]):
        """
        初始化网格读取器

        Args:
            file_path: 网格文件路径
        """
        self.file_path = Path(file_path)
        self.lines: Optional[List[str]] = None
        self.mesh: Optional[Mesh] = None

    def read_lines(self) -> List[str]:
        """
        读取网格文件

        Returns:
            文件的全部行，注释行(#)在 parse 中跳过
        """
        if not self.file_path.exists():
            raise FileNotFoundError(f"网格文件不存在: {self.file_path}")
        with open(self.file_path, 'r', encoding='ascii') as f:
            self.lines = f.read().splitlines()
        return self.lines

    def _parse_tag(self, token: str, line_no: int) -> int:
        if token.upper() in self.TAG_NAMES:
            return self.TAG_NAMES[token.upper()]
        try:
            return int(token)
        except ValueError:
            raise MeshFormatError(f"无法识别的区域标签 '{token}'", line=line_no) from None

    def parse(self) -> Mesh:
        """
        解析并校验网格

        Returns:
            满足不变量的 Mesh
        """
        if self.lines is None:
            self.read_lines()

        rows = [(i + 1, line.split()) for i, line in enumerate(self.lines)
                if line.strip() and not line.lstrip().startswith('#')]
        if not rows or ' '.join(rows[0][1]) != HEADER:
            raise MeshFormatError(f"文件头应为 '{HEADER}'", line=rows[0][0] if rows else 1)
        if len(rows) < 2 or len(rows[1][1]) != 3:
            raise MeshFormatError("缺少计数行 (顶点数 三角形数 边界边数)", line=rows[1][0] if len(rows) > 1 else None)
        try:
            n_v, n_t, n_f = (int(t) for t in rows[1][1])
        except ValueError:
            raise MeshFormatError("计数行必须为整数", line=rows[1][0]) from None

        body = rows[2:]
        if len(body) != n_v + n_t + n_f:
            raise MeshFormatError(f"期望 {n_v + n_t + n_f} 行数据，实际 {len(body)} 行")

        vertices = np.zeros((n_v, 2))
        triangles = np.zeros((n_t, 3), dtype=np.int64)
        tags = np.zeros(n_t, dtype=np.int64)
        facets = np.zeros((n_f, 2), dtype=np.int64)
        normals = np.zeros((n_f, 2))

        try:
            for k, (line_no, tokens) in enumerate(body[:n_v]):
                if len(tokens) != 2:
                    raise MeshFormatError("顶点行应为 'x y'", line=line_no)
                vertices[k] = [float(tokens[0]), float(tokens[1])]
            for k, (line_no, tokens) in enumerate(body[n_v:n_v + n_t]):
                if len(tokens) != 4:
                    raise MeshFormatError("三角形行应为 'i j k tag'", line=line_no)
                triangles[k] = [int(t) for t in tokens[:3]]
                tags[k] = self._parse_tag(tokens[3], line_no)
            for k, (line_no, tokens) in enumerate(body[n_v + n_t:]):
                if len(tokens) != 4:
                    raise MeshFormatError("边界边行应为 'i j nx ny'", line=line_no)
                facets[k] = [int(tokens[0]), int(tokens[1])]
                normals[k] = [float(tokens[2]), float(tokens[3])]
        except ValueError as exc:
            if isinstance(exc, MeshFormatError):
                raise
            raise MeshFormatError(f"数值解析失败: {exc}", line=line_no) from None

        self.mesh = validate_mesh(Mesh(vertices, triangles, tags, facets, normals))
        logger.info("读取网格 %s: %s", self.file_path, self.mesh.summary())
        return self.mesh

    def get_summary(self) -> Dict[str, Any]:
        """
        获取网格摘要信息

        Returns:
            自由度与区域统计
        """
        if self.mesh is None:
            raise ValueError("请先调用parse()读取网格")
        summary = self.mesh.summary()
        for region in Region:
            summary[f'{region.name.lower()}_triangles'] = int(np.sum(self.mesh.tags == region))
        return summary


def load_mesh(path: Union[str, Path]) -> Mesh:
    return MeshReader(path).parse()


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """按 cloakmesh v1 格式写出网格，浮点数用 %.17g 保证往返一致"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [HEADER, f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.facets)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k} {Region(t).name}" for (i, j, k), t in zip(mesh.triangles, mesh.tags)]
    lines += [f"{i} {j} {nx:.17g} {ny:.17g}" for (i, j), (nx, ny) in zip(mesh.facets, mesh.normals)]
    with open(path, 'w', encoding='ascii', newline='\n') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info("网格已保存至: %s", path)
    return path
