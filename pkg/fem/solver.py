"""
稀疏 LU 分解与线性求解计数

所有正向、伴随与增量方程都通过 Factorization 求解，按类别记入 SolveCounter。
"""
import logging
from collections import Counter
from typing import Dict, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from errors import DimensionError, SolverError

logger = logging.getLogger(__name__)


class SolveCounter:
    """按类别统计线性求解次数"""

    CATEGORIES = ('forward', 'adjoint', 'incremental_forward', 'incremental_adjoint',
                  'star_forward', 'star_adjoint', 'factorization', 'hessian_action')

    def __init__(self):
        self.counts: Counter = Counter()

    def record(self, category: str, n: int = 1) -> None:
        """记录 n 次某类求解"""
        self.counts[category] += n

    def __getitem__(self, category: str) -> int:
        return self.counts.get(category, 0)

    @property
    def total_solves(self) -> int:
        """线性求解总数，不含分解与 Hessian 作用"""
        return sum(v for k, v in self.counts.items() if k not in ('factorization', 'hessian_action'))

    def snapshot(self) -> Dict[str, int]:
        return dict(self.counts)

    def since(self, snapshot: Dict[str, int]) -> Dict[str, int]:
        """从某个快照以来新增的计数"""
        return {k: v - snapshot.get(k, 0) for k, v in self.counts.items() if v != snapshot.get(k, 0)}

    def to_frame(self) -> pd.DataFrame:
        """每个类别一行，末行为 total_solves"""
        rows = [{'category': k, 'count': self.counts.get(k, 0)} for k in self.CATEGORIES]
        rows += [{'category': k, 'count': v} for k, v in sorted(self.counts.items()) if k not in self.CATEGORIES]
        rows.append({'category': 'total_solves', 'count': self.total_solves})
        return pd.DataFrame(rows)


class Factorization:
    """稀疏 LU 分解句柄，支持转置求解"""

    def __init__(self, op: sp.spmatrix, name: str = ''):
        self.shape = op.shape
        self.name = name
        try:
            self._lu = splu(sp.csc_matrix(op))
        except RuntimeError as exc:
            raise SolverError(
                f"矩阵 {name} 数值奇异，可尝试微调频率以避开离散共振: {exc}",
                diagnostics={'size': op.shape[0], 'nnz': op.nnz, 'reason': str(exc)}) from exc
        diag_u = np.abs(self._lu.U.diagonal())
        self.pivot_ratio = float(diag_u.min() / diag_u.max()) if diag_u.size and diag_u.max() > 0 else 0.0
        if not np.isfinite(self.pivot_ratio) or self.pivot_ratio < 1e-15:
            raise SolverError(
                f"矩阵 {name} 数值奇异 (最小/最大主元比 {self.pivot_ratio:.2e})，可尝试微调频率",
                diagnostics={'size': op.shape[0], 'pivot_ratio': self.pivot_ratio})
        logger.debug("分解 %s: 维数 %d, 主元比 %.2e", name, op.shape[0], self.pivot_ratio)

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        """
        求解 A x = rhs，transpose 为真时求解 A^T x = rhs

        Raises:
            DimensionError: 右端项长度与矩阵维数不一致
        """
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise DimensionError(f"右端项长度 {rhs.shape[0]} 与矩阵维数 {self.shape[0]} 不一致")
        return self._lu.solve(rhs, trans='T' if transpose else 'N')


def factorize(op: sp.spmatrix, name: str = '', counter: Optional[SolveCounter] = None) -> Factorization:
    """
    分解稀疏矩阵并计入 factorization 类别

    Args:
        op: 方阵
        name: 日志与异常中使用的名称
        counter: 求解计数器（可选）

    Raises:
        SolverError: 矩阵数值奇异
    """
    if counter is not None:
        counter.record('factorization')
    return Factorization(op, name=name)


def solve(f: Factorization, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
    """用已有分解求解，不计数"""
    return f.solve(rhs, transpose=transpose)
