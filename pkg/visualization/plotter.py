import logging
import os
from typing import Optional, Sequence, Tuple

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from helmholtz.problem import ComplexField
from mesh.builder import Mesh, Region
from uncertainty.spectral import EigenPairs
from visualization.export import design_on_cells

logger = logging.getLogger(__name__)

COMPONENTS = ('real', 'imag', 'abs')


class CloakPlotter:
    """斗篷设计结果可视化工具"""

    def __init__(self, mesh: Mesh):
        """
        初始化可视化工具

        Args:
            mesh: 计算网格，所有场都画在它的三角剖分上
        """
        self.mesh = mesh
        self.triangulation = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)

        # 设置中文字体
        plt.rcParams['font.sans-serif'] = ['Arial Unicode MS', 'SimHei', 'DejaVu Sans']
        plt.rcParams['axes.unicode_minus'] = False

    def _draw_obstacle(self, ax) -> None:
        """画出障碍物边界与 PML 内边界"""
        for a, b in self.mesh.facets:
            pa, pb = self.mesh.vertices[a], self.mesh.vertices[b]
            ax.plot([pa[0], pb[0]], [pa[1], pb[1]], color='black', linewidth=1.0)
        pml = self.mesh.cells(Region.PML)
        if len(pml):
            inner = np.abs(self.mesh.vertices[np.unique(self.mesh.triangles[self.mesh.cells(Region.HOST, Region.CLOAK)])]).max()
            ax.plot([-inner, inner, inner, -inner, -inner], [-inner, -inner, inner, inner, -inner],
                    color='gray', linestyle='--', linewidth=0.8, alpha=0.6)

    def _finish(self, fig: Figure, save_path: Optional[str], label: str) -> Figure:
        plt.tight_layout()
        if save_path:
            fig.savefig(save_path, dpi=100, bbox_inches='tight')
            logger.info("%s已保存至: %s", label, save_path)
        return fig

    def plot_field(self,
                   field: ComplexField,
                   component: str = 'real',
                   title: str = '散射波场',
                   figsize: Tuple[int, int] = (7, 6),
                   save_path: Optional[str] = None) -> Figure:
        """
        绘制复值场的实部、虚部或模

        Args:
            field: 顶点上的复值场
            component: 'real'、'imag' 或 'abs'
            title: 图标题
            figsize: 图表大小
            save_path: 保存路径（如果提供）

        Returns:
            matplotlib Figure对象
        """
        if component not in COMPONENTS:
            raise ValueError(f"未知的分量: {component}，可选 {COMPONENTS}")
        values = {'real': field.u1, 'imag': field.u2, 'abs': field.magnitude}[component]

        fig, ax = plt.subplots(figsize=figsize)
        cmap = 'viridis' if component == 'abs' else 'RdBu_r'
        image = ax.tripcolor(self.triangulation, values, shading='gouraud', cmap=cmap)
        fig.colorbar(image, ax=ax)
        self._draw_obstacle(ax)
        ax.set_aspect('equal')
        ax.set_title(f'{title} ({component})', fontsize=14, fontweight='bold')
        ax.set_xlabel('x1', fontsize=12)
        ax.set_ylabel('x2', fontsize=12)
        return self._finish(fig, save_path, '波场图')

    def plot_design(self,
                    tau: np.ndarray,
                    title: str = '设计场 τ',
                    figsize: Tuple[int, int] = (7, 6),
                    save_path: Optional[str] = None) -> Figure:
        """绘制斗篷单元上的分片常数设计场，只显示斗篷附近区域"""
        fig, ax = plt.subplots(figsize=figsize)
        full = design_on_cells(self.mesh, tau)
        bound = max(float(np.abs(tau).max()) if len(tau) else 0.0, 1e-12)
        image = ax.tripcolor(self.triangulation, facecolors=full, cmap='RdBu_r', vmin=-bound, vmax=bound)
        fig.colorbar(image, ax=ax)
        self._draw_obstacle(ax)

        cloak = self.mesh.vertices[self.mesh.cloak_vertices]
        if len(cloak):
            r = np.abs(cloak).max() * 1.1
            ax.set_xlim(-r, r)
            ax.set_ylim(-r, r)
        ax.set_aspect('equal')
        ax.set_title(title, fontsize=14, fontweight='bold')
        return self._finish(fig, save_path, '设计场图')

    def plot_eigen_decay(self,
                         eigen_sets: Sequence[Tuple[str, EigenPairs]],
                         figsize: Tuple[int, int] = (8, 5),
                         save_path: Optional[str] = None) -> Figure:
        """
        绘制广义特征值 |λ_n| 的衰减曲线

        Args:
            eigen_sets: (图例, 特征对) 列表，例如不同网格或不同设计
        """
        fig, ax = plt.subplots(figsize=figsize)
        for label, eigen in eigen_sets:
            values = np.abs(eigen.eigenvalues)
            positive = values > 0
            ax.semilogy(np.arange(1, eigen.n + 1)[positive], values[positive],
                        marker='o', markersize=3, linewidth=1.5, label=label)
        ax.set_title('广义特征值衰减', fontsize=14, fontweight='bold')
        ax.set_xlabel('n', fontsize=12)
        ax.set_ylabel('|λ_n|', fontsize=12)
        ax.grid(True, alpha=0.3)
        if eigen_sets:
            ax.legend(loc='best')
        return self._finish(fig, save_path, '特征值衰减图')

    def plot_convergence(self,
                         trace: pd.DataFrame,
                         figsize: Tuple[int, int] = (12, 5),
                         save_path: Optional[str] = None) -> Figure:
        """绘制目标函数与相对梯度范数随 Newton 迭代的变化"""
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize)

        ax1.semilogy(trace['iteration'], trace['objective'], marker='o', color='blue',
                     linewidth=2, label='目标函数')
        if 'mean' in trace.columns:
            ax1.semilogy(trace['iteration'], trace['mean'], marker='.', color='green',
                         linewidth=1.5, alpha=0.7, label='均值项')
        ax1.set_title('目标函数下降', fontsize=12, fontweight='bold')
        ax1.set_xlabel('Newton 迭代', fontsize=10)
        ax1.grid(True, alpha=0.3)
        ax1.legend(loc='best')

        ax2.semilogy(trace['iteration'], trace['grad_ratio'], marker='s', color='red', linewidth=2)
        ax2.set_title('相对梯度范数', fontsize=12, fontweight='bold')
        ax2.set_xlabel('Newton 迭代', fontsize=10)
        ax2.grid(True, alpha=0.3)
        return self._finish(fig, save_path, '收敛曲线')

    def generate_report(self, output_dir: str = 'charts',
                        scattered: Optional[ComplexField] = None,
                        total: Optional[ComplexField] = None,
                        tau: Optional[np.ndarray] = None,
                        trace: Optional[pd.DataFrame] = None,
                        eigen: Optional[EigenPairs] = None) -> list:
        """
        生成可视化报告，只画给出的量

        Returns:
            生成的图片路径列表
        """
        os.makedirs(output_dir, exist_ok=True)
        paths = []

        def save(fig: Figure, name: str) -> None:
            path = os.path.join(output_dir, name)
            fig.savefig(path, dpi=100, bbox_inches='tight')
            plt.close(fig)
            paths.append(path)

        if scattered is not None:
            save(self.plot_field(scattered, 'real', '散射波场'), 'scattered_real.png')
        if total is not None:
            save(self.plot_field(total, 'real', '总波场'), 'total_real.png')
        if tau is not None:
            save(self.plot_design(tau), 'design.png')
        if trace is not None and len(trace):
            save(self.plot_convergence(trace), 'convergence.png')
        if eigen is not None and eigen.n:
            save(self.plot_eigen_decay([('λ', eigen)]), 'eigen_decay.png')

        logger.info("可视化报告已生成至: %s (%d 张图)", output_dir, len(paths))
        return paths
