"""
运行编排：forward / optimize / eig-study / taylor-study / robustness-study / mesh-gen

每次运行都在输出目录写出 config.yaml、run.log 与 solves.csv；
相同配置与种子重复运行，所有 CSV 逐字节相同。
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from design.objective import ObservationOperator
from design.optimizer import DesignProblem, OptimizationTrace, make_variant, minimize
from design.sensitivity import build_workspaces
from errors import CloakDesignError
from fem.solver import SolveCounter
from helmholtz.analytic import cylinder_reference, relative_l2_error
from helmholtz.problem import ComplexField, MediumState, ScatteringProblem, incident_at_vertices
from helmholtz.system import HelmholtzSolver
from mesh.builder import Mesh, build_disk_in_square, build_mesh_hierarchy, refine_uniform
from mesh.reader import load_mesh, write_mesh
from runner.config import RunConfig
from uncertainty.random_field import GaussianMeasure
from uncertainty.spectral import (DENSE_LIMIT, EigenPairs, captured_trace_fraction, dense_gen_eig,
                                  dense_operator, randomized_gen_eig, taylor_residual_study)
from visualization.export import (design_on_cells, field_point_data, read_design_csv, write_design_csv,
                                  write_eigen_csv, write_field_csv, write_frame, write_vtk)
from visualization.plotter import CloakPlotter

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


@dataclass
class RunContext:
    """一次运行共享的网格、问题与求解器"""
    config: RunConfig
    output_dir: Path
    mesh: Mesh
    problem: ScatteringProblem
    solver: HelmholtzSolver
    observation: ObservationOperator
    _measure: Optional[GaussianMeasure] = field(default=None, repr=False)

    @property
    def counter(self) -> SolveCounter:
        return self.solver.counter

    @property
    def measure(self) -> GaussianMeasure:
        if self._measure is None:
            m = self.config.measure
            self._measure = GaussianMeasure(self.mesh, m.gamma, m.delta, m.alpha)
        return self._measure

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.config.measure.seed)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def initial_design(self, design_path: Optional[str] = None) -> np.ndarray:
        path = design_path or self.config.study.design
        if path is None:
            return np.zeros(len(self.mesh.cloak_cells))
        return read_design_csv(self.mesh, path)


def build_mesh(config: RunConfig) -> Mesh:
    g = config.geometry
    mesh = load_mesh(g.mesh_path) if g.mesh_path is not None else build_disk_in_square(g.to_spec())
    for _ in range(g.refine):
        mesh = refine_uniform(mesh)
    return mesh


def _problem(config: RunConfig, mesh: Mesh) -> ScatteringProblem:
    g, p = config.geometry, config.physics
    pml_start = g.l_half - g.w_pml if g.mesh_path is None else None
    return ScatteringProblem(mesh, k0=p.k0, sources=config.sources(), c0=p.c0, sigma0=p.sigma0,
                             observation=p.observation, pml_start=pml_start)


@contextmanager
def run_logging(config: RunConfig, name: str) -> Iterator[SolveCounter]:
    """
    校验配置、准备输出目录并挂上 run.log

    退出时无论成功与否都写出 solves.csv。
    """
    config.validate()
    output_dir = Path(config.output.directory)
    output_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(output_dir / 'run.log', mode='w', encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(handler)
    if root.level > logging.INFO or root.level == logging.NOTSET:
        root.setLevel(logging.INFO)
    counter = SolveCounter()
    try:
        config.to_yaml(output_dir / 'config.yaml')
        logger.info("开始运行 %s，输出目录 %s", name, output_dir)
        yield counter
    finally:
        counter.to_frame().to_csv(output_dir / 'solves.csv', index=False)
        logger.info("%s 结束，共 %d 次线性求解", name, counter.total_solves)
        root.removeHandler(handler)
        handler.close()


@contextmanager
def open_run(config: RunConfig, name: str) -> Iterator[RunContext]:
    with run_logging(config, name) as counter:
        mesh = build_mesh(config)
        logger.info("网格: %s", mesh.summary())
        problem = _problem(config, mesh)
        solver = HelmholtzSolver(problem, counter)
        observation = ObservationOperator(mesh, config.physics.observation)
        yield RunContext(config, Path(config.output.directory), mesh, problem, solver, observation)


def _export_fields(ctx: RunContext, stem: str, scattered: ComplexField, incident: ComplexField,
                   tau: Optional[np.ndarray] = None) -> None:
    total = scattered + incident
    out = ctx.config.output
    if out.vtk:
        point_data = field_point_data(scattered)
        point_data.update(field_point_data(total, 'total_'))
        point_data.update(field_point_data(incident, 'incident_'))
        cell_data = {'tau': design_on_cells(ctx.mesh, tau)} if tau is not None else None
        write_vtk(ctx.mesh, ctx.path(f'{stem}.vtk'), point_data, cell_data)
    if out.csv:
        write_field_csv(ctx.mesh, scattered, ctx.path(f'{stem}_scattered.csv'))
        write_field_csv(ctx.mesh, total, ctx.path(f'{stem}_total.csv'))
        write_field_csv(ctx.mesh, incident, ctx.path(f'{stem}_incident.csv'))


@dataclass
class ForwardResult:
    scattered: List[ComplexField]
    incident: List[ComplexField]
    summary: pd.DataFrame

    @property
    def total(self) -> List[ComplexField]:
        return [u + ui for u, ui in zip(self.scattered, self.incident)]


def _forward(ctx: RunContext, tau: np.ndarray, stem: str) -> ForwardResult:
    medium = MediumState(tau, np.zeros(len(ctx.mesh.cloak_vertices)))
    g = ctx.config.geometry
    uncloaked_disk = g.mesh_path is None and not np.any(tau)
    scattered, incident, rows = [], [], []
    for i, src in enumerate(ctx.problem.sources):
        u = ctx.solver.solve_scattered(medium, i)
        u_inc = incident_at_vertices(ctx.problem, i)
        row = {
            'source': i,
            'direction_x': src.direction[0],
            'direction_y': src.direction[1],
            'frequency_factor': src.frequency_factor,
            'k': ctx.problem.wavenumber(i),
            'Q': ctx.observation.energy(u),
        }
        if uncloaked_disk:
            reference = cylinder_reference(ctx.mesh, ctx.problem.wavenumber(i), g.r1, src.direction)
            row['analytic_rel_error'] = relative_l2_error(ctx.mesh, u, reference)
        rows.append(row)
        scattered.append(u)
        incident.append(u_inc)
        _export_fields(ctx, f'{stem}_source{i}', u, u_inc, tau)
    summary = pd.DataFrame(rows)
    write_frame(summary, ctx.path(f'{stem}_summary.csv'))
    return ForwardResult(scattered, incident, summary)


def run_forward(config: RunConfig, tau: Optional[np.ndarray] = None) -> ForwardResult:
    """
    求解各入射源的散射场并导出散射场、总场与入射场

    未给出设计场时读取 study.design，仍没有则取 τ = 0（无斗篷）。
    """
    with open_run(config, 'forward') as ctx:
        if tau is None:
            tau = ctx.initial_design()
        result = _forward(ctx, tau, 'forward')
        if config.output.plots:
            plotter = CloakPlotter(ctx.mesh)
            plotter.generate_report(str(ctx.path('plots')), scattered=result.scattered[0],
                                    total=result.total[0], tau=tau if np.any(tau) else None)
        return result


@dataclass
class OptimizeResult:
    tau: np.ndarray
    trace: OptimizationTrace
    fields: ForwardResult

    @property
    def reduction(self) -> float:
        """目标函数相对初值的下降比例"""
        values = self.trace.objective_values
        return float(1.0 - values[-1] / values[0]) if len(values) and values[0] != 0 else 0.0


def run_optimize(config: RunConfig) -> OptimizeResult:
    """按配置的目标近似做 Newton-pCG 优化，导出迭代记录、最优设计与最优处的场"""
    with open_run(config, 'optimize') as ctx:
        w = config.weights
        measure = ctx.measure if config.variant != 'deterministic' else None
        design = DesignProblem(ctx.solver, ctx.observation, measure, w.beta_v, w.beta_p, w.eps)
        newton = config.newton_config()
        variant = make_variant(design, newton, seed=config.measure.seed, dense=config.sampling.dense)
        tau0 = ctx.initial_design()
        try:
            tau, trace = minimize(newton, variant, tau0)
        except CloakDesignError as exc:
            partial = getattr(exc, 'trace', None)
            if partial is not None and partial.rows:
                partial.to_csv(ctx.path('trace_partial.csv'))
                logger.error("优化中断，已写出 %d 行迭代记录", len(partial.rows))
            raise

        trace.to_csv(ctx.path('trace.csv'))
        write_design_csv(ctx.mesh, tau, ctx.path('design.csv'))
        fields_at_opt = _forward(ctx, tau, 'optimum')
        result = OptimizeResult(tau, trace, fields_at_opt)
        logger.info("优化结束 (%s)，目标函数下降 %.1f%%", trace.termination, 100.0 * result.reduction)
        if config.output.plots:
            CloakPlotter(ctx.mesh).generate_report(str(ctx.path('plots')),
                                                   scattered=fields_at_opt.scattered[0],
                                                   total=fields_at_opt.total[0], tau=tau,
                                                   trace=trace.to_frame())
        return result


@dataclass
class EigenStudy:
    eigen: List[EigenPairs]
    summary: pd.DataFrame


def run_eig_study(config: RunConfig, tau: Optional[np.ndarray] = None) -> EigenStudy:
    """
    给定设计处 (H̄, C^{-1}) 的主特征值

    sampling.dense 为真且维数不超过稠密上限时，同时给出稠密参照与捕获迹比例。
    """
    with open_run(config, 'eig-study') as ctx:
        if tau is None:
            tau = ctx.initial_design()
        measure = ctx.measure
        s = config.sampling
        rng = ctx.rng()
        workspaces = build_workspaces(ctx.solver, ctx.observation, MediumState(tau, measure.mean))
        eigen_sets, rows = [], []
        for i, ws in enumerate(workspaces):
            eigen = randomized_gen_eig(ws.zeta_hessian_action, measure.apply_cov, measure.apply_precision,
                                       measure.dim, s.n_eig, s.oversampling, rng)
            row = {'source': i, 'n_eig': eigen.n, 'trace_estimate': float(eigen.eigenvalues.sum()),
                   'abs_trace_estimate': float(np.abs(eigen.eigenvalues).sum())}
            if s.dense and measure.dim <= DENSE_LIMIT:
                reference = dense_gen_eig(dense_operator(ws.zeta_hessian_action, measure.dim),
                                          precision=measure.precision_matrix())
                row['captured_trace'] = captured_trace_fraction(eigen, reference.eigenvalues)
                write_eigen_csv(reference, ctx.path(f'eigen_dense_source{i}.csv'))
            write_eigen_csv(eigen, ctx.path(f'eigen_source{i}.csv'))
            eigen_sets.append(eigen)
            rows.append(row)
        summary = pd.DataFrame(rows)
        write_frame(summary, ctx.path('eigen_summary.csv'))
        if config.output.plots:
            fig = CloakPlotter(ctx.mesh).plot_eigen_decay(
                [(f'source {i}', e) for i, e in enumerate(eigen_sets)],
                save_path=str(ctx.path('eigen_decay.png')))
            plt.close(fig)
        return EigenStudy(eigen_sets, summary)


def run_taylor_study(config: RunConfig, tau: Optional[np.ndarray] = None,
                     n_samples: Optional[int] = None) -> pd.DataFrame:
    """Q 与 q = (Q - Q(ζ̄))² 的 Taylor 残差均方误差表，每个源两行"""
    with open_run(config, 'taylor-study') as ctx:
        if tau is None:
            tau = ctx.initial_design()
        n_samples = n_samples or config.study.residual_samples
        measure = ctx.measure
        rng = ctx.rng()
        workspaces = build_workspaces(ctx.solver, ctx.observation, MediumState(tau, measure.mean))
        frames = []
        for i, ws in enumerate(workspaces):

            def q_of_zeta(zeta: np.ndarray, i: int = i) -> float:
                return ctx.observation.energy(ctx.solver.solve_scattered(MediumState(tau, zeta), i))

            study = taylor_residual_study(q_of_zeta, measure.mean, ws.zeta_gradient(), ws.zeta_hessian_action,
                                          measure.sample, n_samples, rng, q_bar=ws.q, label=f'source{i}')
            frame = study.to_frame()
            frame.insert(0, 'source', i)
            frames.append(frame)
        table = pd.concat(frames, ignore_index=True)
        table.insert(len(table.columns), 'n_samples', n_samples)
        write_frame(table, ctx.path('taylor_study.csv'))
        return table


def run_robustness_study(config: RunConfig, designs: Optional[Sequence[str]] = None,
                         n_samples: Optional[int] = None) -> pd.DataFrame:
    """
    固定一组随机样本，对每个设计给出散射场的均值与标准差场

    标准差按复值逐点计算: sqrt(mean |u - ū|²)；汇总表给出其在观测区域上的平均。
    """
    with open_run(config, 'robustness-study') as ctx:
        designs = list(designs or config.study.designs)
        if not designs:
            logger.warning("未给出设计文件，只评估无斗篷设计 τ = 0")
        n_samples = n_samples or config.study.robustness_samples
        measure = ctx.measure
        samples = measure.samples(n_samples, ctx.rng())

        entries = [(Path(d).stem, ctx.initial_design(d)) for d in designs] or \
                  [('uncloaked', np.zeros(len(ctx.mesh.cloak_cells)))]
        rows = []
        for name, tau in entries:
            for i in range(ctx.problem.n_sources):
                stack = np.array([ctx.solver.solve_scattered(MediumState(tau, z), i).complex()
                                  for z in samples])
                q_values = np.array([ctx.observation.energy(ComplexField(s.real, s.imag)) for s in stack])
                mean = stack.mean(axis=0)
                std = np.sqrt(np.mean(np.abs(stack - mean) ** 2, axis=0))
                mean_field = ComplexField(mean.real.copy(), mean.imag.copy())
                stem = f'robustness_{name}_source{i}'
                if config.output.vtk:
                    point_data = field_point_data(mean_field, 'mean_')
                    point_data['std'] = std
                    write_vtk(ctx.mesh, ctx.path(f'{stem}.vtk'), point_data,
                              {'tau': design_on_cells(ctx.mesh, tau)})
                if config.output.csv:
                    write_frame(pd.DataFrame({'x': ctx.mesh.vertices[:, 0], 'y': ctx.mesh.vertices[:, 1],
                                              'mean_u1': mean_field.u1, 'mean_u2': mean_field.u2,
                                              'std': std}), ctx.path(f'{stem}.csv'))
                rows.append({
                    'design': name,
                    'source': i,
                    'n_samples': n_samples,
                    'mean_Q': float(q_values.mean()),
                    'std_Q': float(q_values.std(ddof=1)) if n_samples > 1 else 0.0,
                    'avg_std': ctx.observation.average(std),
                })
        summary = pd.DataFrame(rows)
        write_frame(summary, ctx.path('robustness_summary.csv'))
        return summary


def run_mesh_gen(config: RunConfig, levels: Optional[int] = None) -> List[Mesh]:
    """生成逐次加密的网格层级并写出网格文件与自由度统计"""
    with run_logging(config, 'mesh-gen'):
        levels = levels or config.study.levels
        output_dir = Path(config.output.directory)
        g = config.geometry
        if g.mesh_path is None:
            meshes = build_mesh_hierarchy(g.to_spec(), levels)
        else:
            meshes = [load_mesh(g.mesh_path)]
            for _ in range(levels - 1):
                meshes.append(refine_uniform(meshes[-1]))
        rows = []
        for level, mesh in enumerate(meshes, start=1):
            write_mesh(mesh, output_dir / f'mesh{level}.txt')
            rows.append({'level': level, **mesh.summary()})
        write_frame(pd.DataFrame(rows), output_dir / 'mesh_summary.csv')
        return meshes
