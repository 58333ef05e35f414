"""
线搜索非精确近似 Newton-pCG

Newton 方程使用 ζ̄ 处确定性目标的 τ-Hessian，以 β_P ∇²P 为对角预条件子，
Steihaug 准则截断 CG；步长从 1 开始减半，直到满足 Armijo 充分下降条件。
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from design.objective import ObjectiveBreakdown, ObservationOperator, breakdown, penalty_hessian_diag
from design.sensitivity import (AdjointWorkspace, TaylorSourceState, build_workspaces, saa_moments,
                                taylor_source_state, tau_gradient_det, tau_gradient_saa,
                                tau_gradient_taylor, tau_hessian_action_det)
from errors import CloakDesignError, ConfigurationError
from helmholtz.problem import MediumState
from helmholtz.system import HelmholtzSolver
from uncertainty.random_field import GaussianMeasure

logger = logging.getLogger(__name__)

VARIANTS = ('deterministic', 'saa', 'taylor')
CG_REASONS = ('tolerance', 'cap', 'negative_curvature')


@dataclass
class NewtonConfig:
    """Newton-pCG 参数，默认值取自斗篷设计数值实验"""
    n_qn: int = 10
    n_cg: int = 10
    n_ls: int = 10
    eps_qn: float = 1e-2
    eps_cg0: float = 0.5
    c_ag: float = 1e-4
    variant: str = 'deterministic'
    n_samples: int = 100
    n_eig: int = 50
    oversampling: int = 10
    beta_v: float = 1.0
    beta_p: float = 1e-2
    eps: float = 1e-4

    def validate(self) -> None:
        for name in ('n_qn', 'n_cg', 'n_ls'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} 必须至少为 1: {getattr(self, name)}")
        if self.eps_qn <= 0 or self.eps_cg0 <= 0:
            raise ConfigurationError("收敛容差必须为正")
        if not 0 < self.c_ag < 1:
            raise ConfigurationError(f"Armijo 常数必须在 (0, 1) 内: {self.c_ag}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"未知的目标近似: {self.variant}，可选 {VARIANTS}")
        if self.n_samples < 1:
            raise ConfigurationError(f"样本数必须至少为 1: {self.n_samples}")
        if self.n_eig < 0 or self.oversampling < 0:
            raise ConfigurationError("特征对个数与过采样数不能为负")
        if self.eps <= 0:
            raise ConfigurationError(f"惩罚光滑参数必须为正: eps={self.eps}")
        if self.beta_v < 0 or self.beta_p < 0:
            raise ConfigurationError("权重 β_V、β_P 不能为负")


@dataclass
class CgResult:
    step: np.ndarray
    reason: str
    iterations: int


def steihaug_pcg(hessian_action: Callable[[np.ndarray], np.ndarray], preconditioner_diag: np.ndarray,
                 rhs: np.ndarray, tol: float, cap: int) -> CgResult:
    """
    对角预条件 CG，按 Steihaug 准则终止

    遇到负曲率时返回当前迭代；若第一步即为负曲率，返回预条件后的最速下降方向。
    """
    if np.any(preconditioner_diag <= 0):
        raise ConfigurationError("预条件子对角元必须严格为正")
    z = np.zeros_like(rhs)
    r = rhs.copy()
    y = r / preconditioner_diag
    rz = float(r @ y)
    if rz == 0.0:
        return CgResult(z, 'tolerance', 0)
    r0 = np.sqrt(rz)
    d = y.copy()
    for it in range(cap):
        Hd = hessian_action(d)
        curvature = float(d @ Hd)
        if curvature <= 0.0:
            if it == 0:
                return CgResult(rhs / preconditioner_diag, 'negative_curvature', 1)
            return CgResult(z, 'negative_curvature', it + 1)
        alpha = rz / curvature
        z = z + alpha * d
        r = r - alpha * Hd
        y = r / preconditioner_diag
        rz_new = float(r @ y)
        if np.sqrt(max(rz_new, 0.0)) <= tol * r0:
            return CgResult(z, 'tolerance', it + 1)
        d = y + (rz_new / rz) * d
        rz = rz_new
    return CgResult(z, 'cap', cap)


@dataclass
class DesignProblem:
    """一次优化所需的全部对象"""
    solver: HelmholtzSolver
    observation: ObservationOperator
    measure: Optional[GaussianMeasure]
    beta_v: float = 1.0
    beta_p: float = 1e-2
    eps: float = 1e-4

    @property
    def mesh(self):
        return self.solver.problem.mesh

    @property
    def areas(self) -> np.ndarray:
        return self.mesh.areas[self.mesh.cloak_cells]

    @property
    def zeta_bar(self) -> np.ndarray:
        if self.measure is not None:
            return self.measure.mean
        return np.zeros(len(self.mesh.cloak_vertices))

    @property
    def n_design(self) -> int:
        return len(self.mesh.cloak_cells)


class Evaluation:
    """某个 τ 处的目标值，梯度在首次请求时计算并缓存"""

    def __init__(self, tau: np.ndarray, objective: ObjectiveBreakdown,
                 gradient_fn: Callable[[], np.ndarray],
                 mean_workspaces_fn: Callable[[], List[AdjointWorkspace]]):
        self.tau = tau
        self.objective = objective
        self._gradient_fn = gradient_fn
        self._mean_workspaces_fn = mean_workspaces_fn
        self._gradient: Optional[np.ndarray] = None
        self._mean_workspaces: Optional[List[AdjointWorkspace]] = None

    @property
    def total(self) -> float:
        return self.objective.total

    def gradient(self) -> np.ndarray:
        if self._gradient is None:
            self._gradient = self._gradient_fn()
        return self._gradient

    def mean_workspaces(self) -> List[AdjointWorkspace]:
        """ζ̄ 处带伴随解的工作区，供确定性 τ-Hessian 使用"""
        if self._mean_workspaces is None:
            self._mean_workspaces = self._mean_workspaces_fn()
        return self._mean_workspaces


class Variant:
    """目标近似的公共接口"""
    name = ''

    def __init__(self, design: DesignProblem):
        self.design = design

    def evaluate(self, tau: np.ndarray) -> Evaluation:
        raise NotImplementedError

    def hessian_action(self, evaluation: Evaluation, tau_hat: np.ndarray) -> np.ndarray:
        d = self.design
        return tau_hessian_action_det(evaluation.mean_workspaces(), tau_hat, evaluation.tau, d.beta_p, d.eps)

    def _mean_workspaces(self, tau: np.ndarray) -> Callable[[], List[AdjointWorkspace]]:
        d = self.design
        return lambda: build_workspaces(d.solver, d.observation, MediumState(tau, d.zeta_bar))


class DeterministicVariant(Variant):
    """只在均值 ζ̄ 处评估: Σ_i Q_i(τ, ζ̄) + β_P P(τ)"""
    name = 'deterministic'

    def evaluate(self, tau: np.ndarray) -> Evaluation:
        d = self.design
        workspaces = build_workspaces(d.solver, d.observation, MediumState(tau, d.zeta_bar), adjoint=False)
        q = [ws.q for ws in workspaces]
        objective = breakdown(q, [0.0] * len(q), tau, d.areas, d.beta_v, d.beta_p, d.eps, q)

        def gradient():
            return tau_gradient_det(d.solver, d.observation, tau, d.zeta_bar, d.beta_p, d.eps, workspaces)

        return Evaluation(tau, objective, gradient, lambda: workspaces)


class SaaVariant(Variant):
    """固定样本的样本平均近似"""
    name = 'saa'

    def __init__(self, design: DesignProblem, samples: np.ndarray):
        super().__init__(design)
        self.samples = np.atleast_2d(samples)
        design.solver.cache_size = max(design.solver.cache_size, len(self.samples) + 2)

    def evaluate(self, tau: np.ndarray) -> Evaluation:
        d = self.design
        workspaces = [[AdjointWorkspace(d.solver, d.observation, MediumState(tau, z), i) for z in self.samples]
                      for i in range(d.solver.problem.n_sources)]
        means, variances, qbar = [], [], []
        for per_source in workspaces:
            m, v = saa_moments([ws.q for ws in per_source])
            means.append(m)
            variances.append(v)
            qbar.append(m)
        objective = breakdown(means, variances, tau, d.areas, d.beta_v, d.beta_p, d.eps, qbar)

        def gradient():
            return tau_gradient_saa(d.solver, d.observation, tau, self.samples, d.beta_v, d.beta_p, d.eps,
                                    workspaces)

        return Evaluation(tau, objective, gradient, self._mean_workspaces(tau))


class TaylorVariant(Variant):
    """
    二阶 Taylor 近似，每次评估都在当前 τ 处重新求特征对

    每次评估用同一种子生成随机矩阵，使 J_T2 是 τ 的确定函数。
    """
    name = 'taylor'

    def __init__(self, design: DesignProblem, n_eig: int, oversampling: int = 10,
                 seed: int = 0, dense: bool = False):
        super().__init__(design)
        if design.measure is None:
            raise ConfigurationError("Taylor 近似需要高斯测度")
        self.n_eig = n_eig
        self.oversampling = oversampling
        self.seed = seed
        self.dense = dense
        self.last_states: List[TaylorSourceState] = []

    def states(self, tau: np.ndarray) -> List[TaylorSourceState]:
        d = self.design
        rng = np.random.default_rng(self.seed)
        workspaces = build_workspaces(d.solver, d.observation, MediumState(tau, d.zeta_bar))
        return [taylor_source_state(ws, d.measure, self.n_eig, self.oversampling, rng, self.dense)
                for ws in workspaces]

    def evaluate(self, tau: np.ndarray) -> Evaluation:
        d = self.design
        states = self.states(tau)
        self.last_states = states
        objective = breakdown([s.mean for s in states], [s.variance for s in states], tau, d.areas,
                              d.beta_v, d.beta_p, d.eps, [s.q_bar for s in states])

        def gradient():
            return tau_gradient_taylor(d.solver, d.observation, tau, d.measure, None, d.beta_v, d.beta_p,
                                       d.eps, states)

        return Evaluation(tau, objective, gradient, lambda: [s.workspace for s in states])


def make_variant(design: DesignProblem, config: NewtonConfig, samples: Optional[np.ndarray] = None,
                 seed: int = 0, dense: bool = False) -> Variant:
    config.validate()
    if config.variant == 'deterministic':
        return DeterministicVariant(design)
    if config.variant == 'saa':
        if samples is None:
            if design.measure is None:
                raise ConfigurationError("SAA 需要高斯测度或给定样本")
            samples = design.measure.samples(config.n_samples, np.random.default_rng(seed))
        return SaaVariant(design, samples)
    return TaylorVariant(design, config.n_eig, config.oversampling, seed, dense)


def variant_objective(variant: Variant, tau: np.ndarray) -> ObjectiveBreakdown:
    return variant.evaluate(tau).objective


def variant_gradient(variant: Variant, tau: np.ndarray) -> np.ndarray:
    return variant.evaluate(tau).gradient()


@dataclass
class OptimizationTrace:
    """每次迭代一行的优化记录"""
    rows: List[Dict] = field(default_factory=list)
    termination: str = ''

    def append(self, row: Dict) -> None:
        self.rows.append(row)

    @property
    def objective_values(self) -> np.ndarray:
        return np.array([r['objective'] for r in self.rows])

    @property
    def n_iterations(self) -> int:
        return max(len(self.rows) - 1, 0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.12e')


def minimize(config: NewtonConfig, variant: Variant, tau0: np.ndarray):
    """
    非精确近似 Newton-pCG 主循环

    Args:
        config: Newton 参数
        variant: 目标近似
        tau0: 初始设计

    Returns:
        (τ*, OptimizationTrace)
    """
    config.validate()
    design = variant.design
    counter = design.solver.counter
    trace = OptimizationTrace()
    tau = np.asarray(tau0, dtype=float).copy()

    try:
        current = variant.evaluate(tau)
        g = current.gradient()
        # 梯度的对偶范数，取初始点处预条件子诱导的度量
        metric_diag = _preconditioner(design, tau)
        g0 = np.sqrt(g @ (g / metric_diag))

        def grad_ratio(grad: np.ndarray) -> float:
            return float(np.sqrt(grad @ (grad / metric_diag)) / g0) if g0 > 0 else 0.0

        trace.append(_row(0, current, g0, 1.0, 0, '', 0.0, 0, counter))
        logger.info("迭代 0: J=%.6e, |g|=%.3e", current.total, g0)

        for k in range(1, config.n_qn + 1):
            ratio = grad_ratio(g)
            if ratio <= config.eps_qn:
                trace.termination = 'gradient_tolerance'
                break

            eps_cg = min(config.eps_cg0, ratio)
            cg = steihaug_pcg(lambda d: variant.hessian_action(current, d), _preconditioner(design, tau),
                              -g, eps_cg, config.n_cg)
            slope = float(g @ cg.step)

            alpha, accepted, trial = 1.0, False, None
            for n_ls in range(1, config.n_ls + 1):
                trial = variant.evaluate(tau + alpha * cg.step)
                if trial.total <= current.total + config.c_ag * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                trace.termination = 'line_search_failure'
                logger.warning("迭代 %d: 线搜索 %d 次仍未满足 Armijo 条件", k, config.n_ls)
                break

            tau = trial.tau
            current = trial
            g = current.gradient()
            ratio = grad_ratio(g)
            trace.append(_row(k, current, ratio * g0, ratio, cg.iterations, cg.reason, alpha, n_ls, counter))
            logger.info("迭代 %d: J=%.6e, |g|/|g0|=%.3e, CG %d 次 (%s), 步长 %.3g",
                        k, current.total, ratio, cg.iterations, cg.reason, alpha)
        else:
            # 最后一次迭代后可能已经满足容差
            converged = grad_ratio(g) <= config.eps_qn
            trace.termination = 'gradient_tolerance' if converged else 'iteration_cap'
    except CloakDesignError as exc:
        exc.trace = trace
        raise

    logger.info("优化结束 (%s): %d 次 Newton 迭代", trace.termination, trace.n_iterations)
    return tau, trace


def _preconditioner(design: DesignProblem, tau: np.ndarray) -> np.ndarray:
    if design.beta_p > 0:
        return design.beta_p * penalty_hessian_diag(tau, design.eps, design.areas)
    return design.areas.copy()


def _row(k: int, evaluation: Evaluation, gnorm: float, ratio: float, cg_iterations: int, cg_reason: str,
         alpha: float, n_ls: int, counter) -> Dict:
    row = {'iteration': k}
    row.update(evaluation.objective.as_row())
    row.update({
        'grad_norm': gnorm,
        'grad_ratio': ratio,
        'cg_iterations': cg_iterations,
        'cg_reason': cg_reason,
        'step': alpha,
        'line_search': n_ls,
    })
    for category in counter.CATEGORIES:
        row[f'solves_{category}'] = counter[category]
    return row
