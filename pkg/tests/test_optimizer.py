import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from types import SimpleNamespace

import numpy as np
import pytest

from design.objective import ObservationOperator, breakdown, penalty_gradient, penalty_hessian_diag
from design.optimizer import (CG_REASONS, DesignProblem, DeterministicVariant, Evaluation, NewtonConfig,
                              SaaVariant, TaylorVariant, Variant, make_variant, minimize, steihaug_pcg,
                              variant_gradient, variant_objective)
from errors import ConfigurationError, SolverError
from fem.solver import SolveCounter
from helmholtz.problem import ScatteringProblem
from helmholtz.system import HelmholtzSolver
from mesh.builder import GeometrySpec, build_disk_in_square
from uncertainty.random_field import GaussianMeasure

SMALL = GeometrySpec(r1=0.5, r2=1.0, l_half=2.0, w_pml=0.5, h=0.25)


class PenaltyDesign:
    """只含稀疏惩罚的设计问题桩"""

    def __init__(self, areas):
        self.areas = np.asarray(areas, dtype=float)
        self.beta_p = 1.0
        self.eps = 1.0
        self.solver = SimpleNamespace(counter=SolveCounter())


class PenaltyOnlyVariant(Variant):
    """J(τ) = P(τ)，其精确 Newton 步为 τ -> -τ³"""
    name = 'penalty'

    def evaluate(self, tau):
        d = self.design
        objective = breakdown([0.0], [0.0], tau, d.areas, 0.0, d.beta_p, d.eps, [0.0])
        return Evaluation(tau, objective, lambda: self.gradient(tau), lambda: [])

    def gradient(self, tau):
        d = self.design
        return d.beta_p * penalty_gradient(tau, d.eps, d.areas)

    def hessian_action(self, evaluation, tau_hat):
        d = self.design
        return d.beta_p * penalty_hessian_diag(evaluation.tau, d.eps, d.areas) * tau_hat


class WrongGradientVariant(PenaltyOnlyVariant):
    """梯度符号错误，线搜索必然失败"""

    def gradient(self, tau):
        return -super().gradient(tau)


class FailingVariant(PenaltyOnlyVariant):
    """第二次评估时分解失败"""

    def __init__(self, design):
        super().__init__(design)
        self.calls = 0

    def evaluate(self, tau):
        self.calls += 1
        if self.calls > 1:
            raise SolverError("矩阵奇异", diagnostics={'size': len(tau)})
        return super().evaluate(tau)


def test_steihaug_pcg():
    """测试 Steihaug-CG 的三种终止方式"""
    rng = np.random.default_rng(0)
    B = rng.standard_normal((5, 5))
    A = B @ B.T + np.eye(5)
    rhs = rng.standard_normal(5)

    result = steihaug_pcg(lambda d: A @ d, np.ones(5), rhs, tol=1e-12, cap=20)
    assert result.reason == 'tolerance'
    assert result.iterations <= 6
    assert np.allclose(A @ result.step, rhs, atol=1e-8)

    capped = steihaug_pcg(lambda d: A @ d, np.ones(5), rhs, tol=1e-12, cap=1)
    assert capped.reason == 'cap' and capped.iterations == 1

    diag = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    negative = steihaug_pcg(lambda d: -d, diag, rhs, tol=1e-6, cap=10)
    assert negative.reason == 'negative_curvature'
    assert np.allclose(negative.step, rhs / diag)

    zero = steihaug_pcg(lambda d: A @ d, np.ones(5), np.zeros(5), tol=1e-6, cap=10)
    assert zero.reason == 'tolerance' and zero.iterations == 0
    assert {result.reason, capped.reason, negative.reason} == set(CG_REASONS)

    with pytest.raises(ConfigurationError):
        steihaug_pcg(lambda d: d, np.zeros(5), rhs, tol=1e-6, cap=10)
    print("✓ Steihaug-CG 测试通过")


def test_newton_config_validation():
    """测试 Newton 参数校验"""
    NewtonConfig().validate()
    for bad in (dict(n_qn=0), dict(c_ag=1.0), dict(variant='bogus'), dict(eps=0.0), dict(beta_p=-1.0),
                dict(eps_cg0=0.0), dict(n_samples=0)):
        with pytest.raises(ConfigurationError):
            NewtonConfig(**bad).validate()
    print("✓ Newton 参数校验测试通过")


def test_penalty_only_converges():
    """测试纯惩罚目标在几步内收敛到零设计"""
    design = PenaltyDesign([1.0, 2.0, 0.5])
    config = NewtonConfig(n_qn=10, eps_qn=1e-6)
    tau, trace = minimize(config, PenaltyOnlyVariant(design), np.array([0.5, -0.4, 0.3]))

    assert trace.termination == 'gradient_tolerance'
    assert np.abs(tau).max() < 1e-6
    values = trace.objective_values
    assert np.all(np.diff(values) <= 0)
    # 第一步为精确 Newton 步
    frame = trace.to_frame()
    assert frame['step'].iloc[1] == 1.0
    assert frame['cg_iterations'].iloc[1] == 1
    assert trace.n_iterations == len(frame) - 1
    print(f"✓ 纯惩罚收敛测试通过 ({trace.n_iterations} 次迭代)")


def test_iteration_cap_and_line_search_failure():
    """测试迭代上限与线搜索失败"""
    design = PenaltyDesign([1.0, 1.0])
    tau0 = np.array([0.5, -0.4])

    _, capped = minimize(NewtonConfig(n_qn=1), PenaltyOnlyVariant(design), tau0)
    assert capped.termination == 'iteration_cap'
    assert capped.n_iterations == 1

    tau, failed = minimize(NewtonConfig(n_qn=5, n_ls=3), WrongGradientVariant(design), tau0)
    assert failed.termination == 'line_search_failure'
    assert np.array_equal(tau, tau0)
    print("✓ 终止条件测试通过")


def test_tolerance_reached_on_last_iteration():
    """测试最后一次迭代恰好满足容差时记为收敛而非达到上限"""
    design = PenaltyDesign([1.0, 1.0])
    tau0 = np.array([0.5, -0.4])

    # τ -> -τ³ 两步后 |g|/|g0| 约为 3e-3
    tau, trace = minimize(NewtonConfig(n_qn=2, eps_qn=1e-2), PenaltyOnlyVariant(design), tau0)
    assert trace.n_iterations == 2
    assert trace.termination == 'gradient_tolerance'
    assert trace.to_frame()['grad_ratio'].iloc[-1] <= 1e-2
    assert np.allclose(tau, -(-tau0 ** 3) ** 3, atol=1e-6)
    print("✓ 末次迭代收敛测试通过")


def test_variant_objective_and_gradient():
    """测试目标近似的统一评估入口"""
    design = PenaltyDesign([1.0, 2.0])
    variant = PenaltyOnlyVariant(design)
    tau = np.array([0.3, -0.6])

    objective = variant_objective(variant, tau)
    expected = np.sum(design.areas * np.sqrt(tau ** 2 + design.eps))
    assert objective.total == pytest.approx(expected)
    assert objective.mean == 0.0
    assert np.allclose(variant_gradient(variant, tau), design.areas * tau / np.sqrt(tau ** 2 + design.eps))
    print("✓ 统一评估入口测试通过")


def test_solver_error_carries_trace():
    """测试求解失败时异常携带已有的迭代记录"""
    design = PenaltyDesign([1.0, 1.0])
    with pytest.raises(SolverError) as info:
        minimize(NewtonConfig(), FailingVariant(design), np.array([0.5, -0.4]))
    assert info.value.trace is not None
    assert len(info.value.trace.rows) == 1
    print("✓ 异常携带记录测试通过")


def create_design(beta_p: float = 1e-2) -> DesignProblem:
    mesh = build_disk_in_square(SMALL)
    problem = ScatteringProblem(mesh, k0=np.pi, pml_start=SMALL.l_half - SMALL.w_pml)
    return DesignProblem(HelmholtzSolver(problem), ObservationOperator(mesh), None,
                         beta_v=0.0, beta_p=beta_p, eps=1e-4)


def test_deterministic_optimization_decreases():
    """测试确定性优化使目标函数单调下降"""
    design = create_design()
    config = NewtonConfig(n_qn=3, n_ls=20, beta_p=1e-2)
    variant = make_variant(design, config)
    assert isinstance(variant, DeterministicVariant)

    tau, trace = minimize(config, variant, np.zeros(design.n_design))
    frame = trace.to_frame()
    values = trace.objective_values

    assert len(tau) == design.n_design
    assert values[-1] < values[0]
    assert np.all(np.diff(values) <= 0)
    assert trace.termination in ('gradient_tolerance', 'iteration_cap', 'line_search_failure')
    for column in ('iteration', 'objective', 'mean', 'penalty', 'grad_ratio', 'cg_reason',
                   'solves_forward', 'solves_hessian_action'):
        assert column in frame.columns
    assert np.all(np.diff(frame['solves_forward']) > 0)
    print(f"✓ 确定性优化测试通过 (J: {values[0]:.4e} -> {values[-1]:.4e})")


def create_uncertain_design() -> DesignProblem:
    mesh = build_disk_in_square(SMALL)
    problem = ScatteringProblem(mesh, k0=np.pi, pml_start=SMALL.l_half - SMALL.w_pml)
    return DesignProblem(HelmholtzSolver(problem), ObservationOperator(mesh),
                         GaussianMeasure(mesh, gamma=1.0, delta=5.0), beta_v=1.0, beta_p=1e-2, eps=1e-4)


def check_monotone_trace(trace):
    values = trace.objective_values
    assert len(values) >= 2, "第一步线搜索即失败"
    assert values[-1] < values[0]
    assert np.all(np.diff(values) <= 0)
    assert trace.termination in ('gradient_tolerance', 'iteration_cap', 'line_search_failure')
    return values


def test_saa_optimization_decreases():
    """测试 SAA 目标在固定样本下单调下降"""
    design = create_uncertain_design()
    config = NewtonConfig(variant='saa', n_samples=3, n_qn=2, n_ls=20, beta_v=1.0, beta_p=1e-2)
    variant = make_variant(design, config, seed=3)
    assert isinstance(variant, SaaVariant)
    assert variant.samples.shape == (3, len(design.mesh.cloak_vertices))

    tau, trace = minimize(config, variant, np.zeros(design.n_design))
    values = check_monotone_trace(trace)
    assert len(tau) == design.n_design
    assert 'variance' in trace.to_frame().columns
    print(f"✓ SAA 优化测试通过 (J: {values[0]:.4e} -> {values[-1]:.4e})")


def test_taylor_optimization_decreases():
    """测试二阶 Taylor 目标单调下降"""
    design = create_uncertain_design()
    config = NewtonConfig(variant='taylor', n_eig=3, oversampling=2, n_qn=2, n_ls=20, beta_v=1.0, beta_p=1e-2)
    variant = make_variant(design, config, seed=5)
    assert isinstance(variant, TaylorVariant)

    tau, trace = minimize(config, variant, np.zeros(design.n_design))
    values = check_monotone_trace(trace)
    assert len(tau) == design.n_design
    print(f"✓ Taylor 优化测试通过 (J: {values[0]:.4e} -> {values[-1]:.4e})")


def test_make_variant_requirements():
    """测试各目标近似的前置条件"""
    design = create_design()
    with pytest.raises(ConfigurationError):
        make_variant(design, NewtonConfig(variant='saa'))
    with pytest.raises(ConfigurationError):
        make_variant(design, NewtonConfig(variant='taylor'))
    with pytest.raises(ConfigurationError):
        TaylorVariant(design, n_eig=2)

    samples = np.zeros((2, len(design.mesh.cloak_vertices)))
    saa = make_variant(design, NewtonConfig(variant='saa'), samples=samples)
    assert saa.name == 'saa'
    assert design.solver.cache_size >= 4
    print("✓ 目标近似前置条件测试通过")


def run_all_tests():
    """运行所有测试"""
    print("=" * 50)
    print("开始运行优化模块测试")
    print("=" * 50)

    test_steihaug_pcg()
    test_newton_config_validation()
    test_penalty_only_converges()
    test_iteration_cap_and_line_search_failure()
    test_tolerance_reached_on_last_iteration()
    test_variant_objective_and_gradient()
    test_solver_error_carries_trace()
    test_deterministic_optimization_decreases()
    test_saa_optimization_decreases()
    test_taylor_optimization_decreases()
    test_make_variant_requirements()

    print("\n" + "=" * 50)
    print("所有优化测试完成！")
    print("=" * 50)


if __name__ == "__main__":
    run_all_tests()
