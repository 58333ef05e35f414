import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from design.objective import ObservationOperator, penalty
from design.optimizer import DesignProblem, SaaVariant, TaylorVariant
from design.sensitivity import (AdjointWorkspace, build_workspaces, finite_difference_check, saa_moments,
                                saa_weights, tau_gradient_det, tau_gradient_saa, tau_hessian_action_det,
                                zeta_gradient)
from errors import ConfigurationError
from helmholtz.problem import MediumState, ScatteringProblem
from helmholtz.system import HelmholtzSolver
from mesh.builder import GeometrySpec, build_disk_in_square
from uncertainty.random_field import GaussianMeasure

SMALL = GeometrySpec(r1=0.5, r2=1.0, l_half=2.0, w_pml=0.5, h=0.25)
BETA_P = 1e-2
EPS = 1e-2


def create_setup(seed: int = 0):
    """小网格上的求解器、观测算子、测度以及随机的 (τ, ζ)"""
    mesh = build_disk_in_square(SMALL)
    problem = ScatteringProblem(mesh, k0=np.pi, pml_start=SMALL.l_half - SMALL.w_pml)
    solver = HelmholtzSolver(problem)
    observation = ObservationOperator(mesh)
    measure = GaussianMeasure(mesh, gamma=1.0, delta=5.0)
    rng = np.random.default_rng(seed)
    tau = 0.3 * rng.standard_normal(len(mesh.cloak_cells))
    zeta = 0.3 * rng.standard_normal(len(mesh.cloak_vertices))
    return solver, observation, measure, tau, zeta, rng


def energy(solver, observation, tau, zeta) -> float:
    return observation.energy(solver.solve_scattered(MediumState(tau, zeta), 0))


def assert_fd(frame, tol=1e-5):
    assert frame['rel_error'].min() < tol, frame.to_string()


def test_zeta_gradient():
    """测试 Q 关于随机场的梯度"""
    solver, observation, _, tau, zeta, rng = create_setup()
    d = rng.standard_normal(len(zeta))
    g = zeta_gradient(solver, observation, tau, zeta)
    frame = finite_difference_check(lambda z: energy(solver, observation, tau, z), zeta, d, g @ d)

    assert list(frame.columns) == ['h', 'fd', 'analytic', 'rel_error', 'order']
    assert_fd(frame)
    assert 1.7 < frame['order'].iloc[1] < 2.3
    print("✓ ζ 梯度差分测试通过")


def test_zeta_hessian_action():
    """测试 ζ-Hessian 作用与梯度差分一致"""
    solver, observation, _, tau, zeta, rng = create_setup(1)
    d1 = rng.standard_normal(len(zeta))
    d2 = rng.standard_normal(len(zeta))
    ws = AdjointWorkspace(solver, observation, MediumState(tau, zeta), 0)
    ws.solve_adjoint()
    analytic = ws.zeta_hessian_action(d1) @ d2

    frame = finite_difference_check(lambda z: zeta_gradient(solver, observation, tau, z) @ d2, zeta, d1, analytic)
    assert_fd(frame)
    print("✓ ζ-Hessian 差分测试通过")


def test_hessian_symmetry():
    """测试 ζ 与 τ 两种 Hessian 作用都对称"""
    solver, observation, _, tau, zeta, rng = create_setup(2)
    ws = AdjointWorkspace(solver, observation, MediumState(tau, zeta), 0)
    ws.solve_adjoint()
    for kind, dim in (('zeta', len(zeta)), ('tau', len(tau))):
        for _ in range(3):
            a, b = rng.standard_normal(dim), rng.standard_normal(dim)
            ab = ws.hessian_action(kind, a) @ b
            ba = ws.hessian_action(kind, b) @ a
            assert ab == pytest.approx(ba, rel=1e-8)
    print("✓ Hessian 对称性测试通过")


def test_tau_gradient_deterministic():
    """测试确定性目标的 τ 梯度"""
    solver, observation, _, tau, zeta, rng = create_setup(3)
    areas = solver.problem.mesh.areas[solver.problem.mesh.cloak_cells]
    d = rng.standard_normal(len(tau))

    def objective(t):
        return energy(solver, observation, t, zeta) + BETA_P * penalty(t, EPS, areas)

    g = tau_gradient_det(solver, observation, tau, zeta, BETA_P, EPS)
    assert_fd(finite_difference_check(objective, tau, d, g @ d))
    print("✓ τ 梯度差分测试通过")


def test_tau_hessian_deterministic():
    """测试确定性目标的 τ-Hessian 作用"""
    solver, observation, _, tau, zeta, rng = create_setup(4)
    d1 = rng.standard_normal(len(tau))
    d2 = rng.standard_normal(len(tau))
    workspaces = build_workspaces(solver, observation, MediumState(tau, zeta))
    analytic = tau_hessian_action_det(workspaces, d1, tau, BETA_P, EPS) @ d2

    frame = finite_difference_check(
        lambda t: tau_gradient_det(solver, observation, t, zeta, BETA_P, EPS) @ d2, tau, d1, analytic)
    assert_fd(frame)
    assert solver.counter['incremental_forward'] == 1
    assert solver.counter['incremental_adjoint'] == 1
    print("✓ τ-Hessian 差分测试通过")


def test_saa_weights():
    """测试 SAA 权重之和为 -1 且与样本矩一致"""
    q = np.array([1.0, 2.5, 0.7, 3.1])
    for beta_v in (0.0, 1.0, 4.0):
        assert saa_weights(q, beta_v).sum() == pytest.approx(-1.0, abs=1e-14)
    assert np.allclose(saa_weights(q, 0.0), -0.25)

    mean, variance = saa_moments(q)
    assert mean == pytest.approx(q.mean())
    assert variance == pytest.approx(q.var(ddof=0))
    with pytest.raises(ConfigurationError):
        saa_weights([], 1.0)
    print("✓ SAA 权重测试通过")


def test_saa_single_sample_matches_deterministic():
    """测试 M = 1、β_V = 0 时 SAA 梯度等于该样本处的确定性梯度"""
    solver, observation, _, tau, zeta, _ = create_setup(5)
    g_saa = tau_gradient_saa(solver, observation, tau, zeta[None, :], 0.0, BETA_P, EPS)
    g_det = tau_gradient_det(solver, observation, tau, zeta, BETA_P, EPS)
    assert np.allclose(g_saa, g_det, rtol=1e-10, atol=1e-14)
    print("✓ 单样本 SAA 测试通过")


def test_saa_gradient():
    """测试带方差项的 SAA 目标梯度"""
    solver, observation, measure, tau, _, rng = create_setup(6)
    samples = measure.samples(3, rng)
    design = DesignProblem(solver, observation, measure, beta_v=1.0, beta_p=BETA_P, eps=EPS)
    variant = SaaVariant(design, samples)
    d = rng.standard_normal(len(tau))

    evaluation = variant.evaluate(tau)
    q = [observation.energy(solver.solve_scattered(MediumState(tau, z), 0)) for z in samples]
    assert evaluation.objective.mean == pytest.approx(np.mean(q))
    assert evaluation.objective.variance == pytest.approx(np.var(q))

    frame = finite_difference_check(lambda t: variant.evaluate(t).total, tau, d, evaluation.gradient() @ d)
    assert_fd(frame)
    print("✓ SAA 梯度差分测试通过")


def test_taylor_gradient_dense():
    """测试稠密特征分解下 Taylor 目标的 τ 梯度"""
    solver, observation, measure, tau, _, rng = create_setup(7)
    design = DesignProblem(solver, observation, measure, beta_v=1.0, beta_p=BETA_P, eps=EPS)
    variant = TaylorVariant(design, n_eig=4, dense=True)
    d = rng.standard_normal(len(tau))

    evaluation = variant.evaluate(tau)
    state = variant.last_states[0]
    assert evaluation.objective.mean == pytest.approx(state.q_bar + 0.5 * state.eigen.eigenvalues.sum())

    frame = finite_difference_check(lambda t: variant.evaluate(t).total, tau, d, evaluation.gradient() @ d,
                                    steps=(1e-3, 1e-4, 1e-5))
    assert_fd(frame, tol=1e-4)
    print("✓ Taylor 梯度差分测试通过")


def test_taylor_solve_counts():
    """测试随机化 Taylor 评估与梯度的求解次数"""
    solver, observation, measure, tau, _, _ = create_setup(8)
    design = DesignProblem(solver, observation, measure, beta_v=1.0, beta_p=BETA_P, eps=EPS)
    n_eig, oversampling = 3, 2
    variant = TaylorVariant(design, n_eig=n_eig, oversampling=oversampling, seed=0)

    evaluation = variant.evaluate(tau)
    evaluation.gradient()
    k = n_eig + oversampling
    counter = solver.counter
    assert counter['factorization'] == 1
    assert counter['forward'] == 1
    assert counter['adjoint'] == 1
    assert counter['incremental_forward'] == 2 * k
    assert counter['incremental_adjoint'] == 2 * k
    assert counter['hessian_action'] == 2 * k
    assert counter['star_forward'] == 1
    assert counter['star_adjoint'] == 1

    # 同一种子使目标值可复现
    assert variant.evaluate(tau).total == evaluation.total
    print("✓ Taylor 求解计数测试通过")


def run_all_tests():
    """运行所有测试"""
    print("=" * 50)
    print("开始运行灵敏度模块测试")
    print("=" * 50)

    test_zeta_gradient()
    test_zeta_hessian_action()
    test_hessian_symmetry()
    test_tau_gradient_deterministic()
    test_tau_hessian_deterministic()
    test_saa_weights()
    test_saa_single_sample_matches_deterministic()
    test_saa_gradient()
    test_taylor_gradient_dense()
    test_taylor_solve_counts()

    print("\n" + "=" * 50)
    print("所有灵敏度测试完成！")
    print("=" * 50)


if __name__ == "__main__":
    run_all_tests()
