import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from errors import ConfigurationError, DimensionError
from fem.assembly import assemble_scalar_form
from helmholtz.analytic import cylinder_reference, relative_l2_error, sound_hard_cylinder
from helmholtz.problem import (ComplexField, MediumState, ScatteringProblem, Source, incident_at_vertices,
                               incident_field, pml_coefficients, pml_sigma)
from helmholtz.system import HelmholtzSolver, assemble_load, assemble_system
from mesh.builder import GeometrySpec, Mesh, Region, build_disk_in_square

SMALL = GeometrySpec(r1=0.5, r2=1.0, l_half=2.0, w_pml=0.5, h=0.25)


def create_problem(spec: GeometrySpec = SMALL, **kwargs) -> ScatteringProblem:
    mesh = build_disk_in_square(spec)
    return ScatteringProblem(mesh, k0=np.pi, pml_start=spec.l_half - spec.w_pml, **kwargs)


def test_pml_coefficients_without_absorption():
    """测试 σ = 0 时 PML 系数退化为普通 Helmholtz"""
    k = 2.5
    zero = np.zeros(4)
    c = pml_coefficients(k, zero, zero)
    assert np.allclose(c.a1, 1.0) and np.allclose(c.a3, 1.0)
    assert np.allclose(c.a2, 0.0) and np.allclose(c.a4, 0.0)
    assert np.allclose(c.b1, k * k) and np.allclose(c.b2, 0.0)
    print("✓ 无吸收 PML 系数测试通过")


def test_pml_profile():
    """测试二次吸收剖面在内边界为 0、外边界为 σ0"""
    problem = create_problem()
    points = np.array([[0.0, 0.0], [1.5, 0.3], [1.75, 0.0], [2.0, -2.0]])
    s1, s2 = pml_sigma(points, problem)

    assert problem.sigma0 == pytest.approx(2.0 * np.pi)
    assert s1[0] == 0.0 and s2[0] == 0.0
    assert s1[1] == 0.0
    assert s1[2] == pytest.approx(0.25 * problem.sigma0)
    assert s1[3] == pytest.approx(problem.sigma0) and s2[3] == pytest.approx(problem.sigma0)
    print("✓ PML 吸收剖面测试通过")


def test_incident_field_gradient():
    """测试入射波梯度与有限差分一致"""
    rng = np.random.default_rng(0)
    points = rng.uniform(-2.0, 2.0, size=(20, 2))
    k, direction, h = 3.0, (0.6, 0.8), 1e-6
    u1, u2, g1, g2 = incident_field(points, k, direction)

    assert np.allclose(np.hypot(u1, u2), 1.0)
    for d in range(2):
        shift = np.zeros(2)
        shift[d] = h
        p1, p2, _, _ = incident_field(points + shift, k, direction)
        m1, m2, _, _ = incident_field(points - shift, k, direction)
        assert np.allclose((p1 - m1) / (2 * h), g1[:, d], atol=1e-7)
        assert np.allclose((p2 - m2) / (2 * h), g2[:, d], atol=1e-7)
    print("✓ 入射波梯度测试通过")


def test_problem_validation():
    """测试散射问题参数校验"""
    mesh = build_disk_in_square(SMALL)
    with pytest.raises(ConfigurationError):
        ScatteringProblem(mesh, k0=0.0)
    with pytest.raises(ConfigurationError):
        ScatteringProblem(mesh, sources=[Source((1.0, 1.0))])
    with pytest.raises(ConfigurationError):
        ScatteringProblem(mesh, observation='cloak')
    with pytest.raises(ConfigurationError):
        ScatteringProblem(mesh, sources=[])

    problem = ScatteringProblem(mesh)
    assert problem.x_start == pytest.approx(SMALL.l_half - SMALL.w_pml)
    assert problem.w_pml == pytest.approx(SMALL.w_pml)
    print("✓ 散射问题校验测试通过")


def test_block_structure():
    """测试实值分块系统具有 [[R, -S], [S, R]] 结构"""
    problem = create_problem()
    mesh = problem.mesh
    rng = np.random.default_rng(1)
    medium = MediumState(0.3 * rng.standard_normal(len(mesh.cloak_cells)),
                         0.3 * rng.standard_normal(len(mesh.cloak_vertices)))
    A = assemble_system(problem, medium, 0).tocsr()
    n = mesh.n_vertices

    assert A.shape == (2 * n, 2 * n)
    assert abs(A[:n, :n] - A[n:, n:]).max() == 0.0
    assert abs(A[:n, n:] + A[n:, :n]).max() == 0.0
    print("✓ 分块结构测试通过")


def test_constant_design_scales_cloak_mass():
    """测试常数设计场 τ = t 时系统矩阵只在斗篷质量项上变化 -k^2 (e^{2t} - 1) M_cloak"""
    problem = create_problem()
    mesh = problem.mesh
    n = mesh.n_vertices
    t = 0.35
    medium = MediumState(np.full(len(mesh.cloak_cells), t), np.zeros(len(mesh.cloak_vertices)))

    A = assemble_system(problem, medium, 0).tocsr()
    A0 = assemble_system(problem, MediumState.homogeneous(mesh), 0).tocsr()
    assert A.shape == (2 * n, 2 * n)

    k = problem.wavenumber(0)
    expected = -k * k * (np.exp(2.0 * t) - 1.0) * assemble_scalar_form(mesh, Region.CLOAK, 1.0, 'mass').toarray()
    diff = (A - A0).toarray()
    assert np.allclose(diff[:n, :n], expected, atol=1e-12)
    assert np.allclose(diff[n:, n:], expected, atol=1e-12)
    assert np.allclose(diff[:n, n:], 0.0)

    u = HelmholtzSolver(problem).solve_scattered(medium, 0)
    assert np.all(np.isfinite(u.complex()))
    print("✓ 常数设计场质量项测试通过")


def test_medium_only_changes_cloak_rows():
    """测试设计场与随机场只影响斗篷顶点对应的行"""
    problem = create_problem()
    mesh = problem.mesh
    n = mesh.n_vertices
    base = MediumState.homogeneous(mesh)
    medium = MediumState(np.full(len(mesh.cloak_cells), 0.4), np.full(len(mesh.cloak_vertices), -0.1))

    diff = (assemble_system(problem, medium, 0) - assemble_system(problem, base, 0)).tocsr()
    diff.eliminate_zeros()
    rows = np.unique(diff.nonzero()[0])
    allowed = np.concatenate([mesh.cloak_vertices, mesh.cloak_vertices + n])
    assert len(rows) > 0
    assert np.all(np.isin(rows, allowed))
    assert abs(diff[:n, n:]).max() == 0.0

    with pytest.raises(DimensionError):
        assemble_system(problem, MediumState(np.zeros(3), np.zeros(len(mesh.cloak_vertices))), 0)
    print("✓ 斗篷局部依赖测试通过")


def test_uncloaked_matches_plain_host():
    """测试 τ = ζ = 0 时斗篷区域与背景介质等价"""
    problem = create_problem()
    mesh = problem.mesh
    tags = np.where(mesh.tags == int(Region.CLOAK), int(Region.HOST), mesh.tags)
    plain_mesh = Mesh(mesh.vertices, mesh.triangles, tags, mesh.facets, mesh.normals)
    plain = ScatteringProblem(plain_mesh, k0=problem.k0, pml_start=problem.x_start)

    u = HelmholtzSolver(problem).solve_scattered(MediumState.homogeneous(mesh), 0)
    v = HelmholtzSolver(plain).solve_scattered(MediumState.homogeneous(plain_mesh), 0)
    assert np.allclose(u.complex(), v.complex(), atol=1e-10)

    load = assemble_load(plain, MediumState.homogeneous(plain_mesh), 0)
    assert np.any(load != 0.0)
    print("✓ 无斗篷等价性测试通过")


def test_analytic_cylinder_convergence():
    """测试声硬圆柱散射与解析解的误差随网格加密下降"""
    errors = []
    for h in (0.25, 0.125):
        spec = GeometrySpec(r1=0.5, r2=1.0, l_half=2.5, w_pml=1.0, h=h)
        problem = create_problem(spec)
        u = HelmholtzSolver(problem).solve_scattered(MediumState.homogeneous(problem.mesh), 0)
        reference = cylinder_reference(problem.mesh, problem.k0, spec.r1)
        errors.append(relative_l2_error(problem.mesh, u, reference))

    coarse, fine = errors
    assert fine < coarse
    # L2 误差 O(h^2)
    assert coarse / fine >= 3.0
    assert coarse < 0.3
    assert fine < 0.15
    print(f"✓ 解析解对比测试通过 (误差 {coarse:.3%} -> {fine:.3%})")


def test_analytic_series_symmetry():
    """测试分波级数解关于入射方向对称"""
    points = np.array([[1.2, 0.7], [-0.4, 1.5]])
    u = sound_hard_cylinder(points, np.pi, 0.5)
    mirrored = sound_hard_cylinder(points * [1.0, -1.0], np.pi, 0.5)
    rotated = sound_hard_cylinder(points @ np.array([[0.0, 1.0], [-1.0, 0.0]]), np.pi, 0.5, direction=(0.0, 1.0))
    assert np.allclose(u, mirrored)
    assert np.allclose(u, rotated)
    print("✓ 分波级数对称性测试通过")


def test_factorization_cache():
    """测试同频率不同方向共用分解，不同频率重新分解"""
    mesh = build_disk_in_square(SMALL)
    sources = [Source((1.0, 0.0)), Source((0.0, 1.0)), Source((1.0, 0.0), 0.5)]
    problem = ScatteringProblem(mesh, k0=np.pi, sources=sources, pml_start=SMALL.l_half - SMALL.w_pml)
    solver = HelmholtzSolver(problem)
    medium = MediumState.homogeneous(mesh)

    for i in range(2):
        solver.solve_scattered(medium, i)
    assert solver.counter['factorization'] == 1
    assert solver.counter['forward'] == 2

    solver.solve_scattered(medium, 2)
    assert solver.counter['factorization'] == 2

    scattered = solver.solve_scattered(medium, 0)
    total = scattered + incident_at_vertices(problem, 0)
    assert np.allclose((total - scattered).complex(), np.exp(1j * problem.k0 * mesh.vertices[:, 0]))
    assert solver.counter['factorization'] == 2

    with pytest.raises(DimensionError):
        solver.solve(medium, 0, np.zeros(3))
    print("✓ 分解缓存测试通过")


def test_complex_field_helpers():
    """测试复值场的拼接与运算"""
    field = ComplexField(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    assert np.array_equal(ComplexField.from_stacked(field.stacked()).complex(), field.complex())
    assert np.allclose(field.magnitude, [1.0, 2.0])
    assert np.allclose(field.scaled(2.0).u2, [0.0, 4.0])
    print("✓ 复值场测试通过")


def run_all_tests():
    """运行所有测试"""
    print("=" * 50)
    print("开始运行 Helmholtz 模块测试")
    print("=" * 50)

    test_pml_coefficients_without_absorption()
    test_pml_profile()
    test_incident_field_gradient()
    test_problem_validation()
    test_block_structure()
    test_constant_design_scales_cloak_mass()
    test_medium_only_changes_cloak_rows()
    test_uncloaked_matches_plain_host()
    test_analytic_cylinder_convergence()
    test_analytic_series_symmetry()
    test_factorization_cache()
    test_complex_field_helpers()

    print("\n" + "=" * 50)
    print("所有 Helmholtz 测试完成！")
    print("=" * 50)


if __name__ == "__main__":
    run_all_tests()
