import numpy as np

from design.objective import ObservationOperator
from design.optimizer import DesignProblem, NewtonConfig, make_variant, minimize
from helmholtz.analytic import cylinder_reference, relative_l2_error
from helmholtz.problem import MediumState, ScatteringProblem
from helmholtz.system import HelmholtzSolver
from mesh.builder import GeometrySpec, build_disk_in_square
from visualization.plotter import CloakPlotter


def main():
    """演示在小网格上求解散射场并做一次确定性优化"""

    # 缩小的几何，几秒内即可完成
    spec = GeometrySpec(r1=0.5, r2=1.0, l_half=2.5, w_pml=0.5, h=0.15)
    print("正在生成网格...")
    mesh = build_disk_in_square(spec)

    print("\n网格信息:")
    for key, value in mesh.summary().items():
        print(f"  {key}: {value}")

    problem = ScatteringProblem(mesh, k0=np.pi, pml_start=spec.l_half - spec.w_pml)
    solver = HelmholtzSolver(problem)
    observation = ObservationOperator(mesh)

    # 无斗篷时与解析解比较
    u = solver.solve_scattered(MediumState.homogeneous(mesh), 0)
    reference = cylinder_reference(mesh, problem.k0, spec.r1)
    print(f"\n无斗篷散射能量 Q = {observation.energy(u):.6e}")
    print(f"与解析解的相对 L2 误差: {relative_l2_error(mesh, u, reference):.3%}")

    # 确定性优化
    print("\n开始确定性优化...")
    config = NewtonConfig(n_qn=5, beta_p=1e-3)
    design = DesignProblem(solver, observation, None, beta_v=0.0, beta_p=config.beta_p, eps=config.eps)
    tau, trace = minimize(config, make_variant(design, config), np.zeros(design.n_design))

    print("\n" + "=" * 60)
    print("优化完成！")
    print("=" * 60)
    print(trace.to_frame()[['iteration', 'objective', 'grad_ratio', 'cg_iterations', 'step']].to_string(index=False))

    u_opt = solver.solve_scattered(MediumState(tau, np.zeros(len(mesh.cloak_vertices))), 0)
    print(f"\n优化后散射能量 Q = {observation.energy(u_opt):.6e}")
    print(f"τ 范围: [{tau.min():.3f}, {tau.max():.3f}]")

    # 生成图表
    CloakPlotter(mesh).generate_report('example_report', scattered=u_opt, tau=tau, trace=trace.to_frame())
    print("\n图表已生成至: example_report")
    return tau, trace


if __name__ == "__main__":
    tau, trace = main()
