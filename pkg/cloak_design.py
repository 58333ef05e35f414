"""
斗篷设计命令行入口

用法示例:
    python cloak_design.py forward --set geometry.h=0.2
    python cloak_design.py optimize --config run.yaml --variant taylor
    python cloak_design.py robustness-study --designs out_det/design.csv out_t2/design.csv

退出码: 0 成功，2 配置错误，3 求解失败。
"""
import argparse
import logging
import sys
from typing import List, Optional

from errors import CloakDesignError, ConfigurationError, DimensionError, SolverError
from runner.config import RunConfig
from runner.runs import (run_eig_study, run_forward, run_mesh_gen, run_optimize, run_robustness_study,
                         run_taylor_study)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

COMMANDS = ('forward', 'optimize', 'eig-study', 'taylor-study', 'robustness-study', 'mesh-gen')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cloak_design', description='声学隐身斗篷的不确定性优化设计')
    sub = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='YAML 配置文件')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='覆盖配置项，如 --set physics.k0=3.14 (可重复)')
    common.add_argument('--output', type=str, default=None, help='输出目录 (output.directory)')
    common.add_argument('--log-level', type=str, default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='日志级别')

    sub.add_parser('forward', parents=[common], help='求解散射场并导出')
    p = sub.add_parser('optimize', parents=[common], help='Newton-pCG 优化设计场')
    p.add_argument('--variant', type=str, default=None, help='deterministic / saa / taylor')
    p = sub.add_parser('eig-study', parents=[common], help='广义特征值衰减')
    p.add_argument('--design', type=str, default=None, help='设计文件 (design.csv)')
    p = sub.add_parser('taylor-study', parents=[common], help='Taylor 残差均方误差表')
    p.add_argument('--design', type=str, default=None, help='设计文件 (design.csv)')
    p.add_argument('--samples', type=int, default=None, help='样本数')
    p = sub.add_parser('robustness-study', parents=[common], help='多个设计在固定样本下的均值与标准差场')
    p.add_argument('--designs', type=str, nargs='+', default=None, help='设计文件列表')
    p.add_argument('--samples', type=int, default=None, help='样本数')
    p = sub.add_parser('mesh-gen', parents=[common], help='生成逐次加密的网格')
    p.add_argument('--levels', type=int, default=None, help='网格层数')
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.output is not None:
        overrides.append(f'output.directory={args.output}')
    if getattr(args, 'variant', None) is not None:
        overrides.append(f'variant={args.variant}')
    if getattr(args, 'design', None) is not None:
        overrides.append(f'study.design={args.design}')
    return RunConfig.from_yaml(args.config, overrides)


def dispatch(args: argparse.Namespace, config: RunConfig) -> None:
    if args.command == 'forward':
        result = run_forward(config)
        print("\n散射能量:")
        for _, row in result.summary.iterrows():
            line = f"  源 {int(row['source'])} (k={row['k']:.4f}): Q = {row['Q']:.6e}"
            if 'analytic_rel_error' in row:
                line += f"，解析解相对误差 {row['analytic_rel_error']:.3%}"
            print(line)
    elif args.command == 'optimize':
        result = run_optimize(config)
        values = result.trace.objective_values
        print(f"\n终止原因: {result.trace.termination}")
        print(f"Newton 迭代: {result.trace.n_iterations}")
        print(f"目标函数: {values[0]:.6e} -> {values[-1]:.6e} (下降 {result.reduction:.1%})")
    elif args.command == 'eig-study':
        study = run_eig_study(config)
        print("\n特征值摘要:")
        print(study.summary.to_string(index=False))
    elif args.command == 'taylor-study':
        table = run_taylor_study(config, n_samples=args.samples)
        print("\nTaylor 残差:")
        print(table.to_string(index=False))
    elif args.command == 'robustness-study':
        summary = run_robustness_study(config, args.designs, args.samples)
        print("\n稳健性摘要:")
        print(summary.to_string(index=False))
    elif args.command == 'mesh-gen':
        meshes = run_mesh_gen(config, args.levels)
        print("\n网格层级:")
        for level, mesh in enumerate(meshes, start=1):
            s = mesh.summary()
            print(f"  mesh{level}: {s['vertices']} 个顶点，状态自由度 {s['state_dofs']}，"
                  f"随机自由度 {s['random_dofs']}，设计自由度 {s['design_dofs']}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    print("=" * 60)
    print(f"斗篷设计: {args.command}")
    print("=" * 60)
    try:
        config = load_config(args)
        dispatch(args, config)
    except (ConfigurationError, DimensionError, FileNotFoundError) as exc:
        print(f"配置错误: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"求解失败: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(f"诊断信息: {exc.diagnostics}", file=sys.stderr)
        return EXIT_SOLVER
    except CloakDesignError as exc:
        print(f"运行失败: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    print("\n" + "=" * 60)
    print(f"结果已写入: {config.output.directory}")
    print("=" * 60)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
