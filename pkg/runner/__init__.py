from runner.config import PRESETS, RunConfig
from runner.runs import (EigenStudy, ForwardResult, OptimizeResult, RunContext, build_mesh, open_run,
                         run_eig_study, run_forward, run_mesh_gen, run_optimize, run_robustness_study,
                         run_taylor_study)

__all__ = [
    'PRESETS', 'RunConfig', 'EigenStudy', 'ForwardResult', 'OptimizeResult', 'RunContext', 'build_mesh',
    'open_run', 'run_eig_study', 'run_forward', 'run_mesh_gen', 'run_optimize', 'run_robustness_study',
    'run_taylor_study',
]
