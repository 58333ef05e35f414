from helmholtz.analytic import cylinder_reference, relative_l2_error, sound_hard_cylinder
from helmholtz.problem import (ComplexField, MediumState, PmlCoefficients, ScatteringProblem, Source,
                               incident_at_vertices, incident_field, pml_coefficients, pml_sigma)
from helmholtz.system import (HelmholtzAssembler, HelmholtzSolver, assemble_load, assemble_system,
                              solve_scattered)

__all__ = [
    'cylinder_reference', 'relative_l2_error', 'sound_hard_cylinder', 'ComplexField', 'MediumState',
    'PmlCoefficients', 'ScatteringProblem', 'Source', 'incident_at_vertices', 'incident_field',
    'pml_coefficients', 'pml_sigma', 'HelmholtzAssembler', 'HelmholtzSolver', 'assemble_load',
    'assemble_system', 'solve_scattered',
]
