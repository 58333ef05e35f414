from fem.assembly import (PHI, RegionQuadrature, assemble_scalar_form, element_gradients,
                          quadrature_eval, quadrature_points, select_cells)
from fem.solver import Factorization, SolveCounter, factorize, solve

__all__ = [
    'PHI', 'RegionQuadrature', 'assemble_scalar_form', 'element_gradients', 'quadrature_eval',
    'quadrature_points', 'select_cells', 'Factorization', 'SolveCounter', 'factorize', 'solve',
]
