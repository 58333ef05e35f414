from uncertainty.random_field import GaussianMeasure
from uncertainty.spectral import (EigenPairs, ResidualStudy, captured_trace_fraction, dense_gen_eig,
                                  dense_operator, randomized_gen_eig, t2_moments, taylor_residual_study)

__all__ = [
    'GaussianMeasure', 'EigenPairs', 'ResidualStudy', 'captured_trace_fraction', 'dense_gen_eig',
    'dense_operator', 'randomized_gen_eig', 't2_moments', 'taylor_residual_study',
]
