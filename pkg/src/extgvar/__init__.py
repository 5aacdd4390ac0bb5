"""Generalised variance functionals ``psi_k``: computation, unbiased
estimation, maximum-diversity measures and ``psi~_k``-optimal designs."""

from .design import (DesignMeasure, DesignReport, DesignSpace, design_criterion, efficiency,
                     efficiency_table, info_matrix, log_design_criterion, polynomial_design_space,
                     solve_design, variance_function, variance_function_complement)
from .errors import (DegenerateInputError, DegenerateMeasureError, DomainError,
                     InsufficientSampleError, SingularMatrixError, TooLargeError)
from .estimate import (EstimateReport, Sample, asymptotic_variance, beta_dk, estimate_psi,
                       estimate_psi_complement, omega, scale_factor, u_stat_oracle)
from .maxdiv import (complement_condition, dual_certificate, optimality_gap, polar_function,
                     solve_max_div)
from .measure import DiscreteMeasure
from .simulate import GeneratorSpec, MonteCarloReport, draw_sample, run_monte_carlo, theoretical_psi
from .symfun import CovMatrix, PsiValue, elem_sym, grad_psi, phi_p, psi, psi_via_complement

__version__ = "0.1.0"
