"""nnreg: non-negative least squares for sparse high-dimensional regression.

Margin diagnostics, support recovery with data-driven model-size selection,
comparator estimators, random design generators, and a seeded Monte-Carlo
experiment harness with a CLI front end.
"""

from .errors import (CyclingError, InvalidInputError, MarginError,
                     NonConvergenceError, PathOverrunError,
                     SingularMatrixError)
from .rng import substream
from .nnls import (GroundTruth, KktReport, NnlsSolution, RegressionInstance,
                   decouple, kkt_check, self_reg_decompose, solve_nnls,
                   uniqueness_report)
from .simplexqp import (MarginCertificate, self_reg_margin,
                        simplex_min_quadratic, support_margin)
from .diagnostics import (DiagnosticsReport, restricted_eig_upper,
                          support_constants)
from .estimators import (LassoPath, OmpResult, RecoveryResult, nn_lasso,
                         nn_lasso_lambda_max, nn_lasso_path, omp,
                         recover_support, ridge, ridge_cv,
                         select_model_size, sigma_naive, threshold_hard)
from .designs import (DesignSpec, build_deconv_instance,
                      build_kernel_recovery_design, ensemble_moments,
                      equicorr_gram, generate, glp_check, group_testing_demo,
                      load_design, load_instance, negcorr_gram,
                      power_decay_gram, save_design, save_instance)
from .simlab import (EXPERIMENTS, ExperimentReport, active_size_experiment,
                     deconv_experiment, recovery_phase_experiment,
                     sample_active_size, tau_contour_study, write_report)

__version__ = "0.1.0"
