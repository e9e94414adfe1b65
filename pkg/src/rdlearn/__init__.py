"""Doubly robust direct learning of conditional average treatment effects.

The estimation pipeline is two-step: fit nuisances (propensity scores and
the main effect), then regress the main-effect residual on the simplex-
encoded arms with inverse-propensity weights. Known-propensity inference
and a Monte Carlo replication harness are included.
"""

from .core import CsvSchema, Dataset, RngSpec, augment, load_csv, write_csv
from .errors import (ContractError, DomainError, ParseError, RdlearnError,
                     SchemaError, SingularMatrixError, ValidationError)
from .simplex import SimplexVertices, build_vertices, effects_from_f, f_from_effects
from .solvers import (KernelFit, LassoFit, WlsFit, gaussian_gram,
                      median_bandwidth, soft_threshold, weighted_kernel_ridge,
                      weighted_lasso, weighted_ls)
from .nuisance import (MainEffectModel, PropensityModel, clip_and_invert,
                       fit_main_effect, fit_propensity_mlogit,
                       known_constant_propensity, known_function_propensity,
                       qlearning_main_effect, zero_main_effect)
from .estimators import (ItrRule, TreatmentEffectFit, apply_itr, fit_d,
                         fit_from_json, fit_q, fit_rd, fit_rd_binary,
                         fit_to_json, itr, predict_effects)
from .inference import (GammaEstimate, InferenceReport, bias_of_naive_beta,
                        binary_unbiased_beta, estimate_gamma,
                        sandwich_covariance, significance_stars, wald_table,
                        wald_tests)
from .simulation import (DgpSpec, MetricsRow, Oracle, SimOptions, case_oracle,
                         empirical_value, generate, prediction_error,
                         run_replications, stepp_export, summarize,
                         true_propensity_model)

__version__ = "0.1.0"
