"""Mean-field and partially-factorized variational Bayes for probit regression."""

__version__ = "0.1.0"

from .errors import (ConstantPredictor, DataError, DimensionMismatch, MaxIterExceeded, MissingColumn,
                     NonBinaryResponse, NonConvergence, NumericalError, ParseError, PfmvbError,
                     ScalePolicyExceeded, SchemaError, SingularSystem)
from .linalg import (Dataset, KernelPrecomp, Path, PriorSpec, Scaling, Standardization, build_precomp,
                     quad_form_new, sample_v_gaussian)
from .truncnorm import (TruncNormParams, log_ndtr, mills_ratio, sample_std_above, tn_mean, tn_sample,
                        tn_second_moment, tn_var)
from .mf import MfPosterior, fit_mf, mf_log_posterior, mf_log_posterior_grad, mf_predict
from .pfm import (Moments, PfmPosterior, Prediction, SunParams, fit_pfm, fixed_point_residual, joint_elbo,
                  pfm_elbo, pfm_elbo_constant, pfm_moments, pfm_predict, pfm_sample, sun_params)
from .oracle import (DensityTable, GibbsChain, exact_posterior_quadrature_1d, gibbs_sample,
                     solve_fixed_point_direct)
from .diagnostics import (ComparisonReport, batch_means_se, compare_methods, noise_floor, simulate_dataset,
                          simulate_split, test_deviance, wasserstein_1d, wasserstein_columns)
from .dataio import FeatureMap, ingest_csv, read_table, write_csv
from .artifact import ModelArtifact, artifact_from_posterior
