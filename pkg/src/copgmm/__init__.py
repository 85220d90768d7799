"""Gaussian-copula regression for multivariate longitudinal claims with
lapse, estimated by pairwise composite likelihood and GMM."""

__version__ = "0.1.0"

from .exceptions import InputError, NumericalError
from .tweedie import (TweedieParams, BernoulliParams, tweedie_pzero,
                      tweedie_density, tweedie_cdf, tweedie_quantile,
                      tweedie_sample)
from .mvnorm import (std_normal_cdf, std_normal_pdf, std_normal_quantile,
                     bvn_cdf, mvn_cdf)
from .copulas import (copula_cdf, copula_h1, copula_density2,
                      drho_copula_cdf2, drho_copula_h, copula_partial_md,
                      copula_partial2_md, h1_d, h2_d, drho_partial_copula,
                      drho_partial2_copula)
from .temporal import (TemporalSpec, AssociationParams, build_psi,
                       assemble_sigma_full, assemble_sigma_pair)
from .glm import (MarginalModel, fit_logistic, fit_tweedie,
                  marginal_cdf_triplet, margin_arrays, MarginArrays)
from .gmm import GmmResult
from .crosssec import (pair_density, pair_score, fit_pairwise, fit_gmm,
                       pairwise_asymptotic_cov)
from .dropout import (lapse_time_prob, conditional_pair_density,
                      dropout_score, build_dropout_data,
                      fit_dropout_pairwise, fit_dropout_gmm)
from .panel import PanelDataset, read_panel_csv, write_panel_csv
from .simulate import StudyConfig, StudyReport, generate_panel, run_study
