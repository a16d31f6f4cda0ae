"""Dynamic pricing with GLM demand under abrupt parameter changes."""

__version__ = "0.1.0"

from .glm import GAUSSIAN, LOGISTIC, POISSON, GlmFamily, get_family, optimal_price  # noqa: E402
from .estimator import LassoConfig, cross_validate_lambda, lambda_for, lasso_fit  # noqa: E402
from .detector import CptConfig, CptScanner, cpt_scan, plrt_statistic  # noqa: E402
from .policies import POLICY_NAMES, ExperimentSet, PolicyConfig, make_policy  # noqa: E402
from .market import Environment, run_episode, scenario  # noqa: E402
from .segmenter import bic_segment, replay_environment  # noqa: E402
