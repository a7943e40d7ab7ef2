"""Bayesian optimization of min-max problems over a continuous parameter and discrete slices."""

from .baselines import BetaSchedule, WabersichState, thompson_step, wabersich_step
from .entropy_search import (
    EsConfig,
    RepresentativeSet,
    conditional_popt,
    entropy,
    es_acquisition,
    es_scores,
    p_opt,
    select_representative_points,
)
from .ep import EpSettings, LinearConstraint, ep_probability
from .gp import GpPosterior, KernelParams, fantasize, fit, predict, sample_joint
from .knowledge_gradient import KgConfig, kg_acquisition, kg_scores, posterior_mean_minmax
from .minmax import grid_minmax, worst_case_profile
from .problems import PROBLEM_NAMES, MinMaxProblem, make_problem

__version__ = "0.1.0"
