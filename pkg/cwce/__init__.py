"""
cwce-lab: simulation, exact cross-world causal effects and REML plug-in
estimation of individual causal effects in longitudinal data.
"""
from cwce.cwce_engine import History, cwce, cwce_monte_carlo, predict_potential_outcome
from cwce.distributions import CwceDistribution, Degenerate, Discrete, Gaussian, Grid
from cwce.reml_fit import ModelSpec, PanelView, RemlFit, fit_lmm_reml, fit_naive_pooled
from cwce.scm_core import (
    EffectMeasure,
    ExposureRegime,
    Panel,
    ScmKind,
    ScmParams,
    closed_form_effect,
    simulate_panel,
    true_ice,
)

__version__ = "0.1.0"
