"""
Experiment recipes.

Each recipe turns an ExperimentConfig into plot-ready CSV/JSON artifacts:
simulate a panel, fit it by REML on the (n, m) subset grid, estimate
individual effects and tabulate densities or classification tables. The
pipeline stages behind the ``simulate``, ``fit`` and ``cwce`` subcommands
live here as well.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from cwce.cwce_engine import History, cwce
from cwce.distributions import CwceDistribution, Discrete, Gaussian, Grid
from cwce.errors import UnsupportedCombinationError
from cwce.exception_tracker import exception_handler
from cwce.inference import (
    DensityMode,
    classification_table,
    estimate_cwce,
    expected_cwce,
    map_ice,
    marginal_ice_density,
)
from cwce.performance import log_resource_usage
from cwce.reml_fit import ModelSpec, PanelView, RemlFit, fit_lmm_reml, fit_naive_pooled
from cwce.rng import STREAM_REPLICATE, derive_seed
from cwce.scm_core import (
    EffectMeasure,
    Panel,
    ScmKind,
    ScmParams,
    as_regime,
    closed_form_effect,
    ice_distribution,
    simulate_panel,
    true_eice,
    true_ice,
)
from utils.artifact_store import ArtifactStore
from utils.experiment_models import ExperimentConfig, Recipe
from utils.panel_io import write_panel

logger = logging.getLogger("cwce.recipes")

DENSITY_POINTS = 512
EXPOSURE_PATTERNS = ((1, 1), (1, 0), (0, 1), (0, 0))

Cell = Tuple[int, int]


def law_frame(law: CwceDistribution, n_points: int = DENSITY_POINTS) -> pd.DataFrame:
    """Tabulate a CWCE law: density on a grid, or the atoms of a pmf."""
    if isinstance(law, Gaussian):
        x = np.linspace(law.mean() - 6.0 * law.sd, law.mean() + 6.0 * law.sd, n_points)
        return pd.DataFrame({"x": x, "density": law.pdf(x)})
    if isinstance(law, Grid):
        return pd.DataFrame({"x": law.points, "density": law.density})
    if isinstance(law, Discrete):
        return pd.DataFrame({"value": law.support.astype(int), "prob": law.probs})
    return pd.DataFrame({"value": [law.mean()], "prob": [1.0]})


def _law_summary(law: CwceDistribution) -> Dict[str, float]:
    row = {"map_ice": map_ice(law), "expected_cwce": expected_cwce(law), "cwce_var": law.variance()}
    if isinstance(law, Discrete):
        row.update(p_minus1=law.p_minus1, p_0=law.p_0, p_plus1=law.p_plus1)
    return row


def _cell_dir(cell: Cell) -> str:
    return f"n{cell[0]}_m{cell[1]}"


def _map_parallel(fn: Callable, items: Sequence, threads: int) -> List:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def _simulate(config: ExperimentConfig, store: ArtifactStore, threads: int) -> Panel:
    params = config.resolved_scm()
    panel = simulate_panel(params, config.n, config.m, config.seed, threads)
    write_panel(panel, str(store.path("panel/panel.csv")))
    store.register_file("panel/panel.csv")
    store.register_file("panel/panel.meta.json")
    log_resource_usage("simulate")
    return panel


def _fit_cell(panel: Panel, cell: Cell) -> Tuple[Panel, RemlFit]:
    sub = panel.subset(*cell)
    view = PanelView.from_panel(sub, ModelSpec.for_kind(panel.params.kind))
    fit = fit_lmm_reml(view)
    if not fit.converged:
        logger.warning(f"Fit for cell {cell} did not converge (gradient norm {fit.gradient_norm:.3e})")
    return sub, fit


def _write_fit(store: ArtifactStore, relative: str, fit: RemlFit) -> None:
    payload = fit.model_dump(mode="json", exclude={"trace"})
    payload["tau_hat"] = [float(v) for v in fit.tau_hat]
    store.write_json(relative, payload)


def _estimate_cell(config: ExperimentConfig, panel: Panel, store: ArtifactStore, cell: Cell, prefix: str):
    """Fit one subset cell and estimate every individual's CWCE; None when the fit failed to converge."""
    sub, fit = _fit_cell(panel, cell)
    _write_fit(store, f"{prefix}/{_cell_dir(cell)}/fit.json", fit)
    if not fit.converged:
        return sub, fit, None
    laws = [
        estimate_cwce(fit, History.from_individual(ind, sub.params, cell[1]), config.k, config.regime, sub.params)
        for ind in sub.individuals
    ]
    return sub, fit, laws


@exception_handler
def stage_simulate(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> Panel:
    """Simulate the configured panel and write it with its metadata sidecar."""
    return _simulate(config, store, threads)


@exception_handler
def stage_fit(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> Dict[Cell, RemlFit]:
    """Simulate, then fit the REML model and the naive pooled model on every subset cell."""
    panel = _simulate(config, store, threads)
    if panel.params.kind == ScmKind.CROSSOVER:
        raise UnsupportedCombinationError("The crossover design has no mixed model to fit")

    def fit_one(cell: Cell):
        sub, fit = _fit_cell(panel, cell)
        naive = fit_naive_pooled(PanelView.from_panel(sub, fit.spec))
        _write_fit(store, f"fits/{_cell_dir(cell)}/fit.json", fit)
        return cell, fit, naive

    results = _map_parallel(fit_one, config.subset_grid, threads)
    rows = []
    for (n_sub, m_sub), fit, naive in results:
        tau = fit.tau_hat
        rows.append({
            "n": n_sub, "m": m_sub, "converged": fit.converged,
            "beta1": fit.coef("lag1"), "beta2": fit.coef("lag2"), "beta_c": fit.coef("confounder"),
            "tau0": tau[0], "tau1": tau[1], "tau2": tau[2], "sigma": fit.sigma,
            "naive_beta1": naive.coef("lag1"), "naive_beta2": naive.coef("lag2"),
        })
    store.write_csv("fits/summary.csv", pd.DataFrame(rows))
    return {cell: fit for cell, fit, _ in results}


@exception_handler
def stage_cwce(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> pd.DataFrame:
    """Simulate, then compute every individual's exact CWCE under the true parameters."""
    panel = _simulate(config, store, threads)
    frame = cwce_rows(panel, config, threads)
    store.write_csv("cwce/summary.csv", frame)
    return frame


def recipe_fig5(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Analytic population ICE density with the ACE marker."""
    params = config.resolved_scm()
    law = ice_distribution(params, config.regime, config.k)
    store.write_csv("fig5/ice_density.csv", law_frame(law, 2048))
    ace = closed_form_effect(params, EffectMeasure.ACE, config.regime, config.k)
    store.write_json("fig5/ace.json", {"ace": ace, "ice_mean": law.mean(), "ice_var": law.variance()})


def recipe_fig7(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Per-individual ICE against EICE on the log-normal scale, with the sample ACE."""
    panel = _simulate(config, store, threads)
    params = panel.params
    rows = []
    for index, ind in enumerate(panel.individuals):
        rows.append({
            "id": index,
            "c_prev": float(ind.c[config.k - 2]),
            "ice": true_ice(ind, params, config.regime, config.k),
            "eice": true_eice(ind, params, config.regime, config.k),
        })
    frame = pd.DataFrame(rows)
    store.write_csv("fig7/ice_eice.csv", frame)
    summary = {
        "sample_ace": float(frame["ice"].mean()),
        "ace": closed_form_effect(params, EffectMeasure.ACE, config.regime, config.k),
        "cace": {
            str(value): closed_form_effect(params, EffectMeasure.CACE, config.regime, config.k, value)
            for value in params.confounder_values
        },
    }
    store.write_json("fig7/summary.json", summary)


def recipe_fig8(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """True-parameter CWCE laws for individuals with each early exposure pattern, at several horizons."""
    panel = _simulate(config, store, threads)
    params = panel.params
    for pattern in EXPOSURE_PATTERNS:
        match = next(
            (i for i, ind in enumerate(panel.individuals) if tuple(int(v) for v in ind.a[:2]) == pattern),
            None,
        )
        if match is None:
            logger.warning(f"No individual with exposure pattern {pattern}; skipped")
            continue
        ind = panel.individuals[match]
        tag = "".join(str(v) for v in pattern)
        for h in config.horizons:
            law = cwce(History.from_individual(ind, params, h), params, config.k, config.regime, allow_future=True)
            store.write_csv(f"fig8/pattern_{tag}/h{h}.csv", law_frame(law))
        store.write_json(f"fig8/pattern_{tag}/individual.json", {
            "id": match,
            "true_ice": true_ice(ind, params, config.regime, config.k),
        })


def _plugin_recipe(config: ExperimentConfig, store: ArtifactStore, threads: int, prefix: str) -> None:
    panel = _simulate(config, store, threads)

    def cell_job(cell: Cell):
        sub, fit, laws = _estimate_cell(config, panel, store, cell, prefix)
        if laws is None:
            return
        rows = [
            {"id": i, "true_ice": true_ice(ind, sub.params, config.regime, config.k), **_law_summary(law)}
            for i, (ind, law) in enumerate(zip(sub.individuals, laws))
        ]
        store.write_csv(f"{prefix}/{_cell_dir(cell)}/estimates.csv", pd.DataFrame(rows))

    _map_parallel(cell_job, config.subset_grid, threads)
    log_resource_usage(prefix)


def recipe_fig9(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Gaussian model: true ICE against the plug-in MAP estimate per subset cell."""
    _plugin_recipe(config, store, threads, "fig9")


def recipe_fig12(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Log-normal model: true ICE against the plug-in MAP estimate per subset cell."""
    _plugin_recipe(config, store, threads, "fig12")


def recipe_fig13(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Thresholded model: estimated P(ICE = -1) per individual and subset cell."""
    _plugin_recipe(config, store, threads, "fig13")


def recipe_fig10(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Thresholded model: true-parameter pmf of the binary ICE per individual and horizon."""
    panel = _simulate(config, store, threads)
    params = panel.params

    def horizon_job(h: int):
        rows = []
        for index, ind in enumerate(panel.individuals):
            law = cwce(History.from_individual(ind, params, h), params, config.k, config.regime)
            rows.append({
                "id": index, "true_ice": true_ice(ind, params, config.regime, config.k),
                "p_minus1": law.p_minus1, "p_0": law.p_0, "p_plus1": law.p_plus1,
            })
        store.write_csv(f"fig10/h{h}.csv", pd.DataFrame(rows))

    _map_parallel(horizon_job, config.horizons, threads)


def recipe_fig11(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Marginal ICE densities from the estimated CWCEs, next to the analytic population law."""
    panel = _simulate(config, store, threads)
    reference = ice_distribution(panel.params, config.regime, config.k)
    store.write_csv("fig11/reference.csv", law_frame(reference, 2048))

    def cell_job(cell: Cell):
        _, _, laws = _estimate_cell(config, panel, store, cell, "fig11")
        if laws is None:
            return
        for mode in DensityMode:
            density = marginal_ice_density(laws, mode)
            store.write_csv(f"fig11/{_cell_dir(cell)}/{mode.value}.csv", law_frame(density))

    _map_parallel(cell_job, config.subset_grid, threads)


def recipe_table5(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Classification of the binary ICE by its plug-in MAP estimate, one 3x3 table per cell."""
    panel = _simulate(config, store, threads)
    labels = ["-1", "0", "+1"]

    def cell_job(cell: Cell):
        sub, fit = _fit_cell(panel, cell)
        _write_fit(store, f"table5/{_cell_dir(cell)}/fit.json", fit)
        if not fit.converged:
            return {"n": cell[0], "m": cell[1], "converged": False, "misclassification": float("nan")}
        table = classification_table(sub, fit, config.k, config.regime)
        frame = pd.DataFrame(table.matrix, columns=[f"estimated_{v}" for v in labels])
        frame.insert(0, "true_ice", labels)
        store.write_csv(f"table5/{_cell_dir(cell)}/table.csv", frame)
        return {"n": cell[0], "m": cell[1], "converged": True, "misclassification": table.misclassification()}

    rows = _map_parallel(cell_job, config.subset_grid, threads)
    store.write_csv("table5/misclassification.csv", pd.DataFrame(rows))


def bias_replicate(params: ScmParams, n: int, m: int, seed: int, regime: Tuple[int, int] = (1, 1)) -> Dict[str, float]:
    """
    One replicate of the time-varying confounding experiment.

    Returns the ACE implied by naive pooled least squares and by the REML
    fixed effects for exposures (a_{k-1}, a_{k-2}) = ``regime``.
    """
    panel = simulate_panel(params, n, m, seed)
    view = PanelView.from_panel(panel, ModelSpec.for_kind(params.kind))
    naive = fit_naive_pooled(view)
    fit = fit_lmm_reml(view)
    lag1, lag2 = regime
    return {
        "seed": seed,
        "naive_ace": naive.implied_ace(lag1, lag2),
        "reml_ace": lag1 * fit.coef("lag1") + lag2 * fit.coef("lag2"),
        "naive_beta1": naive.coef("lag1"),
        "naive_beta2": naive.coef("lag2"),
        "reml_beta1": fit.coef("lag1"),
        "reml_beta2": fit.coef("lag2"),
        "reml_converged": fit.converged,
    }


def recipe_bias_demo(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Naive pooled against REML ACE over replicate seeds."""
    params = config.resolved_scm()
    seeds = [derive_seed(config.seed, STREAM_REPLICATE, r) for r in range(config.n_seeds)]
    regime = as_regime(config.regime).lags(config.k)
    logger.info(f"BiasDemo: {len(seeds)} replicates n={config.n} m={config.m}")
    rows = _map_parallel(lambda s: bias_replicate(params, config.n, config.m, s, regime), seeds, threads)
    frame = pd.DataFrame(rows)
    frame.insert(0, "replicate", range(len(rows)))
    store.write_csv("bias_demo/replicates.csv", frame)
    store.write_json("bias_demo/summary.json", {
        "true_ace": closed_form_effect(params, EffectMeasure.ACE, config.regime, config.k),
        "naive_mean": float(frame["naive_ace"].mean()),
        "naive_interval": [float(v) for v in np.quantile(frame["naive_ace"], [0.025, 0.975])],
        "reml_mean": float(frame["reml_ace"].mean()),
    })


def recipe_custom(config: ExperimentConfig, store: ArtifactStore, threads: int) -> None:
    """Full pipeline for any model kind on the configured panel."""
    panel = _simulate(config, store, threads)
    params = panel.params
    if params.kind == ScmKind.CROSSOVER:
        frame = cwce_rows(panel, config, threads)
        store.write_csv("custom/estimates.csv", frame)
        return
    cell = (panel.n, panel.m)
    sub, fit, laws = _estimate_cell(config, panel, store, cell, "custom")
    if laws is None:
        return
    rows = [
        {"id": i, "true_ice": true_ice(ind, params, config.regime, config.k), **_law_summary(law)}
        for i, (ind, law) in enumerate(zip(sub.individuals, laws))
    ]
    store.write_csv("custom/estimates.csv", pd.DataFrame(rows))


def cwce_rows(panel: Panel, config: ExperimentConfig, threads: int = 1) -> pd.DataFrame:
    """True-parameter CWCE summaries for every individual of a panel."""
    params = panel.params

    def one(index: int):
        ind = panel.individuals[index]
        law = cwce(History.from_individual(ind, params), params, config.k, config.regime)
        return {"id": index, "true_ice": true_ice(ind, params, config.regime, config.k), **_law_summary(law)}

    return pd.DataFrame(_map_parallel(one, list(range(panel.n)), threads))


RECIPES: Dict[Recipe, Callable[[ExperimentConfig, ArtifactStore, int], None]] = {
    Recipe.FIG5: recipe_fig5,
    Recipe.FIG7: recipe_fig7,
    Recipe.FIG8: recipe_fig8,
    Recipe.FIG9: recipe_fig9,
    Recipe.FIG10: recipe_fig10,
    Recipe.FIG11: recipe_fig11,
    Recipe.FIG12: recipe_fig12,
    Recipe.FIG13: recipe_fig13,
    Recipe.TABLE5: recipe_table5,
    Recipe.BIAS_DEMO: recipe_bias_demo,
    Recipe.CUSTOM: recipe_custom,
}


@exception_handler
def run_recipe(config: ExperimentConfig, store: ArtifactStore, threads: int = 1) -> None:
    """
    Run the configured recipe into ``store``.

    Args:
        config: Validated experiment configuration
        store: Output directory
        threads: Worker threads for cells, seeds and individuals
    """
    logger.info(f"Running recipe {config.recipe.value} (seed={config.seed}, threads={threads})")
    RECIPES[config.recipe](config, store, threads)
    logger.info(f"Recipe {config.recipe.value} finished")
