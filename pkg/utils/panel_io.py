"""
Panel persistence.
A panel is stored as a long CSV table (one row per individual and time) with
a JSON sidecar carrying the model parameters and the seed. Real values are
written as hex floats so that a reload is bit-identical.
"""
import json
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from cwce.errors import ConfigurationError, DimensionError, ParameterValidationError
from cwce.scm_core import Individual, Panel, ScmKind, ScmParams

logger = logging.getLogger("utils.panel_io")

REAL_COLUMNS = ("c", "y", "u0", "u1", "u2", "n_y", "n_a")
SIDECAR_SUFFIX = ".meta.json"


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + SIDECAR_SUFFIX)


def _hex(values: np.ndarray):
    return [float(v).hex() for v in values]


def panel_to_frame(panel: Panel) -> pd.DataFrame:
    """
    Long-format table of a panel.

    Columns: id, k, c, a, y, [d,] u0, u1, u2, n_y, n_a. Latents repeat on
    every row of an individual. Real columns hold hex-float strings.
    """
    n, m = panel.n, panel.m
    ids = np.repeat(np.arange(n), m)
    times = np.tile(np.arange(1, m + 1), n)
    stack = lambda name: np.concatenate([getattr(ind, name) for ind in panel.individuals])
    latents = np.repeat(np.array([ind.u for ind in panel.individuals]), m, axis=0)

    frame = pd.DataFrame({"id": ids, "k": times})
    frame["c"] = _hex(stack("c"))
    frame["a"] = stack("a").astype(int)
    frame["y"] = _hex(stack("y"))
    if panel.params.kind == ScmKind.TRUNCATED_LMM:
        frame["d"] = stack("d").astype(int)
    for j, name in enumerate(("u0", "u1", "u2")):
        frame[name] = _hex(latents[:, j])
    frame["n_y"] = _hex(stack("noise_y"))
    frame["n_a"] = _hex(stack("noise_a"))
    return frame


def write_panel(panel: Panel, path: str) -> Tuple[Path, Path]:
    """
    Write a panel table and its metadata sidecar.

    Args:
        panel: Simulated panel
        path: CSV path; the sidecar is written next to it

    Returns:
        (table path, sidecar path)
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    sidecar = _sidecar_path(target)
    meta = {"params": panel.params.model_dump(mode="json"), "seed": panel.seed, "n": panel.n, "m": panel.m}
    try:
        panel_to_frame(panel).to_csv(target, index=False, lineterminator="\n")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed to write panel to {target}: {e}") from e
    logger.info(f"Wrote panel n={panel.n} m={panel.m} to {target}")
    return target, sidecar


def read_panel(path: str) -> Panel:
    """
    Read a panel written by ``write_panel``.

    Raises:
        ConfigurationError: missing or malformed sidecar
        DimensionError: table shape disagrees with the sidecar
    """
    target = Path(path)
    sidecar = _sidecar_path(target)
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        params = ScmParams.create(**meta["params"])
    except (OSError, KeyError, json.JSONDecodeError, ParameterValidationError) as e:
        raise ConfigurationError(f"Cannot read panel metadata {sidecar}: {e}") from e
    try:
        frame = pd.read_csv(target, dtype={name: str for name in REAL_COLUMNS})
    except OSError as e:
        raise OSError(f"Cannot read panel table {target}: {e}") from e

    n, m = int(meta["n"]), int(meta["m"])
    if len(frame) != n * m:
        raise DimensionError(f"Panel table {target} has {len(frame)} rows, expected {n} x {m}")
    frame = frame.sort_values(["id", "k"], kind="stable")
    reals = {name: np.array([float.fromhex(v) for v in frame[name]]).reshape(n, m) for name in REAL_COLUMNS}
    exposures = frame["a"].to_numpy(dtype=int).reshape(n, m)
    indicators = frame["d"].to_numpy(dtype=int).reshape(n, m) if "d" in frame.columns else None

    individuals = tuple(
        Individual.from_arrays(
            u=[reals["u0"][i, 0], reals["u1"][i, 0], reals["u2"][i, 0]],
            noise_y=reals["n_y"][i], noise_a=reals["n_a"][i],
            c=reals["c"][i], a=exposures[i], y=reals["y"][i],
            d=None if indicators is None else indicators[i],
        )
        for i in range(n)
    )
    logger.info(f"Read panel n={n} m={m} from {target}")
    return Panel(individuals, params, int(meta["seed"]), m)
