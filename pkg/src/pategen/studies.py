"""Named Monte Carlo studies behind the acceptance checks, with an on-disk
cache so that the test suite and the scripts share one set of runs."""

from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .estimators import Kind
from .simulation import Cell, Scenario, StudyResult, load_scenario, load_study, run_study, save_study

MASTER_SEED = 2021
TABLE3_REPS = 5000
GRID_REPS = 2000
PROP2_REPS = 1000

GRID_SCENARIOS = (
    "weak_moderate", "weak_strong",
    "moderate_moderate", "moderate_strong",
    "strong_moderate", "strong_strong",
)

# true-PS, correctly specified cells used for the variance-ratio ranges
GRID_CELLS = (
    Cell(Kind.IPSW1, "true", True, None),
    Cell(Kind.IPSW2, "true", True, None),
    Cell(Kind.DR1, "true", True, True),
    Cell(Kind.DR2, "true", True, True),
)

PROP2_CELLS = (
    Cell(Kind.IPSW1, "estimated", True, None),
    Cell(Kind.IPSW2, "estimated", True, None),
    Cell(Kind.OR, "estimated", None, True),
    Cell(Kind.DR1, "estimated", True, True),
    Cell(Kind.DR2, "estimated", True, True),
)
PROP2_MODELS = {"main": "1 + z1 + z2", "full": "1 + z1 + z2 + z1:z2"}


def results_dir() -> Path:
    env = os.environ.get("PATE_RESULTS")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "results"


def cache_file(tag: str, reps: int, seed: int) -> Path:
    return results_dir() / f"{tag}_r{reps}_s{seed}.npz"


def cached_study(tag: str, scenario: Scenario, reps: int, seed: int = MASTER_SEED,
                 parallelism: int = 1, progress=None, refresh: bool = False) -> StudyResult:
    """Load a cached run when it matches (scenario, reps, seed and source
    fingerprint); otherwise run it and store it."""
    path = cache_file(tag, reps, seed)
    if not refresh:
        res = load_study(path, scenario, seed, reps)
        if res is not None:
            return res
    res = run_study(scenario, reps, seed, parallelism=parallelism, progress=progress)
    save_study(res, path)
    return res


def table3(reps: int = TABLE3_REPS, **kw) -> StudyResult:
    sc = load_scenario("table3_moderate")
    return cached_study(sc.name, sc, reps, **kw)


def grid(name: str, reps: int = GRID_REPS, **kw) -> StudyResult:
    sc = replace(load_scenario(name), cells=GRID_CELLS)
    return cached_study(f"grid_{name}", sc, reps, **kw)


def prop2(model: str, reps: int = PROP2_REPS, **kw) -> StudyResult:
    """Estimated-PS cells with a fixed propensity model. Both models share the
    scenario name, hence the replicate seeds, so the comparison is paired."""
    sc = replace(load_scenario("table3_moderate"), propensity_model=PROP2_MODELS[model], cells=PROP2_CELLS)
    return cached_study(f"prop2_{model}", sc, reps, **kw)


def describe(res: StudyResult, cells: Optional[tuple] = None) -> str:
    cells = res.scenario.cells if cells is None else cells
    lines = [f"{'cell':28s} {'bias':>7s} {'ESE':>6s} {'ASE':>6s} {'cov':>6s}"]
    for cell, row in zip(cells, res.rows):
        lines.append(
            f"{cell.label:28s} {row.bias:7.3f} {100 * row.ese:6.1f} {100 * row.ase:6.1f} {100 * row.coverage:6.1f}"
        )
    return "\n".join(lines)
