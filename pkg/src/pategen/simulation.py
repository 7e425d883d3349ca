"""Monte Carlo study: population data-generating process, replicate runner
and bias / ESE / ASE / coverage metrics.

Seeding: replicate ``i`` of a scenario draws from a Philox4x64-10 generator
keyed by ``mix(master_seed, scenario_id, i)``, where ``mix`` chains the
SplitMix64 finalizer. Results are therefore a pure function of
``(master_seed, scenario, i)`` and do not depend on worker count or
scheduling.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import Estimated, StudyData, TrueConstant
from .design import TermSpec
from .errors import PateError, SimulationFailure, TrialTooSmall
from .estimators import (
    ExtremeWeightWarning,
    Kind,
    NuisanceFit,
    fit_outcomes,
    fit_propensity,
    fit_sampling,
)
from .sandwich import report

MASK64 = (1 << 64) - 1
CHUNK = 1 << 17
MIN_TRIAL = 20
FAILURE_LIMIT = 0.01

CORRECT_SPEC = "1 + z1 + z2"
WRONG_SPEC = "1 + z1"


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix(master_seed: int, scenario_id: int, i: int) -> int:
    h = splitmix64(master_seed & MASK64)
    h = splitmix64(h ^ (scenario_id & MASK64))
    return splitmix64(h ^ (i & MASK64))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & MASK64))


@dataclass(frozen=True)
class Cell:
    """One row of the results table. ``None`` marks a switch that does not
    apply to the estimator (printed as ``--``)."""

    kind: Kind
    ps: str  # "true" | "estimated"
    sampling_correct: Optional[bool]
    outcome_correct: Optional[bool]

    @property
    def label(self) -> str:
        def f(v):
            return "--" if v is None else ("Y" if v else "N")

        return f"{self.kind}/{self.ps}/{f(self.sampling_correct)}{f(self.outcome_correct)}"


def table3_cells() -> tuple:
    cells = []
    for ps in ("true", "estimated"):
        for kind in (Kind.IPSW1, Kind.IPSW2):
            cells += [Cell(kind, ps, True, None), Cell(kind, ps, False, None)]
        cells += [Cell(Kind.OR, ps, None, True), Cell(Kind.OR, ps, None, False)]
        for kind in (Kind.DR1, Kind.DR2):
            for sc, oc in ((True, True), (True, False), (False, True), (False, False)):
                cells.append(Cell(kind, ps, sc, oc))
    return tuple(cells)


TABLE3_CELLS = table3_cells()


@dataclass(frozen=True)
class Scenario:
    """Simulation design: selection strength ``gamma``, effect modification
    ``zeta`` and the fixed baseline outcome coefficients
    ``(alpha10, alpha00, alpha01, alpha02)``."""

    name: str = "table3_moderate"
    gamma: tuple = (-7.37, 0.6, 0.6)
    zeta: tuple = (1.0, 1.0)
    alpha_base: tuple = (2.0, 0.0, -1.0, -1.0)
    N: int = 1_000_000
    m: int = 4000
    r: float = 0.5
    p_z1: float = 0.4
    propensity_model: str = "auto"
    cells: tuple = TABLE3_CELLS

    def __post_init__(self):
        if not all(np.isfinite(self.gamma)) or not all(np.isfinite(self.zeta)):
            raise ValueError("gamma and zeta must be finite")
        if self.N <= self.m:
            raise ValueError("N must exceed m")
        if not 0 < self.r < 1:
            raise ValueError("r must lie in (0, 1)")

    @property
    def alpha1(self) -> tuple:
        a10, a00, a01, a02 = self.alpha_base
        return (a10, self.zeta[0] + a01, self.zeta[1] + a02)

    @property
    def alpha0(self) -> tuple:
        a10, a00, a01, a02 = self.alpha_base
        return (a00, a01, a02)

    @property
    def scenario_id(self) -> int:
        return int.from_bytes(hashlib.blake2b(self.name.encode(), digest_size=8).digest(), "little")

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        cells = d.pop("cells", "table3")
        if cells == "table3":
            cells = TABLE3_CELLS
        else:
            cells = tuple(
                Cell(Kind(c["kind"]), c["ps"], c.get("sampling_correct"), c.get("outcome_correct"))
                for c in cells
            )
        for key in ("gamma", "zeta", "alpha_base"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(cells=cells, **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cells"] = [
            {"kind": str(c.kind), "ps": c.ps, "sampling_correct": c.sampling_correct, "outcome_correct": c.outcome_correct}
            for c in self.cells
        ]
        return d


def load_scenario(path_or_name: str) -> Scenario:
    """Read a JSON scenario file, or a bundled one by name (e.g. ``table3_moderate``)."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text(encoding="utf-8")
    else:
        name = p.name if p.suffix == ".cfg" else p.name + ".cfg"
        res = resources.files("pategen").joinpath("scenarios").joinpath(name)
        if not res.is_file():
            raise FileNotFoundError(f"no scenario file or bundled scenario {path_or_name!r}")
        text = res.read_text(encoding="utf-8")
    return Scenario.from_dict(json.loads(text))


def bundled_scenarios() -> list:
    root = resources.files("pategen").joinpath("scenarios")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def true_pate(scenario: Scenario) -> float:
    """Closed form: E[Z1] = p_z1 and E[Z2] = 0."""
    a10, a00, _, _ = scenario.alpha_base
    return (a10 - a00) + scenario.zeta[0] * scenario.p_z1 + scenario.zeta[1] * 0.0


def generate_replicate(scenario: Scenario, seed: int) -> StudyData:
    """Stream the population in chunks, keeping the trial (S=1 units) and a
    simple random sample of ``m`` of the S=0 units.

    The cohort sample is the ``m`` smallest of i.i.d. uniform keys attached
    to the S=0 units (bottom-k reservoir), so memory stays O(n + m).
    """
    rng = make_rng(seed)
    g0, g1, g2 = scenario.gamma
    N, m = scenario.N, scenario.m
    trial_z = []
    keep_keys = np.empty(0)
    keep_idx = np.empty(0, dtype=np.int64)
    keep_z = np.empty((0, 2))
    thresh = np.inf  # m-th smallest key so far; larger keys can never be kept
    start = 0
    while start < N:
        k = min(CHUNK, N - start)
        z1 = (rng.random(k) < scenario.p_z1).astype(float)
        z2 = rng.standard_normal(k)
        s = rng.random(k) < expit(g0 + g1 * z1 + g2 * z2)
        keys = rng.random(k)
        trial_z.append(np.column_stack([z1[s], z2[s]]))
        cand = np.flatnonzero(~s & (keys < thresh))
        keep_keys = np.concatenate([keep_keys, keys[cand]])
        keep_idx = np.concatenate([keep_idx, cand + start])
        keep_z = np.vstack([keep_z, np.column_stack([z1[cand], z2[cand]])])
        if keep_keys.size > m:
            sel = np.argpartition(keep_keys, m - 1)[:m]
            keep_keys, keep_idx, keep_z = keep_keys[sel], keep_idx[sel], keep_z[sel]
        if keep_keys.size == m:
            thresh = keep_keys.max()
        start += k
    zt = np.vstack(trial_z)
    n = zt.shape[0]
    if n < MIN_TRIAL:
        raise TrialTooSmall(f"trial has {n} units (< {MIN_TRIAL}); check gamma")
    if keep_keys.size < m:
        raise TrialTooSmall(f"only {keep_keys.size} non-trial units for a cohort of {m}")
    order = np.argsort(keep_idx, kind="stable")
    zc = keep_z[order]

    x = (rng.random(n) < scenario.r).astype(np.int8)
    eps = rng.standard_normal(n)
    b1 = scenario.alpha1
    b0 = scenario.alpha0
    mu1 = b1[0] + b1[1] * zt[:, 0] + b1[2] * zt[:, 1]
    mu0 = b0[0] + b0[1] * zt[:, 0] + b0[2] * zt[:, 1]
    y = np.where(x == 1, mu1, mu0) + eps
    return StudyData.from_arrays(("z1", "z2"), zt, x, y, zc, N, scenario.r)


def replicate_seed(scenario: Scenario, master_seed: int, i: int) -> int:
    return mix(master_seed, scenario.scenario_id, i)


def propensity_spec(scenario: Scenario, cell: Cell) -> TermSpec:
    """Working propensity model for an estimated-PS cell.

    With ``propensity_model == "auto"`` it has the main effects of every
    covariate used by the cell's sampling or outcome working model, so z2
    enters only when some working model contains it.
    """
    if scenario.propensity_model != "auto":
        return TermSpec.parse(scenario.propensity_model)
    uses_z2 = any(
        flag
        for flag, used in (
            (cell.sampling_correct, cell.kind.uses_sampling),
            (cell.outcome_correct, cell.kind.uses_outcome),
        )
        if used
    )
    return TermSpec.parse(CORRECT_SPEC if uses_z2 else WRONG_SPEC)


def run_replicate(scenario: Scenario, seed: int, cells: Optional[Sequence[Cell]] = None):
    """Estimate every cell on one simulated data set.

    Returns ``(results, errors)`` where ``results`` has one row per cell with
    columns (point, se, covers) and NaN rows for failed cells, and ``errors``
    maps failed cell indices to messages.
    """
    cells = scenario.cells if cells is None else tuple(cells)
    data = generate_replicate(scenario, seed)
    truth = true_pate(scenario)
    specs = {True: TermSpec.parse(CORRECT_SPEC), False: TermSpec.parse(WRONG_SPEC)}
    true_mode = TrueConstant(scenario.r)
    cache = {}

    def cached(key, fn):
        if key not in cache:
            try:
                cache[key] = fn()
            except PateError as exc:
                cache[key] = exc
        val = cache[key]
        if isinstance(val, Exception):
            raise val
        return val

    def nuisances(cell: Cell) -> NuisanceFit:
        sc = True if cell.sampling_correct is None else cell.sampling_correct
        mode = true_mode if cell.ps == "true" else Estimated(propensity_spec(scenario, cell), "estimated")
        ps_key = ("ps", cell.ps, str(getattr(mode, "spec", "")))
        beta, W, e = cached(ps_key, lambda: fit_propensity(data, mode))
        gamma, Zs, w = cached(("gamma", sc), lambda: fit_sampling(data, specs[sc]))
        kw = dict(ps_mode=mode, e=e, sampling_spec=specs[sc], gamma=gamma, w=w, Zs=Zs, beta=beta, W=W)
        if cell.kind.uses_outcome:
            oc = cell.outcome_correct
            a1, a0, Zo, m1, m0 = cached(("alpha", oc) + ps_key, lambda: fit_outcomes(data, specs[oc], e))
            kw.update(outcome_spec=specs[oc], alpha1=a1, alpha0=a0, Zo=Zo, m1=m1, m0=m0)
        return NuisanceFit(**kw)

    out = np.full((len(cells), 3), np.nan)
    errors = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtremeWeightWarning)
        for j, cell in enumerate(cells):
            try:
                rep = report(cell.kind, data, nuisances(cell))
            except PateError as exc:
                errors[j] = f"{type(exc).__name__}: {exc}"
                continue
            lo, hi = rep.ci
            out[j] = (rep.estimate, rep.se, float(lo <= truth <= hi))
    return out, errors


@dataclass(frozen=True)
class MetricsRow:
    kind: Kind
    ps_mode: str
    sampling_correct: Optional[bool]
    outcome_correct: Optional[bool]
    bias: float
    ese: float
    ase: float
    coverage: float
    reps: int
    failures: int


@dataclass
class StudyResult:
    scenario: Scenario
    master_seed: int
    truth: float
    raw: np.ndarray  # (reps, cells, 3)
    rows: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    def row(self, kind, ps, sampling_correct=None, outcome_correct=None) -> MetricsRow:
        kind = Kind(kind)
        for r in self.rows:
            if (r.kind, r.ps_mode, r.sampling_correct, r.outcome_correct) == (kind, ps, sampling_correct, outcome_correct):
                return r
        raise KeyError((kind, ps, sampling_correct, outcome_correct))


def _run_chunk(args):
    scenario, master_seed, indices, cells = args
    res = []
    for i in indices:
        seed = replicate_seed(scenario, master_seed, i)
        try:
            out, errors = run_replicate(scenario, seed, cells)
        except PateError as exc:
            out = np.full((len(cells), 3), np.nan)
            errors = {j: f"{type(exc).__name__}: {exc}" for j in range(len(cells))}
        res.append((i, out, errors))
    return res


def summarize(cells, raw: np.ndarray, truth: float) -> list:
    rows = []
    for j, cell in enumerate(cells):
        pts = raw[:, j, 0]
        ok = np.isfinite(pts)
        p, se, cov = pts[ok], raw[ok, j, 1], raw[ok, j, 2]
        k = int(ok.sum())
        rows.append(
            MetricsRow(
                kind=cell.kind,
                ps_mode=cell.ps,
                sampling_correct=cell.sampling_correct,
                outcome_correct=cell.outcome_correct,
                bias=float(np.mean(p) - truth) if k else float("nan"),
                ese=float(np.std(p, ddof=1)) if k > 1 else float("nan"),
                ase=float(np.mean(se)) if k else float("nan"),
                coverage=float(np.mean(cov)) if k else float("nan"),
                reps=k,
                failures=int(raw.shape[0] - k),
            )
        )
    return rows


def run_study(
    scenario: Scenario,
    reps: int,
    master_seed: int,
    parallelism: int = 1,
    cells: Optional[Sequence[Cell]] = None,
    failure_limit: float = FAILURE_LIMIT,
    progress=None,
) -> StudyResult:
    """Run ``reps`` replicates and aggregate per-cell metrics.

    Replicate results are stored by index and aggregated in index order, so
    the output does not depend on ``parallelism``. ``progress``, if given, is
    called with the number of finished replicates.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    cells = scenario.cells if cells is None else tuple(cells)
    raw = np.full((reps, len(cells), 3), np.nan)
    errors = {}
    n_chunks = max(1, min(reps, max(4 * parallelism, -(-reps // 50))))
    chunks = [list(range(reps))[k::n_chunks] for k in range(n_chunks)]
    jobs = [(scenario, master_seed, idx, cells) for idx in chunks if idx]
    done = 0

    def collect(batch):
        nonlocal done
        for i, out, errs in batch:
            raw[i] = out
            for j, msg in errs.items():
                errors.setdefault(j, []).append((i, msg))
        done += len(batch)
        if progress:
            progress(done)

    if parallelism <= 1:
        for job in jobs:
            collect(_run_chunk(job))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for batch in pool.map(_run_chunk, jobs):
                collect(batch)

    truth = true_pate(scenario)
    result = StudyResult(scenario, master_seed, truth, raw, summarize(cells, raw, truth), errors)
    for row, cell in zip(result.rows, cells):
        if row.failures > failure_limit * reps:
            raise SimulationFailure(
                f"cell {cell.label}: {row.failures}/{reps} replicates failed; "
                f"first error: {errors[cells.index(cell)][0][1]}"
            )
    return result


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("PATE_THREADS", "1")))
    except ValueError:
        return 1


def with_gamma0(scenario: Scenario, gamma0: float, name: Optional[str] = None) -> Scenario:
    g = (gamma0,) + tuple(scenario.gamma[1:])
    return replace(scenario, gamma=g, name=name or scenario.name)


_NUMERIC_SOURCES = ("core.py", "design.py", "errors.py", "estimators.py", "glm.py", "sandwich.py", "simulation.py")


def source_fingerprint() -> str:
    """Hash of the modules that determine simulation output; used to key
    cached study results."""
    h = hashlib.blake2b(digest_size=12)
    root = Path(__file__).parent
    for name in _NUMERIC_SOURCES:
        h.update(name.encode())
        h.update((root / name).read_bytes())
    return h.hexdigest()


def save_study(result: StudyResult, path) -> None:
    """Store raw replicate results with enough metadata to reload them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "scenario": result.scenario.to_dict(),
        "master_seed": result.master_seed,
        "fingerprint": source_fingerprint(),
    }
    np.savez_compressed(path, raw=result.raw, meta=np.array(json.dumps(meta)))


def load_study(path, scenario: Optional[Scenario] = None, master_seed: Optional[int] = None,
               reps: Optional[int] = None) -> Optional[StudyResult]:
    """Reload a cached study. Returns ``None`` when the file is missing, stale
    (different source fingerprint) or does not match the requested run."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as f:
        raw = f["raw"]
        meta = json.loads(str(f["meta"]))
    if meta["fingerprint"] != source_fingerprint():
        return None
    sc = Scenario.from_dict(meta["scenario"])
    if scenario is not None and sc != scenario:
        return None
    if master_seed is not None and meta["master_seed"] != master_seed:
        return None
    if reps is not None and raw.shape[0] != reps:
        return None
    truth = true_pate(sc)
    return StudyResult(sc, meta["master_seed"], truth, raw, summarize(sc.cells, raw, truth))
