"""Command-line interface: ``analyze``, ``simulate`` and ``balance``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (the failing nuisance model or estimator is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import Estimated, StudyData, TrueConstant
from .design import Interaction, Intercept, Main, Square, TermSpec
from .diagnostics import DEFAULT_THRESHOLD, balance_report, score_summary
from .errors import NumericalError, PateError, SimulationFailure, TermSpecError, TrialTooSmall, ValidationError
from .estimators import ExtremeWeightWarning, Kind, fit_nuisances, sate, sate_se
from .sandwich import report, wald_ci
from .simulation import default_threads, load_scenario, run_study

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

RESULT_COLUMNS = ("estimator", "ps_mode", "estimate", "se", "ci_lo", "ci_hi", "n", "m", "N")
SIM_COLUMNS = (
    "estimator", "ps_mode", "sampling_correct", "outcome_correct",
    "bias", "ese_x100", "ase_x100", "coverage_x100", "reps", "failures",
)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def fmt(v) -> str:
    """12 significant digits; re-parsing reproduces the printed value."""
    if isinstance(v, (bool, np.bool_)):
        return "Y" if v else "N"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "--"
    if isinstance(v, str):
        return v
    return "%.12g" % v


@dataclass
class AnalysisConfig:
    trial_path: Path
    cohort_path: Path
    population_size: int
    sampling_model: TermSpec
    outcome_model: Optional[TermSpec]
    propensity: List[str]
    randomization_prob: float = 0.5
    estimators: List[Kind] = field(default_factory=lambda: [Kind.SATE, Kind.IPSW1, Kind.IPSW2, Kind.OR, Kind.DR1, Kind.DR2])
    ci_level: float = 0.95
    balance_threshold: float = DEFAULT_THRESHOLD
    exclude: List[str] = field(default_factory=list)
    output_dir: Path = Path(".")

    KEYS = (
        "trial_path", "cohort_path", "population_size", "randomization_prob", "sampling_model",
        "propensity", "outcome_model", "estimators", "ci_level", "balance_threshold", "exclude",
        "output_dir",
    )

    @classmethod
    def load(cls, path) -> "AnalysisConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("trial_path", "cohort_path", "population_size"):
            if key not in raw:
                raise ConfigError(f"missing config key {key!r}")
        base = path.parent
        try:
            estimators = [Kind(e) for e in raw.get("estimators", [k.value for k in Kind])]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        needs_w = any(k.uses_sampling for k in estimators)
        needs_m = any(k.uses_outcome for k in estimators)
        if needs_w and "sampling_model" not in raw:
            raise ConfigError("sampling_model is required for the requested estimators")
        if needs_m and "outcome_model" not in raw:
            raise ConfigError("outcome_model is required for the requested estimators")
        prop = raw.get("propensity", "true")
        prop = [prop] if isinstance(prop, str) else list(prop)
        N = raw["population_size"]
        if not isinstance(N, (int, float)) or N != int(N) or N <= 0:
            raise ConfigError("population_size must be a positive integer")
        r = float(raw.get("randomization_prob", 0.5))
        level = float(raw.get("ci_level", 0.95))
        if not 0 < r < 1 or not 0 < level < 1:
            raise ConfigError("randomization_prob and ci_level must lie in (0, 1)")
        try:
            sm = TermSpec.parse(raw["sampling_model"]) if "sampling_model" in raw else None
            om = TermSpec.parse(raw["outcome_model"]) if "outcome_model" in raw else None
        except TermSpecError as exc:
            raise ConfigError(f"bad term specification: {exc}") from exc
        return cls(
            trial_path=base / raw["trial_path"],
            cohort_path=base / raw["cohort_path"],
            population_size=int(N),
            sampling_model=sm,
            outcome_model=om,
            propensity=prop,
            randomization_prob=r,
            estimators=estimators,
            ci_level=level,
            balance_threshold=float(raw.get("balance_threshold", DEFAULT_THRESHOLD)),
            exclude=list(raw.get("exclude", [])),
            output_dir=base / raw.get("output_dir", "."),
        )

    def covariates(self) -> list:
        names = []
        for spec in (self.sampling_model, self.outcome_model):
            if spec is not None:
                names += [c for c in spec.covariates if c not in names]
        for p in self.propensity:
            if p not in ("true", "main", "full"):
                names += [c for c in _parse_spec(p).covariates if c not in names]
        return names

    def ps_modes(self) -> list:
        """Resolve the propensity entries to ``PsMode`` objects.

        ``main`` is the main effects of every covariate in the sampling model
        plus the squares that model contains; ``full`` adds all pairwise
        interactions of those covariates, minus ``exclude``.
        """
        modes = []
        base = self.sampling_model or self.outcome_model
        for p in self.propensity:
            if p == "true":
                modes.append(TrueConstant(self.randomization_prob))
                continue
            if p in ("main", "full"):
                if base is None:
                    raise ConfigError(f"propensity {p!r} needs a sampling or outcome model")
                names = base.covariates
                terms = [Intercept()] + [Main(n) for n in names]
                terms += [t for t in base.terms if isinstance(t, Square)]
                if p == "full":
                    terms += [Interaction(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
                spec = TermSpec(tuple(terms))
                if p == "full" and self.exclude:
                    try:
                        spec = spec.without(self.exclude)
                    except TermSpecError as exc:
                        raise ConfigError(f"bad exclude entry: {exc}") from exc
                modes.append(Estimated(spec, p))
            else:
                modes.append(Estimated(_parse_spec(p), None))
        return modes


def _parse_spec(text: str) -> TermSpec:
    try:
        return TermSpec.parse(text)
    except TermSpecError as exc:
        raise ConfigError(f"bad term specification {text!r}: {exc}") from exc


def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite value {text!r}")
    return v


def read_table(path: Path, required: Sequence[str], missing_error=DataError) -> tuple:
    """Read a numeric CSV into ``({column: ndarray}, row count)``. Every
    required cell must parse; absent columns raise ``missing_error``."""
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file (a header row is required)")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    missing = [c for c in required if c not in header]
    if missing:
        raise missing_error(f"{path}: missing columns {missing}")
    cols = {h: [] for h in header}
    count = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        count += 1
        for h, v in zip(header, row):
            if h in required:
                cols[h].append(_parse_float(v.strip(), f"{path}:{lineno}:{h}"))
    return {h: np.asarray(cols[h], dtype=float) for h in required}, count


def load_study(cfg: AnalysisConfig) -> StudyData:
    names = cfg.covariates()
    # x and y are data requirements; model covariates are named by the config
    trial, n = read_table(cfg.trial_path, ["x", "y"])
    trial.update(read_table(cfg.trial_path, names, ConfigError)[0])
    cohort, m = read_table(cfg.cohort_path, names, ConfigError)
    x = trial["x"]
    if not np.all((x == 0) | (x == 1)):
        raise DataError(f"{cfg.trial_path}: treatment column x must be 0/1")
    if cfg.population_size <= n + m:
        raise ConfigError(f"population_size {cfg.population_size} must exceed n + m = {n + m}")
    zt = np.column_stack([trial[c] for c in names]) if names else np.empty((n, 0))
    zc = np.column_stack([cohort[c] for c in names]) if names else np.empty((m, 0))
    return StudyData.from_arrays(names, zt, x.astype(np.int8), trial["y"], zc, cfg.population_size, cfg.randomization_prob)


def _write_csv(path: Optional[Path], header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


def rounded(est, lo, hi) -> str:
    return f"{round(est)} ({round(lo)}, {round(hi)})"


def _tag(exc: NumericalError, kind) -> NumericalError:
    if exc.estimator is None and exc.nuisance is None:
        exc.estimator = str(kind)
    return exc


def analyze(cfg: AnalysisConfig) -> tuple:
    """Returns ``(result rows, balance report or None)``."""
    data = load_study(cfg)
    N = data.population_size
    rows = []
    balance = None
    if Kind.SATE in cfg.estimators:
        pt = sate(data)
        se = sate_se(data)
        lo, hi = wald_ci(pt.value, se, cfg.ci_level)
        rows.append(("sate", "none", pt.value, se, lo, hi, data.n, data.m, N))
    kinds = [k for k in cfg.estimators if k is not Kind.SATE]
    if not kinds:
        return rows, balance
    needs_w = any(k.uses_sampling for k in kinds)
    needs_m = any(k.uses_outcome for k in kinds)
    for mode in cfg.ps_modes():
        nuis = fit_nuisances(
            data,
            cfg.sampling_model if needs_w else None,
            mode,
            cfg.outcome_model if needs_m else None,
        )
        if needs_w and balance is None:
            balance = balance_report(data, nuis, cfg.sampling_model, cfg.balance_threshold, strict=False)
        for kind in kinds:
            try:
                rep = report(kind, data, nuis, cfg.ci_level)
            except NumericalError as exc:
                raise _tag(exc, kind)
            rows.append((str(kind), rep.ps_mode, rep.estimate, rep.se, rep.ci[0], rep.ci[1], data.n, data.m, N))
    return rows, balance


def _balance_rows(rep):
    return [
        (r.term, fmt(r.smd_unweighted), fmt(r.smd_weighted), fmt(r.sd), fmt(r.flagged), r.error or "")
        for r in rep.rows
    ]


BALANCE_COLUMNS = ("term", "smd_unweighted", "smd_weighted", "sd", "flagged", "error")


def cmd_analyze(config, rounded_output: bool = False, out=None) -> int:
    out = out or sys.stdout
    cfg = AnalysisConfig.load(config)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtremeWeightWarning)
        rows, balance = analyze(cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    table = [tuple(fmt(v) for v in r) for r in rows]
    _write_csv(cfg.output_dir / "results.csv", RESULT_COLUMNS, table)
    if balance is not None:
        _write_csv(cfg.output_dir / "balance.csv", BALANCE_COLUMNS, _balance_rows(balance))
    if rounded_output:
        for r in rows:
            out.write(f"{r[0]:6s} {r[1]:10s} {rounded(r[2], r[4], r[5])}\n")
    else:
        out.write(_write_csv(None, RESULT_COLUMNS, table))
    return EXIT_OK


def simulation_table(result) -> list:
    rows = []
    for r in result.rows:
        rows.append((
            str(r.kind), r.ps_mode, fmt(r.sampling_correct), fmt(r.outcome_correct),
            fmt(r.bias), fmt(100 * r.ese), fmt(100 * r.ase), fmt(100 * r.coverage),
            fmt(r.reps), fmt(r.failures),
        ))
    return rows


def cmd_simulate(scenario_file, reps: int, seed: int, parallelism: int, out_path=None, out=None) -> int:
    out = out or sys.stdout
    try:
        scenario = load_scenario(scenario_file)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad scenario {scenario_file!r}: {exc}") from exc
    if reps < 1:
        raise ConfigError("--reps must be at least 1")
    result = run_study(scenario, reps, seed, parallelism=parallelism)
    text = _write_csv(Path(out_path) if out_path else None, SIM_COLUMNS, simulation_table(result))
    if not out_path:
        out.write(text)
    return EXIT_OK


def cmd_balance(config, bins: int = 20, out=None) -> int:
    out = out or sys.stdout
    cfg = AnalysisConfig.load(config)
    if cfg.sampling_model is None:
        raise ConfigError("balance needs a sampling_model")
    if bins < 1:
        raise ConfigError("--bins must be at least 1")
    data = load_study(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtremeWeightWarning)
        nuis = fit_nuisances(data, cfg.sampling_model, TrueConstant(cfg.randomization_prob), None)
    rep = balance_report(data, nuis, cfg.sampling_model, cfg.balance_threshold, strict=False)
    summ = score_summary(data, nuis.w, bins)
    d = cfg.output_dir
    text = _write_csv(d / "balance.csv", BALANCE_COLUMNS, _balance_rows(rep))
    hist = [
        (fmt(lo), fmt(hi), fmt(a), fmt(b))
        for lo, hi, a, b in zip(summ.edges[:-1], summ.edges[1:], summ.trial.counts, summ.cohort.counts)
    ]
    _write_csv(d / "histogram.csv", ("bin_lo", "bin_hi", "trial_count", "cohort_count"), hist)

    def group(g):
        return {
            "min": g.minimum,
            "max": g.maximum,
            "quantiles": {f"{q:g}": v for q, v in g.quantiles.items()},
        }

    payload = {
        "threshold": rep.threshold,
        "terms": [
            {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
            for r in rep.to_records()
        ],
        "scores": {"trial": group(summ.trial), "cohort": group(summ.cohort)},
    }
    (d / "balance.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    out.write(text)
    if rep.errors:
        print(f"error: constant term(s) {rep.errors}: SMD undefined", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pategen", description="Generalize trial results to a target population.")
    sub = ap.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="estimate the PATE with sandwich confidence intervals")
    a.add_argument("--config", required=True)
    a.add_argument("--rounded", action="store_true", help="print integer-rounded 'est (lo, hi)'")
    s = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    s.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--threads", type=int, default=None, help="worker processes (default: $PATE_THREADS or 1)")
    s.add_argument("--out", default=None, help="CSV path (default: stdout)")
    b = sub.add_parser("balance", help="SMD table and sampling-score histograms")
    b.add_argument("--config", required=True)
    b.add_argument("--bins", type=int, default=20)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(args.config, args.rounded)
        if args.command == "simulate":
            threads = args.threads if args.threads is not None else default_threads()
            return cmd_simulate(args.scenario, args.reps, args.seed, max(1, threads), args.out)
        return cmd_balance(args.config, args.bins)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TermSpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SimulationFailure, TrialTooSmall) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
