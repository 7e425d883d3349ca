"""Symbolic regressor specifications and their numeric design matrices.

Canonical text form: ``1 + z1 + z2 + z1:z2 + z1^2`` where ``:`` is a
pairwise interaction and ``^2`` a square. Whitespace is ignored.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .core import StudyData
from .errors import SquareOnBinary, TermSpecError, UnknownCovariate


@dataclass(frozen=True)
class Intercept:
    def __str__(self):
        return "1"

    @property
    def names(self):
        return ()


@dataclass(frozen=True)
class Main:
    name: str

    def __str__(self):
        return self.name

    @property
    def names(self):
        return (self.name,)


@dataclass(frozen=True)
class Square:
    name: str

    def __str__(self):
        return f"{self.name}^2"

    @property
    def names(self):
        return (self.name,)


@dataclass(frozen=True)
class Interaction:
    a: str
    b: str

    def __post_init__(self):
        if self.a == self.b:
            raise TermSpecError(f"self-interaction {self.a}:{self.b}; use {self.a}^2")
        if self.b < self.a:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    def __str__(self):
        return f"{self.a}:{self.b}"

    @property
    def names(self):
        return (self.a, self.b)


Term = Union[Intercept, Main, Square, Interaction]


def _parse_term(tok: str) -> Term:
    if tok == "1":
        return Intercept()
    if ":" in tok:
        parts = tok.split(":")
        if len(parts) != 2 or not all(parts):
            raise TermSpecError(f"bad interaction term {tok!r}")
        return Interaction(*parts)
    if tok.endswith("^2"):
        name = tok[:-2]
        if not name:
            raise TermSpecError(f"bad square term {tok!r}")
        return Square(name)
    if not tok or any(c in tok for c in "^*()"):
        raise TermSpecError(f"bad term {tok!r}")
    return Main(tok)


@dataclass(frozen=True)
class TermSpec:
    """Ordered regressor list; the intercept comes first, exactly once."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms or terms[0] != Intercept():
            raise TermSpecError("the intercept must be the first term")
        if sum(isinstance(t, Intercept) for t in terms) != 1:
            raise TermSpecError("the intercept must appear exactly once")
        if len(set(terms)) != len(terms):
            raise TermSpecError(f"duplicate terms in {self}")

    @classmethod
    def parse(cls, text: str) -> "TermSpec":
        compact = "".join(text.split())
        if not compact:
            raise TermSpecError("empty term specification")
        return cls(tuple(_parse_term(tok) for tok in compact.split("+")))

    def __str__(self):
        return " + ".join(str(t) for t in self.terms)

    def __len__(self):
        return len(self.terms)

    @property
    def column_names(self) -> list:
        return [str(t) for t in self.terms]

    @property
    def covariates(self) -> list:
        """Covariate names used by any term, in first-appearance order."""
        seen = {}
        for t in self.terms:
            for nm in t.names:
                seen.setdefault(nm, None)
        return list(seen)

    def without(self, excluded: Iterable[Union[str, Term]]) -> "TermSpec":
        """Drop the named terms (canonical text, e.g. ``"a:b"``)."""
        drop = set()
        for e in excluded:
            term = _parse_term("".join(e.split())) if isinstance(e, str) else e
            if term not in self.terms:
                raise TermSpecError(f"cannot exclude {term}: not in {self}")
            drop.add(term)
        return TermSpec(tuple(t for t in self.terms if t not in drop))


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_names: list

    @property
    def shape(self):
        return self.values.shape


def full_pairwise(
    names: Sequence[str], continuous: Union[Sequence[bool], None] = None, squares: bool = False
) -> TermSpec:
    """Intercept, all main effects, optional squares of continuous covariates,
    then all pairwise interactions."""
    names = list(names)
    if not names:
        raise TermSpecError("need at least one covariate")
    terms = [Intercept()] + [Main(n) for n in names]
    if squares:
        flags = list(continuous) if continuous is not None else [True] * len(names)
        terms += [Square(n) for n, c in zip(names, flags) if c]
    terms += [Interaction(a, b) for a, b in itertools.combinations(names, 2)]
    return TermSpec(tuple(terms))


def main_effects(names: Sequence[str]) -> TermSpec:
    return TermSpec((Intercept(),) + tuple(Main(n) for n in names))


def expand_columns(spec: TermSpec, names: Sequence[str], z: np.ndarray) -> np.ndarray:
    """Expand ``spec`` over the covariate matrix ``z`` whose columns are ``names``.

    No binary check here; :func:`expand` does that against the full sample.
    """
    idx = {nm: j for j, nm in enumerate(names)}
    for nm in spec.covariates:
        if nm not in idx:
            raise UnknownCovariate(f"unknown covariate {nm!r}")
    z = np.asarray(z, dtype=float)
    out = np.empty((z.shape[0], len(spec.terms)))
    for j, t in enumerate(spec.terms):
        if isinstance(t, Intercept):
            out[:, j] = 1.0
        elif isinstance(t, Main):
            out[:, j] = z[:, idx[t.name]]
        elif isinstance(t, Square):
            col = z[:, idx[t.name]]
            out[:, j] = col * col
        else:
            out[:, j] = z[:, idx[t.a]] * z[:, idx[t.b]]
    return out


_SUBSETS = ("all", "trial", "cohort", "treated", "control")


def unit_filter(data: StudyData, subset: Union[str, np.ndarray]) -> np.ndarray:
    """Indices (into all units) selected by a named subset or a boolean mask."""
    if isinstance(subset, str):
        if subset == "all":
            return np.arange(data.n_units)
        if subset == "trial":
            return data.trial_index
        if subset == "cohort":
            return data.cohort_index
        if subset == "treated":
            return data.trial_index[data.x == 1]
        if subset == "control":
            return data.trial_index[data.x == 0]
        raise ValueError(f"subset must be one of {_SUBSETS} or a mask")
    mask = np.asarray(subset, dtype=bool)
    if mask.shape != (data.n_units,):
        raise ValueError("mask length must equal the number of units")
    return np.flatnonzero(mask)


def expand(spec: TermSpec, data: StudyData, subset: Union[str, np.ndarray] = "all") -> DesignMatrix:
    """Numeric design matrix for the selected units, rows in input order.

    A square term is refused when the covariate is binary over the whole
    sample (not just over the subset).
    """
    for t in spec.terms:
        if isinstance(t, Square):
            if t.name not in data.covariate_names:
                raise UnknownCovariate(f"unknown covariate {t.name!r}")
            col = data.covariate(t.name)
            if np.all((col == 0.0) | (col == 1.0)):
                raise SquareOnBinary(f"square of binary covariate {t.name!r}")
    rows = unit_filter(data, subset)
    values = expand_columns(spec, data.covariate_names, data.z[rows])
    return DesignMatrix(values, spec.column_names)
