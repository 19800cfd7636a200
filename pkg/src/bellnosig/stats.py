"""Pearson chi-square statistics and their tail probabilities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .tables import ContingencyTable

#: Expected counts below this trigger a :class:`SmallExpectedCountWarning`.
EXPECTED_COUNT_FLOOR = 5.0

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000


class DegenerateTableError(ValueError):
    """A contingency table with an empty row or column cannot be tested."""


class SmallExpectedCountWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Chi2Result:
    chi2: float
    dof: int
    p_raw: float
    p_corrected: float
    descriptor: str = ""
    multiplier: int = 1
    # diagnostic only; not serialized, so excluded from equality
    min_expected: float = field(default=math.inf, compare=False)

    def __post_init__(self):
        if not self.chi2 >= 0:
            raise ValueError(f"chi2 must be nonnegative, got {self.chi2}")
        if self.dof < 1:
            raise ValueError(f"dof must be positive, got {self.dof}")
        if not (0.0 <= self.p_raw <= self.p_corrected <= 1.0):
            raise ValueError(f"need 0 <= p_raw <= p_corrected <= 1, got {self.p_raw}, {self.p_corrected}")

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor,
            "chi2": self.chi2,
            "dof": self.dof,
            "p_raw": self.p_raw,
            "p_corrected": self.p_corrected,
            "multiplier": self.multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chi2Result":
        return cls(
            chi2=float(d["chi2"]),
            dof=int(d["dof"]),
            p_raw=float(d["p_raw"]),
            p_corrected=float(d["p_corrected"]),
            descriptor=d.get("descriptor", ""),
            multiplier=int(d.get("multiplier", 1)),
        )


@dataclass(frozen=True)
class CorrectionPolicy:
    """Bonferroni multiplier: the number of tests that could have been reported."""

    multiplier: int

    def __post_init__(self):
        if int(self.multiplier) != self.multiplier or self.multiplier < 1:
            raise ValueError(f"multiplier must be a positive integer, got {self.multiplier}")


# incomplete gamma -------------------------------------------------------------


def _gamma_series(a: float, x: float) -> float:
    """Lower regularized gamma P(a, x) by its power series; converges fast for x < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"gamma series failed to converge for a={a}, x={x}")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by modified Lentz evaluation of its continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"gamma continued fraction failed to converge for a={a}, x={x}")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_contfrac(a, x)


def chi2_pvalue(chi2: float, dof: int) -> float:
    """Upper tail probability of the chi-square distribution, Q(dof/2, chi2/2)."""
    if chi2 < 0:
        raise ValueError(f"chi2 must be nonnegative, got {chi2}")
    if dof < 1:
        raise ValueError(f"dof must be positive, got {dof}")
    return min(1.0, max(0.0, gammaincc(dof / 2.0, chi2 / 2.0)))


# tests ----------------------------------------------------------------------


def pearson_chi2(table, descriptor: str = "") -> Chi2Result:
    """Pearson's chi-square test of independence, without continuity correction.

    ``table`` is a :class:`~bellnosig.tables.ContingencyTable` or anything
    array-like with shape (r, c).  Expected counts are row sum times column
    sum over the total.  A :class:`SmallExpectedCountWarning` is issued, not an
    error, when some expected count is below :data:`EXPECTED_COUNT_FLOOR`.
    """
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise DegenerateTableError(f"need an r x c table with r, c >= 2, got shape {obs.shape}")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    labels_r = getattr(table, "row_labels", None) or [str(i) for i in range(obs.shape[0])]
    labels_c = getattr(table, "col_labels", None) or [str(j) for j in range(obs.shape[1])]
    empty = [f"row {labels_r[i]}" for i in np.flatnonzero(rows <= 0)]
    empty += [f"column {labels_c[j]}" for j in np.flatnonzero(cols <= 0)]
    if empty:
        what = f" ({descriptor})" if descriptor else ""
        raise DegenerateTableError(f"empty {', '.join(empty)}{what}")
    n = obs.sum()
    expected = np.outer(rows, cols) / n
    chi2 = float(((obs - expected) ** 2 / expected).sum())
    min_e = float(expected.min())
    if min_e < EXPECTED_COUNT_FLOOR:
        warnings.warn(
            f"expected count {min_e:.3g} < {EXPECTED_COUNT_FLOOR} in {descriptor or 'table'}",
            SmallExpectedCountWarning,
            stacklevel=2,
        )
    dof = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    p = chi2_pvalue(chi2, dof)
    return Chi2Result(chi2, dof, p, p, descriptor, 1, min_e)


def bonferroni(result: Chi2Result, policy: CorrectionPolicy | int) -> Chi2Result:
    """Multiply the raw p-value by the number of possible tests, capped at 1."""
    if not isinstance(policy, CorrectionPolicy):
        policy = CorrectionPolicy(policy)
    m = int(policy.multiplier)
    return replace(result, p_corrected=min(1.0, m * result.p_raw), multiplier=m)


@dataclass(frozen=True)
class WeightedCounts:
    """2 x 2 trial-weighted counts: ``n = sum C/T`` and squared errors ``e2 = sum C/T**2``."""

    n: tuple[tuple[float, float], tuple[float, float]]
    e2: tuple[tuple[float, float], tuple[float, float]]
    label: str = ""

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float)
        e2 = np.asarray(self.e2, dtype=float)
        if n.shape != (2, 2) or e2.shape != (2, 2):
            raise ValueError("weighted counts and errors must both be 2 x 2")
        if np.any(n < 0) or np.any(e2 < 0):
            raise ValueError("weighted counts and squared errors must be nonnegative")
        if np.any((e2 == 0) & (n > 0)):
            raise ValueError("a positive weighted count needs a positive error")
        object.__setattr__(self, "n", tuple(tuple(float(v) for v in r) for r in n))
        object.__setattr__(self, "e2", tuple(tuple(float(v) for v in r) for r in e2))

    @classmethod
    def from_errors(cls, n, e, label: str = "") -> "WeightedCounts":
        """From weighted counts and (unsquared) errors as printed with a +- sign."""
        return cls(n, np.square(np.asarray(e, dtype=float)), label)

    @classmethod
    def from_intervals(cls, coincidences: Sequence[Sequence[Sequence[int]]], trials: Sequence[Sequence[Sequence[int]]], label: str = ""):
        """From per-interval coincidences ``C`` and trial counts ``T`` for each of the 4 cells."""
        n = [[0.0, 0.0], [0.0, 0.0]]
        e2 = [[0.0, 0.0], [0.0, 0.0]]
        for i in range(2):
            for j in range(2):
                c = np.asarray(coincidences[i][j], dtype=float)
                t = np.asarray(trials[i][j], dtype=float)
                if c.shape != t.shape or np.any(t <= 0):
                    raise ValueError(f"cell ({i},{j}): need matching C and positive T")
                n[i][j] = float(np.sum(c / t))
                e2[i][j] = float(np.sum(c / t**2))
        return cls(n, e2, label)


def weighted_chi2(w: WeightedCounts, descriptor: str = "") -> Chi2Result:
    """Cross-ratio chi-square for counts collected over varying numbers of trials.

    chi2 = ((n00 n11 - n01 n10) / sum n)**2 * sum 1/e2, with one degree of freedom.
    """
    n = np.asarray(w.n)
    e2 = np.asarray(w.e2)
    if np.any(e2 <= 0):
        raise DegenerateTableError(f"every cell needs a positive error, got e2={e2.tolist()}")
    total = n.sum()
    if total <= 0:
        raise DegenerateTableError("weighted counts sum to zero")
    cross = (n[0, 0] * n[1, 1] - n[0, 1] * n[1, 0]) / total
    chi2 = float(cross**2 * np.sum(1.0 / e2))
    p = chi2_pvalue(chi2, 1)
    return Chi2Result(chi2, 1, p, p, descriptor or w.label)


def uniformity_chi2(counts: Sequence[int], descriptor: str = "") -> Chi2Result:
    """Goodness of fit of ``counts`` to equal expected frequencies, dof = k - 1."""
    obs = np.asarray(counts, dtype=float)
    if obs.ndim != 1 or obs.size < 2:
        raise ValueError("need at least two categories")
    if np.any(obs < 0):
        raise ValueError("counts must be nonnegative")
    total = obs.sum()
    if total <= 0:
        raise DegenerateTableError("counts sum to zero")
    expected = total / obs.size
    chi2 = float(((obs - expected) ** 2).sum() / expected)
    p = chi2_pvalue(chi2, obs.size - 1)
    return Chi2Result(chi2, obs.size - 1, p, p, descriptor, 1, expected)
