"""Shared domain types: datasets, case weights, threshold priors, statistic
curves, fit reports, and the model contract.

All containers are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import csv
import io
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    EmptyDatasetError,
    MalformedRecordError,
)

NEG_INF = float("-inf")

#: statistics are quadratic forms or likelihood-ratio differences; entries
#: below -CURVE_TOL indicate a bug rather than roundoff
CURVE_TOL = 1e-8


@dataclass(frozen=True)
class Observation:
    """One current-status record: examination time, event indicator, covariate."""

    v: float
    delta: int
    z: float


class Dataset:
    """Current-status observations sorted ascending by examination time.

    Ties in ``v`` keep their original input order (stable sort), so
    construction is deterministic. The distinct sorted times double as the
    support of the step cumulative hazard; ``knot_idx[i]`` maps
    observation ``i`` to its knot.
    """

    __slots__ = ("v", "delta", "z", "n", "knots", "knot_idx")

    def __init__(self, v: np.ndarray, delta: np.ndarray, z: np.ndarray):
        order = np.argsort(v, kind="stable")
        self.v = np.ascontiguousarray(v[order], dtype=np.float64)
        self.delta = np.ascontiguousarray(delta[order], dtype=np.float64)
        self.z = np.ascontiguousarray(z[order], dtype=np.float64)
        self.n = int(self.v.shape[0])
        self.knots, self.knot_idx = np.unique(self.v, return_inverse=True)
        self.knot_idx = np.ascontiguousarray(self.knot_idx, dtype=np.int64)
        for arr in (self.v, self.delta, self.z, self.knots):
            arr.setflags(write=False)
        self.knot_idx.setflags(write=False)

    def records(self) -> list[tuple[float, int, float]]:
        return [
            (float(a), int(b), float(c))
            for a, b, c in zip(self.v, self.delta, self.z)
        ]

    def __len__(self) -> int:
        return self.n


def validate_dataset(raw: Sequence[tuple]) -> Dataset:
    """Build a :class:`Dataset` from ``(v, delta, z)`` triples.

    Rejects empty input, nonfinite fields, negative times, and indicators
    outside {0, 1}; errors name the offending row.
    """
    rows = list(raw)
    if not rows:
        raise EmptyDatasetError("dataset is empty")
    n = len(rows)
    v = np.empty(n)
    d = np.empty(n)
    z = np.empty(n)
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise MalformedRecordError(i, f"expected 3 fields, got {len(row)}")
        vi, di, zi = (float(row[0]), float(row[1]), float(row[2]))
        if not np.isfinite(vi) or vi < 0:
            raise MalformedRecordError(i, f"v must be finite and >= 0, got {row[0]!r}")
        if di not in (0.0, 1.0):
            raise MalformedRecordError(i, f"delta must be 0 or 1, got {row[1]!r}")
        if not np.isfinite(zi):
            raise MalformedRecordError(i, f"z must be finite, got {row[2]!r}")
        v[i], d[i], z[i] = vi, di, zi
    return Dataset(v, d, z)


def load_dataset_csv(path_or_buf) -> Dataset:
    """Read the ``v,delta,z`` CSV convention (header required, UTF-8)."""
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["v", "delta", "z"]:
        raise MalformedRecordError(0, f"expected header 'v,delta,z', got {header!r}")
    rows = [tuple(r) for r in reader if r]
    try:
        return validate_dataset(rows)
    except ValueError as exc:
        if isinstance(exc, (MalformedRecordError, EmptyDatasetError)):
            raise
        raise MalformedRecordError(-1, str(exc)) from exc


def write_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["v", "delta", "z"])
        for v, d, z in ds.records():
            writer.writerow([repr(v), d, repr(z)])


@dataclass(frozen=True)
class CaseWeights:
    """Nonnegative per-observation weights summing to the sample size."""

    w: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        n = w.shape[0]
        if n == 0:
            raise ValueError("weights must be nonempty")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
        if abs(float(w.sum()) - n) > 1e-10 * n:
            raise ValueError(f"weights must sum to n={n}, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def ones(cls, n: int) -> "CaseWeights":
        return cls(np.ones(n))


def as_weight_array(weights, n: int) -> np.ndarray:
    """Coerce ``CaseWeights | ndarray | None`` to a validated float array."""
    if weights is None:
        return np.ones(n)
    if isinstance(weights, CaseWeights):
        arr = weights.w
    else:
        arr = CaseWeights(np.asarray(weights, dtype=np.float64)).w
    if arr.shape[0] != n:
        raise AlignmentError(f"weights have length {arr.shape[0]}, expected {n}")
    return arr


@dataclass(frozen=True)
class ZetaPrior:
    """Quadrature grid over the threshold with positive weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        wts = np.ascontiguousarray(self.weights, dtype=np.float64)
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size == 0:
            raise ValueError("points and weights must be equal-length 1-d arrays")
        if not np.isfinite(pts).all():
            raise ValueError("prior points must be finite")
        if pts.size > 1 and not (np.diff(pts) > 0).all():
            raise ValueError("prior points must be strictly increasing")
        if (wts <= 0).any():
            raise ValueError("prior weights must be positive")
        if abs(float(wts.sum()) - 1.0) > 1e-12:
            raise ValueError(f"prior weights must sum to 1, got {wts.sum()!r}")
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


def make_uniform_prior(lo: float, hi: float, G: int) -> ZetaPrior:
    """Midpoint-rule discretization of a uniform weight on ``[lo, hi]``."""
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    G = int(G)
    if G < 1:
        raise ValueError("G must be a positive integer")
    points = lo + (np.arange(G) + 0.5) * (hi - lo) / G
    weights = np.full(G, 1.0 / G)
    weights = weights / weights.sum()
    return ZetaPrior(points, weights)


def point_prior(zeta0: float) -> ZetaPrior:
    """Point mass at a single threshold value."""
    if not np.isfinite(zeta0):
        raise ValueError("zeta0 must be finite")
    return ZetaPrior(np.array([float(zeta0)]), np.array([1.0]))


@dataclass(frozen=True)
class StatCurve:
    """A statistic evaluated over a prior grid, aligned index-for-index.

    Entries are nonnegative up to roundoff; ``-inf`` marks an infeasible
    fit at that grid point (the exp-average functional drops the atom).
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("curve must be a nonempty 1-d array")
        if np.isnan(vals).any() or (vals == np.inf).any():
            raise ValueError("curve entries must be finite or -inf")
        finite = vals[np.isfinite(vals)]
        if finite.size and float(finite.min()) < -CURVE_TOL:
            raise ValueError(f"curve entry below -{CURVE_TOL}: {finite.min()}")
        vals = np.where(np.isfinite(vals), np.maximum(vals, 0.0), vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class FitReport:
    """Convergence diagnostics attached to every fit."""

    loglik: float
    iterations: int
    converged: bool
    final_gradient_norm: float


class ModelInterface(ABC):
    """Contract every concrete model implements.

    ``fit_alt`` profiles nuisance parameters at a fixed threshold, so its
    log-likelihood is never materially below the null fit's. Scores are
    per-observation vectors of length ``beta_dim()``.
    """

    @abstractmethod
    def beta_dim(self) -> int: ...

    @abstractmethod
    def zeta_range(self) -> tuple[float, float]:
        """Open interval of admissible threshold values."""

    @abstractmethod
    def fit_null(self, ds, weights=None): ...

    @abstractmethod
    def fit_alt(self, ds, zeta: float, weights=None): ...

    @abstractmethod
    def loglik(self, ds, fit, weights=None) -> float: ...

    @abstractmethod
    def score_beta(self, ds, null_fit, zeta: float, weights=None):
        """Per-observation score block for the jump parameters.

        Returns ``(mean, per_obs)`` with ``per_obs`` of shape ``(n, p)``.
        """

    def bind(self, ds, zetas: np.ndarray) -> "BoundFitter":
        """Precompute per-dataset state for repeated weighted refits."""
        return _GenericBoundFitter(self, ds, np.asarray(zetas, dtype=np.float64))

    def check_prior(self, prior: ZetaPrior) -> None:
        lo, hi = self.zeta_range()
        if (prior.points <= lo).any() or (prior.points >= hi).any():
            raise ValueError(
                f"prior points must lie strictly inside ({lo}, {hi})"
            )


class BoundFitter(ABC):
    """Weighted-refit engine bound to one dataset and one threshold grid."""

    zetas: np.ndarray

    @abstractmethod
    def fit_all(self, weights) -> tuple[np.ndarray, np.ndarray]:
        """Refit null and every grid threshold under the given weights.

        Returns ``(betas, ok)`` where ``betas`` has shape ``(G, p)`` holding
        the unrestricted-minus-restricted jump estimates and ``ok`` flags
        threshold fits that converged.
        """

    def score_all(self, weights) -> tuple[np.ndarray, np.ndarray]:
        """Weighted score means at the weighted restricted fit.

        Returns ``(means, ok)`` with ``means`` of shape ``(G, p)``; the
        score process is the linearization of the jump-estimate process, so
        these drive the score-form bootstrap.
        """
        raise NotImplementedError


class _GenericBoundFitter(BoundFitter):
    def __init__(self, model: ModelInterface, ds, zetas: np.ndarray):
        self.model = model
        self.ds = ds
        self.zetas = zetas

    def fit_all(self, weights):
        p = self.model.beta_dim()
        G = self.zetas.shape[0]
        betas = np.full((G, p), np.nan)
        ok = np.zeros(G, dtype=bool)
        for g, zeta in enumerate(self.zetas):
            try:
                fit = self.model.fit_alt(self.ds, float(zeta), weights)
            except Exception:
                continue
            if getattr(fit.report, "converged", True):
                betas[g] = fit.beta_hat
                ok[g] = True
        return betas, ok
