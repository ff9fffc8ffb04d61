"""Pointwise statistic curves and the exp-average / sup functionals.

The aggregating functional is
``(1+c)^(-p/2) * integral exp(0.5 * c/(1+c) * s(zeta)) dJ(zeta)``
over a discrete prior J. The ``c = 0`` regime degenerates to the average
of the curve; ``c = inf`` is ``log integral exp(s/2) dJ`` computed in
log-sum-exp form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import StatCurve, ZetaPrior
from .errors import AlignmentError, OptimizerInconsistencyError, SingularVarianceError

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ExpAvgConfig:
    """Aggregation constant c (math.inf allowed) and jump dimension p."""

    c: float
    p: int

    def __post_init__(self):
        if not (self.c >= 0):
            raise ValueError(f"c must be nonnegative, got {self.c}")
        if int(self.p) < 1:
            raise ValueError(f"p must be a positive integer, got {self.p}")


@dataclass(frozen=True)
class VarianceSource:
    """Per-grid-point variance matrices used to standardize score means.

    ``tag = "outer_product"`` carries the empirical score outer products;
    ``tag = "bootstrap"`` carries n * V_boot, the bootstrap estimate of the
    variance of the sqrt(n)-scaled statistic.
    """

    tag: str
    matrices: np.ndarray  # (G, p, p)

    def __post_init__(self):
        if self.tag not in ("outer_product", "bootstrap"):
            raise ValueError(f"unknown variance source tag {self.tag!r}")
        mats = np.asarray(self.matrices, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("matrices must have shape (G, p, p)")
        if not np.allclose(mats, np.swapaxes(mats, 1, 2), atol=1e-8):
            raise ValueError("variance matrices must be symmetric")
        object.__setattr__(self, "matrices", mats)


def _inv_psd(mat: np.ndarray, index: int) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below 1e-10 of the largest are treated as a degenerate
    subspace and contribute nothing to quadratic forms (boundary-pinned
    bootstrap refits can collapse a direction entirely). A matrix with no
    usable eigenvalue raises.
    """
    mat = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(mat)
    cutoff = 1e-10 * max(float(vals.max(initial=0.0)), 1e-300)
    keep = vals > cutoff
    if not keep.any():
        raise SingularVarianceError(index, "no usable eigenvalue")
    return (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T


def score_stat_curve(means: np.ndarray, vars: VarianceSource, n: int) -> StatCurve:
    """Quadratic-form curve n * mean' V^{-1} mean over the grid."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = means[:, None]
    G, p = means.shape
    if vars.matrices.shape != (G, p, p):
        raise AlignmentError(
            f"variance matrices shaped {vars.matrices.shape}, expected {(G, p, p)}"
        )
    vals = np.empty(G)
    for g in range(G):
        vinv = _inv_psd(vars.matrices[g], g)
        vals[g] = n * float(means[g] @ vinv @ means[g])
    return StatCurve(np.maximum(vals, 0.0))


def wald_stat_curve(beta_hats: np.ndarray, beta0: np.ndarray, infos: np.ndarray, n: int) -> StatCurve:
    """n * (beta - beta0)' I(beta) (beta - beta0) with per-observation information."""
    beta_hats = np.asarray(beta_hats, dtype=np.float64)
    if beta_hats.ndim == 1:
        beta_hats = beta_hats[:, None]
    beta0 = np.asarray(beta0, dtype=np.float64).reshape(-1)
    infos = np.asarray(infos, dtype=np.float64)
    G, p = beta_hats.shape
    if beta0.shape != (p,) or infos.shape != (G, p, p):
        raise AlignmentError("beta0/info shapes do not match the estimate grid")
    diff = beta_hats - beta0[None, :]
    vals = n * np.einsum("gi,gij,gj->g", diff, infos, diff)
    if float(vals.min()) < -1e-8:
        raise ValueError("information matrices produced a negative quadratic form")
    return StatCurve(np.maximum(vals, 0.0))


def lr_stat_curve(loglik0: float, logliks) -> StatCurve:
    """-2 * (null loglik - alternative loglik), clamped below at zero."""
    logliks = np.asarray(logliks, dtype=np.float64)
    if (logliks < loglik0 - 1e-6).any():
        worst = float(logliks.min())
        raise OptimizerInconsistencyError(
            f"alternative loglik {worst} fell below null {loglik0} beyond 1e-6"
        )
    return StatCurve(np.maximum(-2.0 * (loglik0 - logliks), 0.0))


def _drop_infeasible(values: np.ndarray, weights: np.ndarray):
    finite = np.isfinite(values)
    if finite.all():
        return values, weights
    if not finite.any():
        raise ValueError("every grid point is infeasible")
    warnings.warn(
        f"dropping {int((~finite).sum())} infeasible grid point(s) and renormalizing the prior"
    )
    w = weights[finite]
    return values[finite], w / w.sum()


def exp_average(curve: StatCurve, prior: ZetaPrior, cfg: ExpAvgConfig) -> float:
    """Exp-average functional of a statistic curve against the prior."""
    if curve.size != prior.size:
        raise AlignmentError(
            f"curve has {curve.size} entries but prior has {prior.size} points"
        )
    vals, wts = _drop_infeasible(curve.values, prior.weights)
    if cfg.c == 0:
        return float(np.dot(wts, vals))
    if math.isinf(cfg.c):
        half = vals / 2.0
        mx = float(half.max())
        return mx + math.log(float(np.dot(wts, np.exp(half - mx))))
    kappa = 0.5 * cfg.c / (1.0 + cfg.c)
    pref = (1.0 + cfg.c) ** (-cfg.p / 2.0)
    return pref * float(np.dot(wts, np.exp(kappa * vals)))


def sup_stat(curve: StatCurve) -> tuple[float, int]:
    """Maximum of the curve and the first index attaining it."""
    finite = np.where(np.isfinite(curve.values), curve.values, NEG_INF)
    idx = int(np.argmax(finite))
    return float(finite[idx]), idx


def expavg_rows(quads: np.ndarray, weights: np.ndarray, cfg: ExpAvgConfig) -> np.ndarray:
    """Vectorized exp-average over rows of quadratic-form values.

    ``quads`` is (B, G) with NaN marking dropped atoms; each row's weights
    are renormalized over its usable atoms.
    """
    quads = np.asarray(quads, dtype=np.float64)
    ok = np.isfinite(quads)
    if not ok.any(axis=1).all():
        raise ValueError("a row has no usable grid points")
    w = np.where(ok, weights[None, :], 0.0)
    w = w / w.sum(axis=1, keepdims=True)
    q = np.where(ok, quads, 0.0)
    if cfg.c == 0:
        return (w * q).sum(axis=1)
    if math.isinf(cfg.c):
        half = np.where(ok, q / 2.0, NEG_INF)
        mx = half.max(axis=1)
        return mx + np.log((w * np.exp(half - mx[:, None])).sum(axis=1))
    kappa = 0.5 * cfg.c / (1.0 + cfg.c)
    pref = (1.0 + cfg.c) ** (-cfg.p / 2.0)
    return pref * (w * np.where(ok, np.exp(kappa * q), 0.0)).sum(axis=1)


def sup_rows(quads: np.ndarray) -> np.ndarray:
    """Vectorized row-wise sup of quadratic-form values, ignoring NaN atoms."""
    quads = np.asarray(quads, dtype=np.float64)
    ok = np.isfinite(quads)
    if not ok.any(axis=1).all():
        raise ValueError("a row has no usable grid points")
    return np.where(ok, quads, NEG_INF).max(axis=1)
