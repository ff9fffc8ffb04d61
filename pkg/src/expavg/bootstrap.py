"""Weighted-bootstrap critical values.

Each draw re-fits the restricted and every grid-threshold unrestricted
estimator under standardized exponential case weights; the centered,
variance-standardized quadratic forms of the jump-estimate differences
feed the same exp-average (or sup) functional as the observed statistic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ModelInterface, ZetaPrior
from .errors import (
    AlignmentError,
    BootstrapInstabilityError,
    ExpavgError,
    InsufficientDrawsError,
)
from .rng import derive_rng, derive_seed
from .stats import ExpAvgConfig, expavg_rows, sup_rows, _inv_psd

#: raw bootstrap weights are standard exponentials conditioned on <= this cap
WEIGHT_TRUNCATION = 5.0


def _raw_truncated_exponential(n: int, rng: np.random.Generator) -> np.ndarray:
    """Exp(1) draws conditioned on <= the truncation cap, via rejection."""
    k = rng.exponential(1.0, n)
    bad = k > WEIGHT_TRUNCATION
    while bad.any():
        k[bad] = rng.exponential(1.0, int(bad.sum()))
        bad = k > WEIGHT_TRUNCATION
    return k


def draw_weights(n: int, seed) -> np.ndarray:
    """Standardized truncated-exponential case weights summing to n.

    Raw draws are Exp(1) conditioned on <= 5 (rejection sampling), then
    divided by their sample mean.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = _raw_truncated_exponential(n, derive_rng(seed))
    return k * (n / k.sum())


@dataclass(frozen=True)
class BootstrapDraws:
    """Jump-estimate differences across draws and grid points.

    ``d_beta[k, g]`` is the draw-k unrestricted-minus-restricted jump
    estimate at grid point g (NaN where the refit failed); ``ok`` flags
    usable entries. ``n_grid`` leading grid points carry the prior; any
    remaining points are extra evaluation thresholds.
    """

    zetas: np.ndarray
    d_beta: np.ndarray  # (M, G_eval, p)
    ok: np.ndarray  # (M, G_eval) bool
    n_grid: int
    seed: tuple
    n_failed: int

    @property
    def n_draws(self) -> int:
        return int(self.d_beta.shape[0])


def bootstrap_curves(
    ds,
    model: ModelInterface,
    prior: ZetaPrior,
    M: int,
    seed,
    extra_zetas=(),
    fitter=None,
) -> BootstrapDraws:
    """Run M weighted refits over the prior grid (plus extra thresholds).

    Per-draw seeds derive from ``seed`` and the draw index, so results are
    identical however draws are scheduled. Failed refits are recorded as
    missing; more than 20% missing overall raises. A pre-bound ``fitter``
    (e.g. one already warm-started on the observed fits) can be passed in;
    its grid must equal the prior points followed by ``extra_zetas``.
    """
    if M < 2:
        raise InsufficientDrawsError(f"need at least 2 draws, got {M}")
    zetas = np.concatenate([prior.points, np.asarray(extra_zetas, dtype=np.float64)])
    if fitter is None:
        fitter = model.bind(ds, zetas)
    elif not np.array_equal(np.asarray(fitter.zetas), zetas):
        raise AlignmentError("bound fitter grid does not match prior + extra_zetas")
    p = model.beta_dim()
    G = zetas.shape[0]
    d_beta = np.full((M, G, p), np.nan)
    ok = np.zeros((M, G), dtype=bool)
    base = derive_seed(seed)
    for k in range(M):
        w = draw_weights(len(ds), derive_seed(base, k))
        try:
            betas, good = fitter.fit_all(w)
        except (ExpavgError, FloatingPointError, np.linalg.LinAlgError):
            continue
        d_beta[k] = betas
        ok[k] = good
    n_failed = int((~ok).sum())
    # Thresholds whose refits fail for most draws are quasi-separated at
    # this dataset; they are excluded outright (a single pathological
    # threshold must not void the test) and do not count toward the
    # instability check, which guards against global breakdown.
    alive = ok.sum(axis=0) >= max(2, M // 2)
    if not alive.any():
        raise BootstrapInstabilityError("every threshold failed to refit")
    if not alive.all():
        dead = np.nonzero(~alive)[0]
        ok[:, ~alive] = False
        warnings.warn(
            f"thresholds at grid indices {dead.tolist()} failed for most "
            "draws and are excluded"
        )
    n_failed_alive = int((~ok[:, alive]).sum())
    if n_failed_alive > 0.2 * M * int(alive.sum()):
        raise BootstrapInstabilityError(
            f"{n_failed_alive} of {M * int(alive.sum())} bootstrap refits failed (> 20%)"
        )
    if n_failed:
        warnings.warn(f"{n_failed} of {M * G} bootstrap refits failed and were dropped")
    return BootstrapDraws(zetas, d_beta, ok, prior.size, base, n_failed)


def score_bootstrap_curves(
    ds,
    model: ModelInterface,
    prior: ZetaPrior,
    M: int,
    seed,
    extra_zetas=(),
    fitter=None,
) -> BootstrapDraws:
    """Weighted-bootstrap draws of the score process instead of refitted
    jump estimates.

    The score mean at the weighted restricted fit is the linearization of
    the jump-estimate difference, so the downstream standardization and
    functionals are shared with :func:`bootstrap_curves`. Unlike full
    refits, score draws cannot quasi-separate, which keeps the reference
    distribution Gaussian-like at sample sizes where unrestricted refits
    routinely land on the parameter box.
    """
    if M < 2:
        raise InsufficientDrawsError(f"need at least 2 draws, got {M}")
    zetas = np.concatenate([prior.points, np.asarray(extra_zetas, dtype=np.float64)])
    if fitter is None:
        fitter = model.bind(ds, zetas)
    elif not np.array_equal(np.asarray(fitter.zetas), zetas):
        raise AlignmentError("bound fitter grid does not match prior + extra_zetas")
    p = model.beta_dim()
    G = zetas.shape[0]
    means = np.full((M, G, p), np.nan)
    ok = np.zeros((M, G), dtype=bool)
    base = derive_seed(seed)
    for k in range(M):
        w = draw_weights(len(ds), derive_seed(base, k))
        try:
            mk, good = fitter.score_all(w)
        except (ExpavgError, FloatingPointError, np.linalg.LinAlgError):
            continue
        means[k] = mk
        ok[k] = good
    n_failed = int((~ok).sum())
    if n_failed > 0.2 * M * G:
        raise BootstrapInstabilityError(
            f"{n_failed} of {M * G} bootstrap refits failed (> 20%)"
        )
    if n_failed:
        warnings.warn(f"{n_failed} of {M * G} score-bootstrap draws failed and were dropped")
    return BootstrapDraws(zetas, means, ok, prior.size, base, n_failed)


def summarize(draws: BootstrapDraws) -> tuple[np.ndarray, np.ndarray]:
    """Per-grid-point mean and covariance of the draws (divisor = count).

    A ridge of 1e-10*(1+trace) is added where the smallest eigenvalue
    falls below 1e-12, with a warning.
    """
    if draws.n_draws < 2:
        raise InsufficientDrawsError("need at least 2 draws to summarize")
    M, G, p = draws.d_beta.shape
    mu = np.full((G, p), np.nan)
    V = np.full((G, p, p), np.nan)
    ridged = []
    dead = []
    for g in range(G):
        sel = draws.d_beta[draws.ok[:, g], g, :]
        if sel.shape[0] < 2:
            dead.append(g)
            continue
        mu[g] = sel.mean(axis=0)
        diff = sel - mu[g]
        V[g] = diff.T @ diff / sel.shape[0]
        if float(np.linalg.eigvalsh(V[g]).min()) < 1e-12:
            V[g] = V[g] + (1e-10 * (1.0 + abs(float(np.trace(V[g]))))) * np.eye(p)
            ridged.append(g)
    if len(dead) == G:
        raise InsufficientDrawsError("fewer than 2 usable draws at every grid index")
    if dead:
        warnings.warn(f"grid indices {dead} have fewer than 2 usable draws; left as NaN")
    if ridged:
        warnings.warn(f"degenerate bootstrap covariance at grid indices {ridged}; ridge added")
    return mu, V


def _match_prior(prior: ZetaPrior, zetas: np.ndarray) -> np.ndarray:
    """Indices of the prior's points inside the evaluation grid."""
    idx = np.empty(prior.size, dtype=np.int64)
    for i, pt in enumerate(prior.points):
        hits = np.nonzero(np.abs(zetas - pt) <= 1e-12)[0]
        if hits.size != 1:
            raise AlignmentError(f"prior point {pt} not uniquely on the evaluation grid")
        idx[i] = hits[0]
    return idx


def _quad_rows(d_beta, ok, mu, V):
    """Standardized quadratic forms per (row, grid point); NaN where unusable
    (failed refit, or a grid point with no summary)."""
    M, G, p = d_beta.shape
    live = ~np.isnan(V).any(axis=(1, 2))
    vinv = np.zeros_like(V)
    for g in range(G):
        if live[g]:
            vinv[g] = _inv_psd(V[g], g)
    diff = d_beta - mu[None, :, :] if mu is not None else d_beta
    usable = ok & live[None, :]
    diff = np.where(usable[:, :, None], diff, 0.0)
    quads = np.einsum("mgi,gij,mgj->mg", diff, vinv, diff)
    return np.where(usable, quads, np.nan)


def standardized_T(
    draws: BootstrapDraws,
    mu: np.ndarray,
    V: np.ndarray,
    prior: ZetaPrior,
    cfg: ExpAvgConfig,
    functional: str = "expavg",
) -> np.ndarray:
    """Standardized bootstrap statistics, one per draw.

    ``functional`` is ``"expavg"`` (default) or ``"sup"`` (sup of the
    centered quadratic form over the prior's points).
    """
    idx = _match_prior(prior, draws.zetas)
    quads = _quad_rows(draws.d_beta, draws.ok, mu, V)[:, idx]
    usable = np.isfinite(quads).any(axis=1)
    if not usable.all():
        warnings.warn(
            f"{int((~usable).sum())} of {quads.shape[0]} bootstrap statistics "
            "dropped (no usable grid point in those draws)"
        )
        quads = quads[usable]
    if quads.shape[0] < 2:
        raise InsufficientDrawsError("fewer than 2 usable bootstrap statistics")
    if functional == "expavg":
        return expavg_rows(quads, prior.weights, cfg)
    if functional == "sup":
        return sup_rows(quads)
    raise ValueError(f"unknown functional {functional!r}")


def observed_T(
    d_beta_obs: np.ndarray,
    ok_obs: np.ndarray,
    mu: np.ndarray,
    V: np.ndarray,
    prior: ZetaPrior,
    cfg: ExpAvgConfig,
    zetas: np.ndarray,
    functional: str = "expavg",
) -> float:
    """Observed statistic built with the same functional as the draws.

    The observed deviations are measured from the restricted value (no
    centering by the bootstrap mean), but standardized by the bootstrap
    covariance.
    """
    idx = _match_prior(prior, zetas)
    quads = _quad_rows(d_beta_obs[None, :, :], ok_obs[None, :], None, V)[:, idx]
    if functional == "expavg":
        return float(expavg_rows(quads, prior.weights, cfg)[0])
    if functional == "sup":
        return float(sup_rows(quads)[0])
    raise ValueError(f"unknown functional {functional!r}")


def critical_value(T_samples, alpha: float) -> float:
    """Empirical (1-alpha) quantile: order statistic ceil((1-alpha)*M), 1-based."""
    samples = np.sort(np.asarray(T_samples, dtype=np.float64))
    M = samples.shape[0]
    if M == 0:
        raise InsufficientDrawsError("no bootstrap statistics")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rank = min(max(math.ceil((1.0 - alpha) * M), 1), M)
    return float(samples[rank - 1])


def p_value(observed: float, T_samples) -> float:
    """(1 + #{T >= observed}) / (M + 1); never exactly zero."""
    samples = np.asarray(T_samples, dtype=np.float64)
    M = samples.shape[0]
    if M == 0:
        raise InsufficientDrawsError("no bootstrap statistics")
    return float((1 + int((samples >= observed).sum())) / (M + 1))


@dataclass
class BootstrapSummary:
    """Everything the harness persists about one bootstrap run."""

    zetas: np.ndarray
    mu: np.ndarray
    V: np.ndarray
    T_samples: dict = field(default_factory=dict)
    critical_values: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)

    def to_dict(self, include_samples: bool = False) -> dict:
        out = {
            "zetas": self.zetas.tolist(),
            "mu": self.mu.tolist(),
            "V": self.V.tolist(),
            "critical_values": {str(k): v for k, v in self.critical_values.items()},
            "p_values": {str(k): v for k, v in self.p_values.items()},
        }
        if include_samples:
            out["T_samples"] = {
                str(k): np.asarray(v).tolist() for k, v in self.T_samples.items()
            }
        return out
