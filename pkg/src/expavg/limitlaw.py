"""Simulators for the limiting laws of the aggregated statistics.

The null limit is the exp-average of the quadratic form of a mean-zero
Gaussian process over the threshold grid; the sup law takes the maximum
instead. Fixed local alternatives add a deterministic drift before the
quadratic form; random local alternatives reweight the null law by itself
(their CDF is an importance-weighted null CDF).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ZetaPrior
from .errors import AlignmentError, KernelError
from .rng import derive_rng, derive_seed
from .stats import ExpAvgConfig, expavg_rows, sup_rows

#: draws are generated in fixed-size units with per-unit derived seeds, so
#: results do not depend on how batches are scheduled
_BATCH = 1 << 15


@dataclass(frozen=True)
class CovKernel:
    """Block covariance of the limiting score process over a grid.

    ``Sigma`` is the (G*p, G*p) block matrix of cross-threshold
    covariances; ``info`` holds the G diagonal p x p blocks (the efficient
    information at each threshold).
    """

    zetas: np.ndarray
    Sigma: np.ndarray
    info: np.ndarray
    p: int

    def __post_init__(self):
        zetas = np.ascontiguousarray(self.zetas, dtype=np.float64)
        Sigma = np.ascontiguousarray(self.Sigma, dtype=np.float64)
        info = np.ascontiguousarray(self.info, dtype=np.float64)
        G = zetas.shape[0]
        p = int(self.p)
        if Sigma.shape != (G * p, G * p):
            raise ValueError(f"Sigma must be ({G * p}, {G * p}), got {Sigma.shape}")
        if info.shape != (G, p, p):
            raise ValueError(f"info must be ({G}, {p}, {p}), got {info.shape}")
        if not np.allclose(Sigma, Sigma.T, atol=1e-10):
            raise ValueError("Sigma must be symmetric")
        for g in range(G):
            blk = Sigma[g * p : (g + 1) * p, g * p : (g + 1) * p]
            if not np.allclose(blk, info[g], atol=1e-10):
                raise ValueError(f"diagonal block {g} disagrees with info[{g}]")
        object.__setattr__(self, "zetas", zetas)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "info", info)

    @property
    def size(self) -> int:
        return int(self.zetas.shape[0])


@dataclass(frozen=True)
class LimitSamples:
    """Simulated draws of a limiting statistic."""

    values: np.ndarray
    c: float
    seed: tuple


def gauss_reference_kernel(zetas, sigma: float = 1.0) -> CovKernel:
    """Analytic kernel of the Gaussian change-point reference model (p = 1)."""
    from .gausscp import g_info_kernel

    zetas = np.asarray(zetas, dtype=np.float64)
    G = zetas.shape[0]
    Sigma = np.empty((G, G))
    for i in range(G):
        for j in range(G):
            Sigma[i, j] = g_info_kernel(zetas[i], zetas[j], sigma)
    info = Sigma[np.arange(G), np.arange(G)].reshape(G, 1, 1)
    return CovKernel(zetas, Sigma, info, 1)


def kernel_from_scores(zetas, scores: np.ndarray) -> CovKernel:
    """Empirical kernel from per-observation scores, shape (G, n, p).

    Blocks are the sample cross-products between thresholds; diagonal
    blocks estimate the pointwise information.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        scores = scores[:, :, None]
    G, n, p = scores.shape
    zetas = np.asarray(zetas, dtype=np.float64)
    if zetas.shape[0] != G:
        raise AlignmentError("scores and grid lengths differ")
    Sigma = np.empty((G * p, G * p))
    for i in range(G):
        for j in range(i, G):
            blk = scores[i].T @ scores[j] / n
            Sigma[i * p : (i + 1) * p, j * p : (j + 1) * p] = blk
            Sigma[j * p : (j + 1) * p, i * p : (i + 1) * p] = blk.T
    info = np.stack([Sigma[g * p : (g + 1) * p, g * p : (g + 1) * p] for g in range(G)])
    return CovKernel(zetas, 0.5 * (Sigma + Sigma.T), info, p)


def _chol_jitter(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    for jit in (1e-12, 1e-11, 1e-10):
        try:
            return np.linalg.cholesky(mat + jit * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise KernelError(f"{what} is not positive semidefinite within jitter 1e-10")


def _match_grid(kernel: CovKernel, points: np.ndarray) -> np.ndarray:
    idx = np.empty(points.shape[0], dtype=np.int64)
    for i, pt in enumerate(points):
        hits = np.nonzero(np.abs(kernel.zetas - pt) <= 1e-12)[0]
        if hits.size != 1:
            raise AlignmentError(f"prior point {pt} not uniquely on the kernel grid")
        idx[i] = hits[0]
    return idx


def _simulate_quads(kernel: CovKernel, draws: int, seed, drift: np.ndarray | None = None):
    """Yield batches of per-threshold quadratic forms, shape (batch, G)."""
    G, p = kernel.size, kernel.p
    L = _chol_jitter(kernel.Sigma, "Sigma")
    # inverse Cholesky factors of the information blocks
    cinv = np.empty((G, p, p))
    for g in range(G):
        lg = _chol_jitter(kernel.info[g], f"info block {g}")
        cinv[g] = np.linalg.solve(lg, np.eye(p))
    base = derive_seed(seed)
    done = 0
    unit = 0
    while done < draws:
        take = min(_BATCH, draws - done)
        rng = derive_rng(base, unit)
        x = rng.standard_normal((_BATCH, G * p))[:take] @ L.T
        x = x.reshape(take, G, p)
        if drift is not None:
            x = x + drift[None, :, :]
        t = np.einsum("bgp,gqp->bgq", x, cinv)
        yield (t * t).sum(axis=2)
        done += take
        unit += 1


def simulate_echi(
    kernel: CovKernel, prior: ZetaPrior, cfg: ExpAvgConfig, draws: int, seed
) -> LimitSamples:
    """Null limit law: exp-average of the Gaussian quadratic-form process."""
    idx = _match_grid(kernel, prior.points)
    out = np.empty(draws)
    pos = 0
    for quads in _simulate_quads(kernel, draws, seed):
        b = quads.shape[0]
        out[pos : pos + b] = expavg_rows(quads[:, idx], prior.weights, cfg)
        pos += b
    return LimitSamples(out, cfg.c, derive_seed(seed))


def simulate_supchi(kernel: CovKernel, prior: ZetaPrior, draws: int, seed) -> LimitSamples:
    """Sup limit law over the prior's grid points."""
    idx = _match_grid(kernel, prior.points)
    out = np.empty(draws)
    pos = 0
    for quads in _simulate_quads(kernel, draws, seed):
        b = quads.shape[0]
        out[pos : pos + b] = sup_rows(quads[:, idx])
        pos += b
    return LimitSamples(out, float("inf"), derive_seed(seed))


def simulate_fchi(
    kernel: CovKernel,
    prior: ZetaPrior,
    cfg: ExpAvgConfig,
    h_beta: np.ndarray,
    zeta1: float,
    draws: int,
    seed,
) -> LimitSamples:
    """Fixed-local-alternative limit: the null process plus the drift
    Sigma-block(zeta, zeta1) @ h_beta before the quadratic form.

    ``zeta1`` snaps to the nearest kernel grid point with a warning when
    it is not already on the grid.
    """
    G, p = kernel.size, kernel.p
    h_beta = np.asarray(h_beta, dtype=np.float64).reshape(p)
    j = int(np.argmin(np.abs(kernel.zetas - zeta1)))
    if abs(float(kernel.zetas[j]) - zeta1) > 1e-12:
        warnings.warn(
            f"zeta1={zeta1} snapped to nearest grid point {float(kernel.zetas[j])}"
        )
    drift = np.empty((G, p))
    for g in range(G):
        blk = kernel.Sigma[g * p : (g + 1) * p, j * p : (j + 1) * p]
        drift[g] = blk @ h_beta
    idx = _match_grid(kernel, prior.points)
    out = np.empty(draws)
    pos = 0
    for quads in _simulate_quads(kernel, draws, seed, drift=drift):
        b = quads.shape[0]
        out[pos : pos + b] = expavg_rows(quads[:, idx], prior.weights, cfg)
        pos += b
    return LimitSamples(out, cfg.c, derive_seed(seed))


def rchi_cdf(echi_samples: LimitSamples, t: float) -> float:
    """CDF of the random-local-alternative limit at t, estimated as the
    null-sample mean of 1{value <= t} * value."""
    vals = echi_samples.values
    if vals.size == 0:
        raise ValueError("no samples")
    return float(np.mean(np.where(vals <= t, vals, 0.0)))
