"""Gaussian change-point regression reference model.

``Y = mu + beta * 1{Z > zeta} + sigma * eps`` with scalar jump beta.
Everything is closed form (MLEs, efficient score, information kernel), so
this model serves as the analytic oracle for the limit-law and bootstrap
machinery.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .core import BoundFitter, FitReport, ModelInterface, as_weight_array
from .errors import EmptyDatasetError, MalformedRecordError, UnidentifiedDirectionError
from .rng import derive_rng

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussCPParams:
    mu: float
    beta: float
    sigma: float
    zeta: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.mu, self.beta, self.sigma, self.zeta)):
            raise ValueError("parameters must be finite")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError(f"zeta must lie in (0, 1), got {self.zeta}")


class GaussDataset:
    """Immutable container of (y, z) pairs with z in [0, 1]."""

    __slots__ = ("y", "z", "n")

    def __init__(self, y: np.ndarray, z: np.ndarray):
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.z = np.ascontiguousarray(z, dtype=np.float64)
        self.n = int(self.y.shape[0])
        self.y.setflags(write=False)
        self.z.setflags(write=False)

    def __len__(self) -> int:
        return self.n


def validate_gauss_dataset(raw) -> GaussDataset:
    rows = list(raw)
    if not rows:
        raise EmptyDatasetError("dataset is empty")
    y = np.empty(len(rows))
    z = np.empty(len(rows))
    for i, row in enumerate(rows):
        if len(row) != 2:
            raise MalformedRecordError(i, f"expected 2 fields, got {len(row)}")
        yi, zi = float(row[0]), float(row[1])
        if not (np.isfinite(yi) and np.isfinite(zi)):
            raise MalformedRecordError(i, "fields must be finite")
        if not 0.0 <= zi <= 1.0:
            raise MalformedRecordError(i, f"z must lie in [0, 1], got {zi}")
        y[i], z[i] = yi, zi
    return GaussDataset(y, z)


def load_gauss_csv(path_or_buf) -> GaussDataset:
    """Read the ``y,z`` CSV convention (header required, UTF-8)."""
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["y", "z"]:
        raise MalformedRecordError(0, f"expected header 'y,z', got {header!r}")
    return validate_gauss_dataset([tuple(r) for r in reader if r])


def write_gauss_csv(ds: GaussDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "z"])
        for yi, zi in zip(ds.y, ds.z):
            writer.writerow([repr(float(yi)), repr(float(zi))])


def g_simulate(n: int, params: GaussCPParams, seed=0) -> GaussDataset:
    """Z ~ Uniform(0,1); Y = mu + beta*1{Z > zeta} + sigma*N(0,1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed)
    z = rng.uniform(0.0, 1.0, n)
    y = params.mu + params.beta * (z > params.zeta) + params.sigma * rng.standard_normal(n)
    return GaussDataset(y, z)


@dataclass(frozen=True)
class GaussNullFit:
    mu_hat: float
    sigma_hat: float
    loglik: float

    @property
    def beta_hat(self) -> np.ndarray:
        return np.zeros(1)

    @property
    def report(self) -> FitReport:
        return FitReport(self.loglik, 0, True, 0.0)


@dataclass(frozen=True)
class GaussAltFit:
    mu_hat: float
    beta: float
    sigma_hat: float
    zeta: float
    loglik: float

    @property
    def beta_hat(self) -> np.ndarray:
        return np.array([self.beta])

    @property
    def report(self) -> FitReport:
        return FitReport(self.loglik, 0, True, 0.0)


def _gauss_loglik(n: float, sigma2: float) -> float:
    return -0.5 * n * (_LOG_2PI + math.log(sigma2) + 1.0)


def g_fits(data: GaussDataset, zeta: float, weights=None) -> tuple[GaussNullFit, GaussAltFit]:
    """Closed-form weighted MLEs under the null and at a fixed threshold.

    Maximum-likelihood variance denominators throughout, so the exact
    identity LR = n*log(sigma0^2/sigma1^2) holds.
    """
    w = as_weight_array(weights, data.n)
    n = float(w.sum())
    y, z = data.y, data.z
    mu0 = float(np.dot(w, y) / n)
    s20 = float(np.dot(w, (y - mu0) ** 2) / n)
    null = GaussNullFit(mu0, math.sqrt(s20), _gauss_loglik(n, s20))
    hi = z > zeta
    w_hi = float(np.dot(w, hi))
    w_lo = n - w_hi
    if w_hi <= 0 or w_lo <= 0:
        raise UnidentifiedDirectionError(zeta)
    m_hi = float(np.dot(w, y * hi) / w_hi)
    m_lo = float(np.dot(w, y * (~hi)) / w_lo)
    fitted = np.where(hi, m_hi, m_lo)
    s21 = float(np.dot(w, (y - fitted) ** 2) / n)
    alt = GaussAltFit(m_lo, m_hi - m_lo, math.sqrt(s21), float(zeta), _gauss_loglik(n, s21))
    return null, alt


def g_efficient_score(data: GaussDataset, zeta: float, mu_hat: float, sigma_hat: float) -> np.ndarray:
    """Efficient score for the jump at the null: (1{z>zeta} - (1-zeta)) (y-mu)/sigma^2."""
    if sigma_hat <= 0:
        raise ValueError("sigma_hat must be positive")
    centering = 1.0 - zeta
    return ((data.z > zeta) - centering) * (data.y - mu_hat) / sigma_hat**2


def g_info_kernel(zeta1: float, zeta2: float, sigma: float) -> float:
    """Covariance kernel of the efficient-score process; diagonal is
    zeta(1-zeta)/sigma^2."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not (0.0 < zeta1 < 1.0 and 0.0 < zeta2 < 1.0):
        raise ValueError("thresholds must lie in (0, 1)")
    hi = max(zeta1, zeta2)
    return ((1.0 - hi) - (1.0 - zeta1) * (1.0 - zeta2)) / sigma**2


class GaussCPModel(ModelInterface):
    """Model-contract wrapper with vectorized weighted refits over a grid."""

    def __init__(self, zeta_range: tuple[float, float] = (0.05, 0.95)):
        self._zeta_range = zeta_range

    def beta_dim(self) -> int:
        return 1

    def zeta_range(self) -> tuple[float, float]:
        return self._zeta_range

    def fit_null(self, ds, weights=None) -> GaussNullFit:
        w = as_weight_array(weights, ds.n)
        n = float(w.sum())
        mu0 = float(np.dot(w, ds.y) / n)
        s20 = float(np.dot(w, (ds.y - mu0) ** 2) / n)
        return GaussNullFit(mu0, math.sqrt(s20), _gauss_loglik(n, s20))

    def fit_alt(self, ds, zeta, weights=None) -> GaussAltFit:
        return g_fits(ds, zeta, weights)[1]

    def loglik(self, ds, fit, weights=None) -> float:
        w = as_weight_array(weights, ds.n)
        if isinstance(fit, GaussNullFit):
            fitted = np.full(ds.n, fit.mu_hat)
            sigma = fit.sigma_hat
        else:
            fitted = fit.mu_hat + fit.beta * (ds.z > fit.zeta)
            sigma = fit.sigma_hat
        resid = ds.y - fitted
        return float(-0.5 * np.dot(w, _LOG_2PI + 2 * math.log(sigma) + (resid / sigma) ** 2))

    def score_beta(self, ds, null_fit, zeta, weights=None):
        w = as_weight_array(weights, ds.n)
        per_obs = g_efficient_score(ds, zeta, null_fit.mu_hat, null_fit.sigma_hat)[:, None]
        mean = per_obs.T @ w / ds.n
        return mean, per_obs

    def bind(self, ds, zetas) -> "GaussBoundFitter":
        return GaussBoundFitter(ds, np.asarray(zetas, dtype=np.float64))


class GaussBoundFitter(BoundFitter):
    """Closed-form refits across the whole threshold grid in a few matmuls."""

    def __init__(self, ds: GaussDataset, zetas: np.ndarray):
        self.ds = ds
        self.zetas = zetas
        self._hi = ds.z[:, None] > zetas[None, :]  # (n, G)

    def fit_all(self, weights):
        w = as_weight_array(weights, self.ds.n)
        n = float(w.sum())
        wy = w * self.ds.y
        w_hi = w @ self._hi
        wy_hi = wy @ self._hi
        w_lo = n - w_hi
        wy_lo = float(wy.sum()) - wy_hi
        ok = (w_hi > 0) & (w_lo > 0)
        betas = np.full((self.zetas.shape[0], 1), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            betas[:, 0] = wy_hi / w_hi - wy_lo / w_lo
        betas[~ok] = np.nan
        return betas, ok

    def score_all(self, weights):
        w = as_weight_array(weights, self.ds.n)
        n = float(w.sum())
        mu = float(np.dot(w, self.ds.y) / n)
        s2 = float(np.dot(w, (self.ds.y - mu) ** 2) / n)
        resid = w * (self.ds.y - mu) / s2
        centered = self._hi - (1.0 - self.zetas)[None, :]
        means = (resid @ centered / n)[:, None]
        return means, np.ones(self.zetas.shape[0], dtype=bool)
