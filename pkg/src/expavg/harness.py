"""Configuration-driven Monte Carlo driver.

Reproduces the simulation-study table at configurable scale, runs single
datasets end to end, and emits limit-law critical-value tables. Replicate
and bootstrap seeds all derive from one root seed, so output is identical
for any worker count and reruns regenerate identical rows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from . import bootstrap as wboot
from . import cpcox, gausscp, limitlaw
from .core import ZetaPrior, load_dataset_csv, make_uniform_prior, point_prior
from .errors import (
    ConfigError,
    InsufficientDrawsError,
    SingularVarianceError,
    UnidentifiedDirectionError,
)
from .rng import derive_rng, derive_seed
from .stats import ExpAvgConfig, VarianceSource, exp_average, score_stat_curve, sup_stat

_MODELS = ("cpcox_cs", "gauss_cp")
_STAT_FORMS = ("bootstrap_wald", "score")


def _take(d: dict, key: str, path: str, required: bool = True, default=None):
    if key in d:
        return d.pop(key)
    if required:
        raise ConfigError("missing required field", f"{path}{key}")
    return default


def _no_leftovers(d: dict, path: str) -> None:
    if d:
        raise ConfigError(f"unknown field(s) {sorted(d)}", path.rstrip("."))


def _parse_c(value, path: str) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"c must be a number or 'infinity', got {value!r}", path)
    c = float(value)
    if c < 0:
        raise ConfigError(f"c must be nonnegative, got {c}", path)
    return c


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    G: int


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    n: int
    reps: int
    bootstraps: int
    grid: GridSpec
    c_list: tuple
    alpha_levels: tuple
    truth: dict | str
    alt_zeta: dict
    seed: int
    max_workers: int = 1
    naive_zetas: tuple = ()
    statistic_form: str = "bootstrap_wald"
    v_max: float = 5.0
    baseline_scale: float = 3.0
    fit_alpha: bool = True
    scenario: str = ""

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        d = dict(raw)
        model = _take(d, "model", "")
        if model not in _MODELS:
            raise ConfigError(f"model must be one of {_MODELS}, got {model!r}", "model")
        n = int(_take(d, "n", ""))
        reps = int(_take(d, "reps", ""))
        if reps < 1:
            raise ConfigError("reps must be >= 1", "reps")
        bootstraps = int(_take(d, "bootstraps", ""))
        if bootstraps < 2:
            raise ConfigError("bootstraps must be >= 2", "bootstraps")
        graw = _take(d, "grid", "")
        if not isinstance(graw, dict):
            raise ConfigError("grid must be an object {lo, hi, G}", "grid")
        graw = dict(graw)
        grid = GridSpec(
            float(_take(graw, "lo", "grid.")),
            float(_take(graw, "hi", "grid.")),
            int(_take(graw, "G", "grid.")),
        )
        _no_leftovers(graw, "grid.")
        if not grid.lo < grid.hi or grid.G < 1:
            raise ConfigError("grid needs lo < hi and G >= 1", "grid")
        c_list = tuple(
            _parse_c(c, f"c_list[{i}]") for i, c in enumerate(_take(d, "c_list", ""))
        )
        alphas = tuple(float(a) for a in _take(d, "alpha_levels", ""))
        if not alphas or not all(0.0 < a < 1.0 for a in alphas):
            raise ConfigError("alpha_levels must lie strictly in (0, 1)", "alpha_levels")
        truth = _take(d, "truth", "")
        if truth != "null" and not isinstance(truth, dict):
            raise ConfigError("truth must be 'null' or a parameter object", "truth")
        alt_zeta = _take(d, "alt_zeta", "")
        if not (
            isinstance(alt_zeta, dict)
            and len(alt_zeta) == 1
            and next(iter(alt_zeta)) in ("point", "uniform")
        ):
            raise ConfigError("alt_zeta must be {'point': z} or {'uniform': [lo, hi]}", "alt_zeta")
        seed = int(_take(d, "seed", ""))
        max_workers = int(_take(d, "max_workers", "", required=False, default=1))
        naive = tuple(float(z) for z in _take(d, "naive_zetas", "", required=False, default=()))
        form = _take(d, "statistic_form", "", required=False, default="bootstrap_wald")
        if form not in _STAT_FORMS:
            raise ConfigError(f"statistic_form must be one of {_STAT_FORMS}", "statistic_form")
        v_max = float(_take(d, "v_max", "", required=False, default=5.0))
        baseline_scale = float(_take(d, "baseline_scale", "", required=False, default=3.0))
        fit_alpha = bool(_take(d, "fit_alpha", "", required=False, default=True))
        scenario = str(_take(d, "scenario", "", required=False, default=""))
        _no_leftovers(d, "")
        return cls(
            model, n, reps, bootstraps, grid, c_list, alphas, truth, alt_zeta,
            seed, max_workers, naive, form, v_max, baseline_scale, fit_alpha, scenario,
        )

    def prior(self) -> ZetaPrior:
        return make_uniform_prior(self.grid.lo, self.grid.hi, self.grid.G)

    def scenario_id(self) -> str:
        if self.scenario:
            return self.scenario
        if self.truth == "null":
            return "null"
        kind, val = next(iter(self.alt_zeta.items()))
        return f"alt-{kind}-{val}"


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    statistic: str
    c: float | None
    alpha: float
    estimate: float
    mc_se: float
    reps: int
    model: str
    n: int
    bootstraps: int
    G: int
    seed: int


RESULT_COLUMNS = [
    "scenario", "statistic", "c", "alpha", "estimate", "mc_se", "reps",
    "model", "n", "bootstraps", "G", "seed",
]


def _fmt_c(c) -> str:
    if c is None:
        return ""
    if math.isinf(c):
        return "inf"
    return repr(float(c))


def write_rows_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.scenario, r.statistic, _fmt_c(r.c), repr(r.alpha), repr(r.estimate),
                 repr(r.mc_se), r.reps, r.model, r.n, r.bootstraps, r.G, r.seed]
            )


def _make_model(cfg: ExperimentConfig):
    if cfg.model == "cpcox_cs":
        return cpcox.CPCoxModel(fit_alpha=cfg.fit_alpha)
    return gausscp.GaussCPModel()


def _draw_zeta(cfg: ExperimentConfig, rep: int) -> float:
    kind, val = next(iter(cfg.alt_zeta.items()))
    if kind == "point":
        return float(val)
    lo, hi = float(val[0]), float(val[1])
    rng = derive_rng(cfg.seed, rep, 1)
    return float(rng.uniform(lo, hi))


def _simulate_replicate(cfg: ExperimentConfig, rep: int):
    seed = derive_seed(cfg.seed, rep, 0)
    if cfg.truth == "null":
        zeta = 0.5
    else:
        zeta = _draw_zeta(cfg, rep)
    if cfg.model == "cpcox_cs":
        if cfg.truth == "null":
            params = cpcox.CPParams(0.0, 0.0, 0.0, zeta)
        else:
            params = cpcox.CPParams(
                float(cfg.truth.get("beta1", 0.0)),
                float(cfg.truth.get("beta2", 0.0)),
                float(cfg.truth.get("alpha", 0.0)),
                zeta,
            )
        return cpcox.simulate(cfg.n, params, cfg.v_max, seed, cfg.baseline_scale)
    if cfg.truth == "null":
        params = gausscp.GaussCPParams(0.0, 0.0, 1.0, zeta)
    else:
        params = gausscp.GaussCPParams(
            float(cfg.truth.get("mu", 0.0)),
            float(cfg.truth.get("beta", 0.0)),
            float(cfg.truth.get("sigma", 1.0)),
            zeta,
        )
    return gausscp.g_simulate(cfg.n, params, seed)


def _eval_zetas(prior: ZetaPrior, naive_zetas) -> tuple[np.ndarray, dict]:
    """Evaluation grid = prior points plus naive thresholds not already on it."""
    pts = list(prior.points)
    naive_index = {}
    for z in naive_zetas:
        hits = [i for i, p in enumerate(pts) if abs(p - z) <= 1e-12]
        if hits:
            naive_index[z] = hits[0]
        else:
            naive_index[z] = len(pts)
            pts.append(float(z))
    return np.asarray(pts), naive_index


def _score_means_and_vars(model, ds, zetas, nf=None):
    """Per-threshold score means and outer-product variances at the null fit."""
    if nf is None:
        nf = model.fit_null(ds)
    means = []
    mats = []
    for z in zetas:
        mean, per_obs = model.score_beta(ds, nf, float(z))
        means.append(mean)
        mats.append(per_obs.T @ per_obs / ds.n)
    return np.asarray(means), VarianceSource("outer_product", np.asarray(mats))


def _observed_lr_wald_curves(cfg, model, ds, zetas):
    """Profile likelihood-ratio and Wald values over the evaluation grid.

    The Wald form standardizes the fitted jump by the efficient
    information estimated at the unrestricted fit; both are asymptotically
    equivalent to the standardized score but keep more of their
    noncentrality at distant alternatives.
    """
    nf = model.fit_null(ds)
    lr = np.full(len(zetas), np.nan)
    wald = np.full(len(zetas), np.nan)
    ok = np.zeros(len(zetas), dtype=bool)
    for g, z in enumerate(zetas):
        try:
            if cfg.model == "cpcox_cs":
                af = cpcox.fit_alt(
                    ds, float(z), cfg=model.cfg, null_fit=nf, fit_alpha=model.fit_alpha
                )
                if not af.report.converged:
                    continue
                lr[g] = max(0.0, -2.0 * (nf.report.loglik - af.report.loglik))
                info = cpcox.efficient_info_at(ds, af, model.fit_alpha)
                wald[g] = max(0.0, ds.n * float(af.beta_hat @ info @ af.beta_hat))
            else:
                af = model.fit_alt(ds, float(z))
                lr[g] = max(0.0, -2.0 * (nf.report.loglik - af.loglik))
                frac_hi = float((ds.z > z).mean())
                info = frac_hi * (1.0 - frac_hi) / af.sigma_hat**2
                wald[g] = ds.n * af.beta**2 * info
            ok[g] = True
        except UnidentifiedDirectionError:
            continue
    return lr, wald, ok, nf


def _statistic_keys(cfg: ExperimentConfig):
    keys = [("ER", c) for c in cfg.c_list]
    keys.append(("sup", None))
    keys.extend((f"naive@{z:g}", None) for z in cfg.naive_zetas)
    return keys


def run_replicate(cfg: ExperimentConfig, rep: int) -> dict:
    """One replicate: simulate, fit, bootstrap, and record rejections.

    Returns ``{(statistic, c, alpha): bool}``. The score form bootstraps
    the score process (no unrestricted refits); the Wald form bootstraps
    the refitted jump estimates.
    """
    ds = _simulate_replicate(cfg, rep)
    model = _make_model(cfg)
    prior = cfg.prior()
    zetas, naive_index = _eval_zetas(prior, cfg.naive_zetas)
    fitter = model.bind(ds, zetas)
    p = model.beta_dim()

    lr_vals = wald_vals = lr_ok = score_curve = None
    betas_obs = ok_obs = None
    boot_seed = derive_seed(cfg.seed, rep, 2)
    if cfg.statistic_form == "score":
        lr_vals, wald_vals, lr_ok, nf = _observed_lr_wald_curves(cfg, model, ds, zetas)
        score_means, score_vars = _score_means_and_vars(model, ds, zetas, nf)
        score_curve = score_stat_curve(score_means, score_vars, ds.n).values
        draws = wboot.score_bootstrap_curves(
            ds, model, prior, cfg.bootstraps, boot_seed,
            extra_zetas=zetas[prior.size :], fitter=fitter,
        )
    else:
        betas_obs, ok_obs = fitter.fit_all(None)
        draws = wboot.bootstrap_curves(
            ds, model, prior, cfg.bootstraps, boot_seed,
            extra_zetas=zetas[prior.size :], fitter=fitter,
        )
    mu, V = wboot.summarize(draws)

    out = {}
    for stat, c in _statistic_keys(cfg):
        if stat == "sup":
            functional, stat_prior, acfg = "sup", prior, ExpAvgConfig(1.0, p)
        elif stat.startswith("naive@"):
            z0 = float(stat.split("@", 1)[1])
            functional, stat_prior = "expavg", point_prior(zetas[naive_index[z0]])
            acfg = ExpAvgConfig(1.0, p)
        else:
            functional, stat_prior, acfg = "expavg", prior, ExpAvgConfig(c, p)
        try:
            T = wboot.standardized_T(draws, mu, V, stat_prior, acfg, functional)
            if cfg.statistic_form == "score":
                # exp-average statistics ride the likelihood-ratio curve
                # (asymptotically the same statistic, but it keeps its
                # noncentrality at distant alternatives); sup and naive
                # tests use the pointwise standardized score, the local
                # form they are named after
                if stat.startswith("ER"):
                    obs = _observed_curve_form(lr_vals, lr_ok, stat_prior, acfg, functional, zetas)
                else:
                    obs = _observed_curve_form(
                        score_curve, np.isfinite(score_curve), stat_prior, acfg, functional, zetas
                    )
            else:
                obs = wboot.observed_T(
                    betas_obs, ok_obs, mu, V, stat_prior, acfg, zetas, functional
                )
        except (InsufficientDrawsError, SingularVarianceError, ValueError):
            # no usable reference distribution for this statistic on this
            # replicate (e.g. a dead naive threshold): cannot reject
            for alpha in cfg.alpha_levels:
                out[(stat, c, alpha)] = False
            continue
        for alpha in cfg.alpha_levels:
            out[(stat, c, alpha)] = bool(obs > wboot.critical_value(T, alpha))
    return out


def _observed_curve_form(vals, ok, stat_prior, acfg, functional, zetas):
    """Apply the exp-average or sup functional to an observed statistic
    curve over the evaluation grid, skipping unusable thresholds."""
    from .stats import expavg_rows, sup_rows

    idx = wboot._match_prior(stat_prior, zetas)
    quads = np.where(ok[idx], vals[idx], np.nan)[None, :]
    if functional == "sup":
        return float(sup_rows(quads)[0])
    return float(expavg_rows(quads, stat_prior.weights, acfg)[0])


def run_table1(cfg: ExperimentConfig) -> list[ResultRow]:
    """Monte Carlo rejection frequencies for every configured statistic."""
    results = Parallel(n_jobs=cfg.max_workers, backend="loky")(
        delayed(run_replicate)(cfg, rep) for rep in range(cfg.reps)
    )
    rows = []
    scenario = cfg.scenario_id()
    for stat, c in _statistic_keys(cfg):
        for alpha in cfg.alpha_levels:
            hits = [res[(stat, c, alpha)] for res in results]
            est = float(np.mean(hits))
            mc_se = math.sqrt(est * (1.0 - est) / cfg.reps)
            rows.append(
                ResultRow(
                    scenario, stat, c, alpha, est, mc_se, cfg.reps,
                    cfg.model, cfg.n, cfg.bootstraps, cfg.grid.G, cfg.seed,
                )
            )
    return rows


def run_single_test(dataset_path, cfg: ExperimentConfig) -> dict:
    """Full analysis of one dataset: curves, statistics, critical values,
    p-values, and convergence diagnostics (JSON-ready, no timestamps)."""
    if cfg.model == "cpcox_cs":
        ds = load_dataset_csv(dataset_path)
    else:
        ds = gausscp.load_gauss_csv(dataset_path)
    model = _make_model(cfg)
    prior = cfg.prior()
    zetas, naive_index = _eval_zetas(prior, cfg.naive_zetas)
    p = model.beta_dim()

    lr_curve, wald_curve, ok_obs, nf = _observed_lr_wald_curves(cfg, model, ds, zetas)
    alt_fits = []
    for z in zetas:
        if cfg.model == "cpcox_cs":
            alt_fits.append(
                cpcox.fit_alt(ds, float(z), cfg=model.cfg, null_fit=nf, fit_alpha=model.fit_alpha)
            )
        else:
            alt_fits.append(model.fit_alt(ds, float(z)))
    betas_obs = np.asarray([f.beta_hat for f in alt_fits])

    fitter = model.bind(ds, zetas)
    score_means, score_vars = _score_means_and_vars(model, ds, zetas, nf)
    boot_seed = derive_seed(cfg.seed, 0, 2)
    if cfg.statistic_form == "score":
        draws = wboot.score_bootstrap_curves(
            ds, model, prior, cfg.bootstraps, boot_seed,
            extra_zetas=zetas[prior.size :], fitter=fitter,
        )
        obs_points, obs_ok = score_means, np.ones(len(zetas), dtype=bool)
    else:
        fitter.fit_all(None)
        draws = wboot.bootstrap_curves(
            ds, model, prior, cfg.bootstraps, boot_seed,
            extra_zetas=zetas[prior.size :], fitter=fitter,
        )
        obs_points, obs_ok = betas_obs, ok_obs
    mu, V = wboot.summarize(draws)

    quad_curve = wboot._quad_rows(obs_points[None], obs_ok[None], None, V)[0]
    score_curve = score_stat_curve(score_means, score_vars, ds.n)

    statistics = {}
    for stat, c in _statistic_keys(cfg):
        if stat == "sup":
            functional, stat_prior, acfg = "sup", prior, ExpAvgConfig(1.0, p)
        elif stat.startswith("naive@"):
            z0 = float(stat.split("@", 1)[1])
            functional, stat_prior = "expavg", point_prior(zetas[naive_index[z0]])
            acfg = ExpAvgConfig(1.0, p)
        else:
            functional, stat_prior, acfg = "expavg", prior, ExpAvgConfig(c, p)
        T = wboot.standardized_T(draws, mu, V, stat_prior, acfg, functional)
        if cfg.statistic_form == "score":
            if stat.startswith("ER"):
                obs = _observed_curve_form(lr_curve, ok_obs, stat_prior, acfg, functional, zetas)
            else:
                sc = score_curve.values
                obs = _observed_curve_form(sc, np.isfinite(sc), stat_prior, acfg, functional, zetas)
        else:
            obs = wboot.observed_T(obs_points, obs_ok, mu, V, stat_prior, acfg, zetas, functional)
        statistics[f"{stat}" + (f",c={_fmt_c(c)}" if c is not None else "")] = {
            "observed": float(obs),
            "critical_values": {repr(a): wboot.critical_value(T, a) for a in cfg.alpha_levels},
            "p_value": wboot.p_value(obs, T),
        }

    report = {
        "model": cfg.model,
        "n": ds.n,
        "seed": cfg.seed,
        "statistic_form": cfg.statistic_form,
        "zetas": zetas.tolist(),
        "curves": {
            "boot_standardized": [
                float(q) if o and np.isfinite(q) else None
                for q, o in zip(quad_curve, obs_ok)
            ],
            "score": score_curve.values.tolist(),
            "lr": [float(v) if np.isfinite(v) else None for v in lr_curve],
            "wald": [float(v) if np.isfinite(v) else None for v in wald_curve],
        },
        "null_fit": nf.to_dict() if hasattr(nf, "to_dict") else {
            "mu_hat": nf.mu_hat, "sigma_hat": nf.sigma_hat, "loglik": nf.loglik,
        },
        "alt_converged": ok_obs.tolist(),
        "alt_iterations": [int(f.report.iterations) for f in alt_fits],
        "bootstrap": {
            "draws": cfg.bootstraps,
            "failed": draws.n_failed,
            "mu": mu.tolist(),
            "V": V.tolist(),
        },
        "statistics": statistics,
    }
    return report


# ---------------------------------------------------------------------------
# limit-law critical-value tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitConfig:
    source: dict
    grid: GridSpec
    c_list: tuple
    alpha_levels: tuple
    draws: int
    seed: int
    statistics: tuple = ("echi", "supchi")

    @classmethod
    def from_dict(cls, raw: dict) -> "LimitConfig":
        d = dict(raw)
        source = _take(d, "source", "")
        if not isinstance(source, dict) or source.get("type") not in ("gauss", "scores"):
            raise ConfigError("source must be {'type': 'gauss'|'scores', ...}", "source")
        graw = dict(_take(d, "grid", ""))
        grid = GridSpec(
            float(_take(graw, "lo", "grid.")),
            float(_take(graw, "hi", "grid.")),
            int(_take(graw, "G", "grid.")),
        )
        _no_leftovers(graw, "grid.")
        c_list = tuple(_parse_c(c, f"c_list[{i}]") for i, c in enumerate(_take(d, "c_list", "")))
        alphas = tuple(float(a) for a in _take(d, "alpha_levels", ""))
        if not all(0.0 < a < 1.0 for a in alphas):
            raise ConfigError("alpha_levels must lie strictly in (0, 1)", "alpha_levels")
        draws = int(_take(d, "draws", ""))
        seed = int(_take(d, "seed", ""))
        stats = tuple(_take(d, "statistics", "", required=False, default=("echi", "supchi")))
        for s in stats:
            if s not in ("echi", "supchi"):
                raise ConfigError(f"unknown statistic {s!r}", "statistics")
        _no_leftovers(d, "")
        return cls(source, grid, c_list, alphas, draws, seed, stats)


def load_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Long-format efficient-score file: columns zeta,s1[,s2,...].

    Rows are grouped by threshold in order of first appearance, one row
    per observation; every threshold must have the same count.
    """
    groups: dict[float, list] = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "zeta":
            raise ConfigError(f"expected header starting with 'zeta', got {header!r}", str(path))
        for row in reader:
            if not row:
                continue
            groups.setdefault(float(row[0]), []).append([float(x) for x in row[1:]])
    if not groups:
        raise ConfigError("scores file is empty", str(path))
    counts = {len(v) for v in groups.values()}
    if len(counts) != 1:
        raise ConfigError("every threshold must have the same number of score rows", str(path))
    zetas = np.asarray(list(groups.keys()))
    scores = np.asarray([groups[z] for z in groups])
    return zetas, scores


def run_limit_table(cfg: LimitConfig) -> list[dict]:
    """Critical-value rows: statistic, c, alpha, critical_value, draws, seed."""
    if cfg.source["type"] == "gauss":
        grid_pts = make_uniform_prior(cfg.grid.lo, cfg.grid.hi, cfg.grid.G).points
        kernel = limitlaw.gauss_reference_kernel(grid_pts, float(cfg.source.get("sigma", 1.0)))
    else:
        zetas, scores = load_scores_csv(cfg.source["path"])
        kernel = limitlaw.kernel_from_scores(zetas, scores)
    prior = ZetaPrior(kernel.zetas, np.full(kernel.size, 1.0 / kernel.size))
    rows = []
    for stat in cfg.statistics:
        if stat == "echi":
            for c in cfg.c_list:
                samples = limitlaw.simulate_echi(
                    kernel, prior, ExpAvgConfig(c, kernel.p), cfg.draws, cfg.seed
                )
                for alpha in cfg.alpha_levels:
                    rows.append(
                        {"statistic": "echi", "c": _fmt_c(c), "alpha": alpha,
                         "critical_value": wboot.critical_value(samples.values, alpha),
                         "draws": cfg.draws, "seed": cfg.seed}
                    )
        else:
            samples = limitlaw.simulate_supchi(kernel, prior, cfg.draws, cfg.seed)
            for alpha in cfg.alpha_levels:
                rows.append(
                    {"statistic": "supchi", "c": "", "alpha": alpha,
                     "critical_value": wboot.critical_value(samples.values, alpha),
                     "draws": cfg.draws, "seed": cfg.seed}
                )
    return rows


def write_limit_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["statistic", "c", "alpha", "critical_value", "draws", "seed"])
        for r in rows:
            writer.writerow(
                [r["statistic"], r["c"], repr(r["alpha"]), repr(r["critical_value"]),
                 r["draws"], r["seed"]]
            )


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
