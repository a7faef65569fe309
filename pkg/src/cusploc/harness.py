"""Experiment orchestration: configs, Monte Carlo loops, statistics, files.

A run walks the eps grid from the largest value down, simulating paths and
estimators replicate by replicate with streams derived injectively from
(master_seed, purpose, eps_index, replicate).  Per-eps results are flushed
to CSV as soon as they complete, so an interrupted run resumes from the
last finished eps and reproduces the uninterrupted output byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigError, DomainError, GridTooSmallError
from .estimators import Prior, bayes, make_prior, mde_batch, mle
from .likelihood import limit_constants
from .limit_law import limit_variables_batch
from .model import (
    CuspModel,
    Path,
    _ode_values_matrix,
    validate_model,
    wiener_values,
)
from .rng import (
    NoiseStream,
    PURPOSE_LIMIT_LAW,
    PURPOSE_WIENER,
    pack_stream_index,
)

logger = logging.getLogger(__name__)

ESTIMATOR_ORDER = ("mle", "bayes", "mde")
MAX_STEPS = 10 ** 6
FAILURE_BUDGET = 0.01
PURPOSE_HOLDER = 5
PURPOSE_UNIFORMITY = 6

KS_THRESHOLD = 0.08
KS_RATIONALE = (
    "threshold 0.08 is looser than the classical same-law 95% band "
    "1.358*sqrt(1/n+1/m) to absorb time-discretization and finite-eps bias"
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    model: CuspModel
    theta0: float
    eps_list: tuple
    n_replicates: int
    prior: Prior
    dt_rule: object = "eps2"  # "eps2" or an explicit step count
    estimators: tuple = ESTIMATOR_ORDER
    limit_U: float = 15.0
    limit_n_per_side: int = 600
    limit_n_samples: int = 10_000
    master_seed: int = 20_240_101
    out_dir: str = "out"
    n_workers: int = 1
    property_replicates: int = 1000
    holder_replicates: int = 2000
    zmoment_replicates: int = 2000
    run_properties: bool = True
    render_figures: bool = True
    uniformity_theta0: tuple = ()
    uniformity_replicates: int = 200
    dense_theta_check: bool = False
    chunk_replicates: Optional[int] = None  # None: sized from the memory budget

    def __post_init__(self):
        if not self.model.theta_lo < self.theta0 < self.model.theta_hi:
            raise ConfigError("theta0 must lie strictly inside Theta")
        eps = tuple(float(e) for e in self.eps_list)
        if not eps or any(e <= 0 for e in eps):
            raise ConfigError("eps_list must contain positive values")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be strictly decreasing")
        object.__setattr__(self, "eps_list", eps)
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be >= 1")
        ests = tuple(self.estimators)
        if not ests or any(e not in ESTIMATOR_ORDER for e in ests):
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATOR_ORDER}")
        object.__setattr__(self, "estimators", tuple(e for e in ESTIMATOR_ORDER if e in ests))
        if not (isinstance(self.dt_rule, int) or self.dt_rule == "eps2"):
            raise ConfigError('dt_rule must be "eps2" or an integer step count')
        for th in self.uniformity_theta0:
            if not self.model.theta_lo < th < self.model.theta_hi:
                raise ConfigError(f"uniformity theta0 {th} outside Theta")
        if self.n_workers < 1:
            raise ConfigError("n_workers must be >= 1")

    def n_steps(self, eps: float) -> int:
        if isinstance(self.dt_rule, int):
            return self.dt_rule
        # dt <= eps^2, floored at dt = T / 1e6
        return min(int(math.ceil(self.model.T / eps ** 2)), MAX_STEPS)

    def fingerprint_dict(self) -> dict:
        """Everything that affects the numbers (not placement or rendering)."""
        return {
            "model": self.model.to_dict(),
            "theta0": self.theta0,
            "eps_list": list(self.eps_list),
            "n_replicates": self.n_replicates,
            "dt_rule": self.dt_rule,
            "estimators": list(self.estimators),
            "prior": {"name": self.prior.name, "params": list(self.prior.params)},
            "limit": {
                "U": self.limit_U,
                "n_per_side": self.limit_n_per_side,
                "n_samples": self.limit_n_samples,
            },
            "master_seed": self.master_seed,
            "property_replicates": self.property_replicates,
            "holder_replicates": self.holder_replicates,
            "zmoment_replicates": self.zmoment_replicates,
            "uniformity_theta0": list(self.uniformity_theta0),
            "uniformity_replicates": self.uniformity_replicates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            model = CuspModel.from_dict(d["model"])
            prior_spec = d.get("prior", {"name": "uniform"})
            prior = make_prior(
                prior_spec["name"], model.theta_lo, model.theta_hi,
                *prior_spec.get("params", []),
            )
            limit = d.get("limit", {})
            kwargs = {}
            for key in (
                "n_workers", "property_replicates", "holder_replicates",
                "zmoment_replicates", "run_properties", "render_figures",
                "uniformity_replicates", "dense_theta_check", "master_seed",
                "out_dir",
            ):
                if key in d:
                    kwargs[key] = d[key]
            return cls(
                model=model,
                theta0=float(d["theta0"]),
                eps_list=tuple(d["eps_list"]),
                n_replicates=int(d["n_replicates"]),
                prior=prior,
                dt_rule=d.get("dt_rule", "eps2"),
                estimators=tuple(d.get("estimators", ESTIMATOR_ORDER)),
                limit_U=float(limit.get("U", 15.0)),
                limit_n_per_side=int(limit.get("n_per_side", 600)),
                limit_n_samples=int(limit.get("n_samples", 10_000)),
                uniformity_theta0=tuple(d.get("uniformity_theta0", ())),
                **kwargs,
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key: {exc}") from exc

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            data = yaml.safe_load(f)
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Plain statistics
# ---------------------------------------------------------------------------


def ks_distance(sample_a, sample_b) -> float:
    """Exact two-sample Kolmogorov-Smirnov statistic by sorted merge."""
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ConfigError("ks_distance needs non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass
class RateFit:
    slope: float
    intercept: float
    slope_se: float
    n_points: int


def rate_regression(pairs: Sequence[tuple]) -> RateFit:
    """Least squares of ln(rmse) on ln(eps); the slope is the rate exponent."""
    if len(pairs) < 3:
        raise DomainError("rate_regression needs at least 3 (eps, rmse) pairs")
    eps = np.array([p[0] for p in pairs], dtype=float)
    rmse = np.array([p[1] for p in pairs], dtype=float)
    if np.any(eps <= 0) or np.any(rmse <= 0):
        raise DomainError("rate_regression needs positive eps and rmse")
    x, y = np.log(eps), np.log(rmse)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    dof = len(pairs) - 2
    sigma_sq = float(np.sum(resid ** 2) / dof) if dof > 0 else 0.0
    return RateFit(slope=slope, intercept=intercept,
                   slope_se=float(np.sqrt(sigma_sq / sxx)), n_points=len(pairs))


def risk_table(norm_errors: dict, limit_targets: dict) -> list:
    """Normalized risks eps^(-2/H) E(theta_hat - theta0)^2 per (eps, estimator).

    The normalized error already carries the eps^(-1/H) factor, so the risk
    is just the mean squared normalized error.  Rows carry MC standard
    errors; the Bayes row is flagged when it exceeds the MLE row by more
    than twice the combined standard error (which would contradict the
    asymptotic-efficiency ordering).
    """
    rows = []
    order = {est: i for i, est in enumerate(ESTIMATOR_ORDER)}
    for (eps, est), errs in sorted(norm_errors.items(),
                                   key=lambda kv: (-kv[0][0], order[kv[0][1]])):
        sq = np.asarray(errs) ** 2
        risk = float(sq.mean())
        se = float(sq.std(ddof=1) / math.sqrt(len(sq))) if len(sq) > 1 else 0.0
        rows.append({
            "eps": eps, "estimator": est, "n": len(sq),
            "risk": risk, "risk_se": se,
            "limit_target": limit_targets.get(est),
        })
    by_eps = {}
    for row in rows:
        by_eps.setdefault(row["eps"], {})[row["estimator"]] = row
    for eps, ests in by_eps.items():
        if "mle" in ests and "bayes" in ests:
            m, b = ests["mle"], ests["bayes"]
            combined = math.hypot(m["risk_se"], b["risk_se"])
            b["exceeds_mle"] = bool(b["risk"] - m["risk"] > 2.0 * combined)
    return rows


# ---------------------------------------------------------------------------
# Simulation plumbing
# ---------------------------------------------------------------------------


def _simulate_rows(config: ExperimentConfig, eps: float, eps_index: int,
                   replicates: range, purpose: int = PURPOSE_WIENER) -> tuple:
    """Observation paths for a replicate range, one row per replicate.

    Also returns sup_t |W_t| of each driving Wiener path (the deviation-bound
    check needs it).  Row i depends only on its own stream, so results are
    identical however the replicates are chunked.
    """
    from .model import _em_values

    n = config.n_steps(eps)
    dt = config.model.T / n
    dW = np.empty((len(replicates), n))
    sup_w = np.empty(len(replicates))
    seeds = []
    for i, r in enumerate(replicates):
        idx = pack_stream_index(purpose, eps_index, r)
        seeds.append(idx)
        w = wiener_values(NoiseStream(config.master_seed, idx), n, config.model.T)
        sup_w[i] = np.max(np.abs(w))
        dW[i] = np.diff(w)
    # one time loop for the whole chunk; rows are elementwise-independent so
    # the results match per-replicate simulation bit for bit
    X = _em_values(config.model, config.theta0, eps, dW, dt)
    return X, dt, seeds, sup_w


_LEVEL0_ODE_CACHE: dict = {}


def _level0_ode_paths(model: CuspModel, n_steps: int) -> np.ndarray:
    from .estimators import LEVEL0_POINTS
    key = (json.dumps(model.to_dict(), sort_keys=True), n_steps)
    if key not in _LEVEL0_ODE_CACHE:
        grid = np.linspace(model.theta_lo, model.theta_hi, LEVEL0_POINTS)
        _LEVEL0_ODE_CACHE.clear()  # keep at most one (they are ~50 MB)
        _LEVEL0_ODE_CACHE[key] = _ode_values_matrix(model, grid, n_steps)
    return _LEVEL0_ODE_CACHE[key]


def _estimate_chunk(config: ExperimentConfig, eps_index: int, lo: int, hi: int) -> tuple:
    """Rows and failures for replicates [lo, hi) at one eps level."""
    eps = config.eps_list[eps_index]
    replicates = range(lo, hi)
    X, dt, seeds, _sup_w = _simulate_rows(config, eps, eps_index, replicates)
    n = X.shape[1] - 1
    times = np.linspace(0.0, config.model.T, n + 1)
    rate = eps ** (1.0 / config.model.H)
    rows, failures = [], []

    per_rep: dict = {r: {} for r in replicates}
    if "mde" in config.estimators:
        try:
            P0 = _level0_ode_paths(config.model, n)
            thetas, ties, _levels = mde_batch(X, config.model, dt, eps=eps, level0_paths=P0)
            for i, r in enumerate(replicates):
                per_rep[r]["mde"] = (float(thetas[i]), bool(ties[i]))
        except Exception as exc:  # noqa: BLE001 - failure budget accounting
            for r in replicates:
                failures.append({"replicate": r, "estimator": "mde",
                                 "eps": eps, "seed": seeds[r - lo], "error": str(exc)})

    for i, r in enumerate(replicates):
        path = Path(times, X[i], "observation")
        for est in config.estimators:
            if est == "mde":
                continue
            try:
                if est == "mle":
                    res = mle(path, config.model, eps)
                else:
                    res = bayes(path, config.model, eps, config.prior)
                per_rep[r][est] = (res.theta_hat, bool(res.diagnostics.get("multiplicity", False)))
            except Exception as exc:  # noqa: BLE001
                failures.append({"replicate": r, "estimator": est,
                                 "eps": eps, "seed": seeds[i], "error": str(exc)})

    for i, r in enumerate(replicates):
        for est in config.estimators:
            if est not in per_rep[r]:
                continue
            theta_hat, mult = per_rep[r][est]
            rows.append({
                "replicate": r,
                "estimator": est,
                "theta_hat": theta_hat,
                "normalized_error": (theta_hat - config.theta0) / rate,
                "multiplicity": int(mult),
                "eps": eps,
                "kappa": config.model.kappa,
                "seed": seeds[i],
            })
    return rows, failures


def _chunk_bounds(n_replicates: int, n_steps: int, chunk: Optional[int] = None) -> list:
    if chunk is None:
        chunk = max(1, min(250, 8_000_000 // (n_steps + 1)))
    return [(lo, min(lo + chunk, n_replicates)) for lo in range(0, n_replicates, chunk)]


ESTIMATE_FIELDS = ["replicate", "estimator", "theta_hat", "normalized_error",
                   "multiplicity", "eps", "kappa", "seed"]


def _write_estimates_csv(path, rows) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        f.write(",".join(ESTIMATE_FIELDS) + "\n")
        for row in rows:
            f.write(
                f'{row["replicate"]},{row["estimator"]},{row["theta_hat"]:.17g},'
                f'{row["normalized_error"]:.17g},{row["multiplicity"]},'
                f'{row["eps"]:.17g},{row["kappa"]:.17g},{row["seed"]}\n'
            )
    os.replace(tmp, path)


def _read_estimates_csv(path) -> list:
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != ESTIMATE_FIELDS:
            raise ConfigError(f"unexpected estimates header in {path}")
        for line in f:
            parts = line.strip().split(",")
            rows.append({
                "replicate": int(parts[0]),
                "estimator": parts[1],
                "theta_hat": float(parts[2]),
                "normalized_error": float(parts[3]),
                "multiplicity": int(parts[4]),
                "eps": float(parts[5]),
                "kappa": float(parts[6]),
                "seed": int(parts[7]),
            })
    return rows


def run_eps_level(config: ExperimentConfig, eps_index: int) -> tuple:
    """All replicates of one eps level, chunked and optionally parallel."""
    eps = config.eps_list[eps_index]
    n = config.n_steps(eps)
    bounds = _chunk_bounds(config.n_replicates, n, config.chunk_replicates)
    rows, failures = [], []
    if "mde" in config.estimators:
        _level0_ode_paths(config.model, n)  # warm before forking workers
    if config.n_workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=config.n_workers) as pool:
            futs = [pool.submit(_estimate_chunk, config, eps_index, lo, hi)
                    for lo, hi in bounds]
            for fut in futs:
                r, fl = fut.result()
                rows.extend(r)
                failures.extend(fl)
    else:
        for lo, hi in bounds:
            r, fl = _estimate_chunk(config, eps_index, lo, hi)
            rows.extend(r)
            failures.extend(fl)
    per_est_failures: dict = {}
    for fl in failures:
        per_est_failures[fl["estimator"]] = per_est_failures.get(fl["estimator"], 0) + 1
    for est, k in per_est_failures.items():
        if k > FAILURE_BUDGET * config.n_replicates:
            raise RuntimeError(
                f"failure budget exceeded at eps={eps} for {est}: "
                f"{k}/{config.n_replicates} replicates failed"
            )
    return rows, failures


# ---------------------------------------------------------------------------
# Limit-law samples
# ---------------------------------------------------------------------------

LIMIT_FIELDS = ["sample", "u_hat", "u_tilde", "edge_mass", "flag"]


def _write_limit_csv(path, variables) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        f.write(",".join(LIMIT_FIELDS) + "\n")
        for i, v in enumerate(variables):
            f.write(f"{i},{v.u_hat:.17g},{v.u_tilde:.17g},"
                    f"{v.edge_mass:.17g},{int(v.truncation_suspect)}\n")
    os.replace(tmp, path)


def _read_limit_csv(path) -> tuple:
    u_hat, u_tilde, suspect = [], [], []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != LIMIT_FIELDS:
            raise ConfigError(f"unexpected limit-sample header in {path}")
        for line in f:
            parts = line.strip().split(",")
            u_hat.append(float(parts[1]))
            u_tilde.append(float(parts[2]))
            suspect.append(int(parts[4]))
    return np.array(u_hat), np.array(u_tilde), np.array(suspect)


def compute_limit_samples(config: ExperimentConfig, out_dir=None) -> dict:
    """Standardized limit-law samples, moments and golden file.

    Returns a dict with raw and standardized sample arrays, the moment
    estimates, and report metadata.  When ``out_dir`` is given the sample
    CSV and the golden moment JSON are written there.
    """
    model = config.model
    constants = limit_constants(model, config.theta0)
    streams = [
        NoiseStream(config.master_seed, pack_stream_index(PURPOSE_LIMIT_LAW, 0, i))
        for i in range(config.limit_n_samples)
    ]
    variables = limit_variables_batch(model.H, config.limit_U,
                                      config.limit_n_per_side, streams)
    u_hat = np.array([v.u_hat for v in variables])
    u_tilde = np.array([v.u_tilde for v in variables])
    n_suspect = int(sum(v.truncation_suspect for v in variables))
    if n_suspect > 0.05 * config.limit_n_samples:
        raise GridTooSmallError(
            f"{n_suspect}/{config.limit_n_samples} limit samples are "
            f"truncation-suspect; increase limit.U"
        )
    gamma = constants.gamma
    hat_std = u_hat / gamma
    tilde_std = u_tilde / gamma
    n = len(u_hat)
    hat_sq = hat_std ** 2
    tilde_sq = tilde_std ** 2
    paired = tilde_sq - hat_sq
    targets = {
        "u_hat_sq": float(hat_sq.mean()),
        "u_hat_sq_se": float(hat_sq.std(ddof=1) / math.sqrt(n)),
        "u_tilde_sq": float(tilde_sq.mean()),
        "u_tilde_sq_se": float(tilde_sq.std(ddof=1) / math.sqrt(n)),
        "paired_tilde_minus_hat": float(paired.mean()),
        "paired_se": float(paired.std(ddof=1) / math.sqrt(n)),
    }
    meta = {
        "H": model.H,
        "U": config.limit_U,
        "n_per_side": config.limit_n_per_side,
        "n_samples": config.limit_n_samples,
        "gamma_sq": constants.gamma_sq,
        "gamma": constants.gamma,
        "n_suspect": n_suspect,
        "u_hat_sq": float(np.mean(u_hat ** 2)),
        "u_tilde_sq": float(np.mean(u_tilde ** 2)),
        "u_hat_std_sq": targets["u_hat_sq"],
        "u_hat_std_sq_se": targets["u_hat_sq_se"],
        "u_tilde_std_sq": targets["u_tilde_sq"],
        "u_tilde_std_sq_se": targets["u_tilde_sq_se"],
    }
    samples = {
        "u_hat": u_hat, "u_tilde": u_tilde,
        "u_hat_std": hat_std, "u_tilde_std": tilde_std,
        "targets": targets, "meta": meta, "variables": variables,
    }
    if out_dir is not None:
        _write_limit_csv(os.path.join(out_dir, "limit_samples.csv"), variables)
        golden = {
            "H": model.H, "U": config.limit_U, "n": config.limit_n_samples,
            "p": 2.0,
            "u_hat_moment": float(np.mean(np.abs(u_hat) ** 2)),
            "u_hat_se": float(np.std(np.abs(u_hat) ** 2, ddof=1) / math.sqrt(n)),
            "u_tilde_moment": float(np.mean(np.abs(u_tilde) ** 2)),
            "u_tilde_se": float(np.std(np.abs(u_tilde) ** 2, ddof=1) / math.sqrt(n)),
            "n_suspect": n_suspect,
        }
        tmp = os.path.join(out_dir, "limit_moments.json.tmp")
        with open(tmp, "w") as f:
            json.dump(golden, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, os.path.join(out_dir, "limit_moments.json"))
    return samples


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _config_sidecar_path(out_dir):
    return os.path.join(out_dir, "config_resolved.json")


def _check_or_write_fingerprint(config: ExperimentConfig) -> None:
    path = _config_sidecar_path(config.out_dir)
    fp = config.fingerprint_dict()
    if os.path.exists(path):
        with open(path) as f:
            existing = json.load(f)
        if existing != json.loads(json.dumps(fp)):
            raise ConfigError(
                f"output directory {config.out_dir} holds results for a different "
                "config; refusing to mix (delete the directory or change out_dir)"
            )
    else:
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(fp, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)


def _eps_paths(config: ExperimentConfig, eps_index: int) -> tuple:
    base = os.path.join(
        config.out_dir, f"estimates_eps{eps_index:02d}_{config.eps_list[eps_index]:g}"
    )
    return base + ".csv", base + "_accounting.json"


def _uniformity_sweep(config: ExperimentConfig, limit_samples: dict) -> dict:
    """KS of normalized MLE errors vs standardized u_hat at extra theta0 values."""
    out: dict = {}
    eps = config.eps_list[-1]
    n = config.n_steps(eps)
    dt = config.model.T / n
    times = np.linspace(0.0, config.model.T, n + 1)
    rate = eps ** (1.0 / config.model.H)
    for t_idx, th0 in enumerate(config.uniformity_theta0):
        from .model import _em_values
        errs = np.empty(config.uniformity_replicates)
        for r in range(config.uniformity_replicates):
            idx = pack_stream_index(PURPOSE_UNIFORMITY, t_idx, r)
            w = wiener_values(NoiseStream(config.master_seed, idx), n, config.model.T)
            X = _em_values(config.model, th0, eps, np.diff(w), dt)[0]
            res = mle(Path(times, X, "observation"), config.model, eps)
            errs[r] = (res.theta_hat - th0) / rate
        consts = limit_constants(config.model, th0)
        hat_std = np.asarray(limit_samples["u_hat"]) / consts.gamma
        out[f"{th0:g}"] = {
            "ks": ks_distance(errs, hat_std),
            "n": config.uniformity_replicates,
            "eps": eps,
        }
    return out


def run_experiment(config: ExperimentConfig):
    """Full Monte Carlo experiment: simulate, estimate, aggregate, report.

    Deterministic in (config, master_seed).  Per-eps estimate files are
    flushed as they complete and reused on rerun, so an interrupted run
    resumes from the last finished eps level and ends with the same bytes.
    """
    from . import reporting
    from .properties import property_suite

    report_val = validate_model(
        config.model, b=config.model.h.lower_bound, H1=config.model.h.deriv_bound,
        dense_theta_check=config.dense_theta_check,
    )
    if not report_val.ok:
        raise ConfigError(f"model fails validation: {report_val.violations}")

    os.makedirs(config.out_dir, exist_ok=True)
    _check_or_write_fingerprint(config)

    logger.info("limit-law sampling: %d samples on %d nodes",
                config.limit_n_samples, 2 * config.limit_n_per_side + 1)
    limit_samples = compute_limit_samples(config, out_dir=config.out_dir)

    rows_by_eps: dict = {}
    failures_by_eps: dict = {}
    for eps_index, eps in enumerate(config.eps_list):
        csv_path, acct_path = _eps_paths(config, eps_index)
        if os.path.exists(csv_path) and os.path.exists(acct_path):
            logger.info("eps=%g: reusing %s", eps, csv_path)
            rows = _read_estimates_csv(csv_path)
            with open(acct_path) as f:
                acct = json.load(f)
            failures = acct["failures"]
        else:
            logger.info("eps=%g: %d replicates x %s (n_steps=%d)",
                        eps, config.n_replicates, list(config.estimators),
                        config.n_steps(eps))
            rows, failures = run_eps_level(config, eps_index)
            _write_estimates_csv(csv_path, rows)
            tmp = acct_path + ".tmp"
            with open(tmp, "w") as f:
                json.dump({"n_replicates": config.n_replicates,
                           "failures": failures}, f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, acct_path)
        rows_by_eps[eps] = rows
        failures_by_eps[eps] = failures

    if config.run_properties:
        logger.info("property suite")
        properties = property_suite(config)
        props_path = os.path.join(config.out_dir, "properties.json")
        tmp = props_path + ".tmp"
        with open(tmp, "w") as f:
            json.dump([reporting._property_to_dict(p) for p in properties],
                      f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, props_path)
    else:
        properties = []

    uniformity = (
        _uniformity_sweep(config, limit_samples) if config.uniformity_theta0 else {}
    )

    report = reporting.aggregate(config, rows_by_eps, limit_samples,
                                 properties, failures_by_eps, uniformity)
    reporting.write_report_json(report, os.path.join(config.out_dir, "report.json"))
    reporting.write_report_text(report, os.path.join(config.out_dir, "report.txt"))

    norm_errors = {}
    for eps in config.eps_list:
        for est in config.estimators:
            errs = np.array([r["normalized_error"] for r in rows_by_eps[eps]
                             if r["estimator"] == est])
            if len(errs):
                norm_errors[(eps, est)] = errs
    reporting.write_plotdata(report, config, norm_errors, limit_samples, config.out_dir)
    if config.render_figures:
        from .figures import render_figures
        render_figures(report, config, norm_errors, limit_samples, config.out_dir)
    return report


def recompute_report(out_dir: str):
    """Rebuild aggregates, report files and figures from a results directory."""
    from . import reporting

    sidecar = _config_sidecar_path(out_dir)
    if not os.path.exists(sidecar):
        raise ConfigError(f"{out_dir} has no config_resolved.json")
    with open(sidecar) as f:
        fp = json.load(f)
    fp = dict(fp)
    fp["out_dir"] = out_dir
    config = ExperimentConfig.from_dict(fp)

    limit_csv = os.path.join(out_dir, "limit_samples.csv")
    if not os.path.exists(limit_csv):
        raise ConfigError(f"{out_dir} has no limit_samples.csv")
    u_hat, u_tilde, _suspect = _read_limit_csv(limit_csv)
    constants = limit_constants(config.model, config.theta0)
    # rebuild the samples dict from the stored draws
    hat_std, tilde_std = u_hat / constants.gamma, u_tilde / constants.gamma
    n = len(u_hat)
    hat_sq, tilde_sq = hat_std ** 2, tilde_std ** 2
    paired = tilde_sq - hat_sq
    limit_samples = {
        "u_hat": u_hat, "u_tilde": u_tilde,
        "u_hat_std": hat_std, "u_tilde_std": tilde_std,
        "targets": {
            "u_hat_sq": float(hat_sq.mean()),
            "u_hat_sq_se": float(hat_sq.std(ddof=1) / math.sqrt(n)),
            "u_tilde_sq": float(tilde_sq.mean()),
            "u_tilde_sq_se": float(tilde_sq.std(ddof=1) / math.sqrt(n)),
            "paired_tilde_minus_hat": float(paired.mean()),
            "paired_se": float(paired.std(ddof=1) / math.sqrt(n)),
        },
        "meta": {
            "H": config.model.H, "U": config.limit_U,
            "n_per_side": config.limit_n_per_side,
            "n_samples": n,
            "gamma_sq": constants.gamma_sq, "gamma": constants.gamma,
            "n_suspect": int(_suspect.sum()),
            "u_hat_sq": float(np.mean(u_hat ** 2)),
            "u_tilde_sq": float(np.mean(u_tilde ** 2)),
            "u_hat_std_sq": float(hat_sq.mean()),
            "u_hat_std_sq_se": float(hat_sq.std(ddof=1) / math.sqrt(n)),
            "u_tilde_std_sq": float(tilde_sq.mean()),
            "u_tilde_std_sq_se": float(tilde_sq.std(ddof=1) / math.sqrt(n)),
        },
    }

    rows_by_eps, failures_by_eps = {}, {}
    for eps_index, eps in enumerate(config.eps_list):
        csv_path, acct_path = _eps_paths(config, eps_index)
        if not os.path.exists(csv_path):
            raise ConfigError(f"missing estimates file {csv_path}; run `estimate` first")
        rows_by_eps[eps] = _read_estimates_csv(csv_path)
        if os.path.exists(acct_path):
            with open(acct_path) as f:
                failures_by_eps[eps] = json.load(f)["failures"]
        else:
            failures_by_eps[eps] = []

    props_path = os.path.join(out_dir, "properties.json")
    properties_dicts = []
    if os.path.exists(props_path):
        with open(props_path) as f:
            properties_dicts = json.load(f)

    class _P:  # adapt stored dicts to the PropertyResult interface
        def __init__(self, d):
            self.name = d["name"]
            self.passed = d["passed"]
            self.skipped = d["skipped"]
            self.detail = d["detail"]
            self.measurements = d["measurements"]
            self.status = d["status"]

    properties = [_P(d) for d in properties_dicts]
    report = reporting.aggregate(config, rows_by_eps, limit_samples,
                                 properties, failures_by_eps)
    reporting.write_report_json(report, os.path.join(out_dir, "report.json"))
    reporting.write_report_text(report, os.path.join(out_dir, "report.txt"))
    norm_errors = {}
    for eps in config.eps_list:
        for est in config.estimators:
            errs = np.array([r["normalized_error"] for r in rows_by_eps[eps]
                             if r["estimator"] == est])
            if len(errs):
                norm_errors[(eps, est)] = errs
    reporting.write_plotdata(report, config, norm_errors, limit_samples, out_dir)
    if config.render_figures:
        from .figures import render_figures
        render_figures(report, config, norm_errors, limit_samples, out_dir)
    return report
