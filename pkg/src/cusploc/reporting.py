"""Aggregation of per-replicate rows into the experiment report files.

Everything written here is reproducible byte for byte from the same
config: no timestamps, sorted JSON keys, fixed float formatting.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .harness import (
    ExperimentConfig,
    KS_RATIONALE,
    KS_THRESHOLD,
    ks_distance,
    rate_regression,
    risk_table,
)

EXPECTED_EXPONENT = {"mle": "1/H", "bayes": "1/H", "mde": "1"}


@dataclass
class ExperimentReport:
    config: dict
    limit_law: dict
    per_eps: dict
    ks: dict
    rates: dict
    risks: list
    risk_ordering: dict
    properties: list
    accounting: dict
    uniformity: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "limit_law": self.limit_law,
            "per_eps": self.per_eps,
            "ks": self.ks,
            "rates": self.rates,
            "risks": self.risks,
            "risk_ordering": self.risk_ordering,
            "properties": self.properties,
            "accounting": self.accounting,
            "uniformity": self.uniformity,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def aggregate(config: ExperimentConfig, rows_by_eps: dict, limit_samples: dict,
              properties: list, failures_by_eps: dict,
              uniformity: dict | None = None) -> ExperimentReport:
    """Build the report structure from raw rows and limit-law samples."""
    per_eps: dict = {}
    norm_errors: dict = {}
    rmse_pairs: dict = {est: [] for est in config.estimators}
    for eps in config.eps_list:
        rows = rows_by_eps[eps]
        section: dict = {}
        for est in config.estimators:
            errs = np.array([r["normalized_error"] for r in rows if r["estimator"] == est])
            thetas = np.array([r["theta_hat"] for r in rows if r["estimator"] == est])
            mult = sum(r["multiplicity"] for r in rows if r["estimator"] == est)
            if len(errs) == 0:
                continue
            norm_errors[(eps, est)] = errs
            raw_err = thetas - config.theta0
            rmse = float(np.sqrt(np.mean(raw_err ** 2)))
            rmse_pairs[est].append((eps, rmse))
            at_bound = int(np.sum(
                (thetas <= config.model.theta_lo) | (thetas >= config.model.theta_hi)
            ))
            section[est] = {
                "n": int(len(errs)),
                "rmse": rmse,
                "risk": float(np.mean(errs ** 2)),
                "risk_se": float(np.std(errs ** 2, ddof=1) / math.sqrt(len(errs)))
                if len(errs) > 1 else 0.0,
                "mean_norm_error": float(np.mean(errs)),
                "multiplicity_count": int(mult),
                "at_boundary": at_bound,
            }
        per_eps[f"{eps:g}"] = section

    # KS against the standardized limit laws
    ks: dict = {}
    target_of = {"mle": "u_hat_std", "bayes": "u_tilde_std"}
    for eps in config.eps_list:
        entry = {}
        for est in config.estimators:
            key = target_of.get(est)
            if key is None or (eps, est) not in norm_errors:
                continue
            n_err = norm_errors[(eps, est)]
            if len(n_err) < 10:
                entry[est] = {"ks": None, "note": "insufficient-n"}
                continue
            entry[est] = {
                "ks": ks_distance(n_err, limit_samples[key]),
                "n_sample": int(len(n_err)),
                "n_limit": int(len(limit_samples[key])),
                "threshold": KS_THRESHOLD,
            }
        ks[f"{eps:g}"] = entry
    ks["rationale"] = KS_RATIONALE

    rates: dict = {}
    inv_h = 1.0 / config.model.H
    for est in config.estimators:
        pairs = rmse_pairs[est]
        if len(pairs) >= 3:
            fit = rate_regression(pairs)
            rates[est] = {
                "slope": fit.slope, "intercept": fit.intercept,
                "slope_se": fit.slope_se, "n_points": fit.n_points,
                "expected": inv_h if est in ("mle", "bayes") else 1.0,
                "pairs": [[e, r] for e, r in pairs],
            }
        else:
            rates[est] = {"slope": None, "note": "insufficient eps values",
                          "pairs": [[e, r] for e, r in pairs]}

    limit_targets = {
        "mle": limit_samples["targets"]["u_hat_sq"],
        "bayes": limit_samples["targets"]["u_tilde_sq"],
    }
    risks = risk_table(norm_errors, limit_targets)

    ordering: dict = {}
    eps_min = config.eps_list[-1]
    if {"mle", "bayes"} <= set(config.estimators) and (eps_min, "mle") in norm_errors:
        a = norm_errors[(eps_min, "bayes")] ** 2
        b = norm_errors[(eps_min, "mle")] ** 2
        if len(a) == len(b) and len(a) > 1:
            d = a - b  # paired difference, same replicate paths
            ordering["eps"] = eps_min
            ordering["paired_diff_mean"] = float(np.mean(d))
            ordering["paired_diff_se"] = float(np.std(d, ddof=1) / math.sqrt(len(d)))
            ordering["bayes_le_mle"] = bool(
                np.mean(d) <= 2.0 * ordering["paired_diff_se"]
            )
        lt = limit_samples["targets"]
        ordering["limit_u_tilde_sq"] = lt["u_tilde_sq"]
        ordering["limit_u_hat_sq"] = lt["u_hat_sq"]
        ordering["limit_paired_diff_mean"] = lt["paired_tilde_minus_hat"]
        ordering["limit_paired_diff_se"] = lt["paired_se"]
        ordering["limit_ordering_holds"] = bool(
            lt["paired_tilde_minus_hat"] <= 2.0 * lt["paired_se"]
        )
    # stabilization of the normalized risks across the last two eps levels
    if len(config.eps_list) >= 2:
        e1, e0 = config.eps_list[-2], config.eps_list[-1]
        stab = {}
        for est in config.estimators:
            if (e1, est) in norm_errors and (e0, est) in norm_errors:
                r1, r0 = norm_errors[(e1, est)] ** 2, norm_errors[(e0, est)] ** 2
                se = math.hypot(np.std(r1, ddof=1) / math.sqrt(len(r1)),
                                np.std(r0, ddof=1) / math.sqrt(len(r0)))
                gap = float(abs(np.mean(r1) - np.mean(r0)))
                stab[est] = {"gap": gap, "combined_se": se,
                             "within_2se": bool(gap <= 2.0 * se)}
        ordering["stabilization"] = stab

    accounting: dict = {}
    total_fail = 0
    for eps in config.eps_list:
        fl = failures_by_eps.get(eps, [])
        per_est = {}
        for est in config.estimators:
            k = sum(1 for f in fl if f["estimator"] == est)
            n_ok = per_eps[f"{eps:g}"].get(est, {}).get("n", 0)
            per_est[est] = {"successes": n_ok, "failures": k}
        total_fail += len(fl)
        accounting[f"{eps:g}"] = per_est
    accounting["total_failures"] = total_fail
    accounting["failure_list"] = failures_by_eps_flat(failures_by_eps)

    return ExperimentReport(
        config=config.fingerprint_dict(),
        limit_law=limit_samples["meta"],
        per_eps=per_eps,
        ks=ks,
        rates=rates,
        risks=risks,
        risk_ordering=ordering,
        properties=[_property_to_dict(p) for p in properties],
        accounting=accounting,
        uniformity=uniformity or {},
    )


def failures_by_eps_flat(failures_by_eps: dict) -> list:
    out = []
    for eps in sorted(failures_by_eps, reverse=True):
        for f in failures_by_eps[eps]:
            out.append(_jsonable(f))
    return out


def _property_to_dict(p) -> dict:
    return {
        "name": p.name,
        "status": p.status,
        "passed": bool(p.passed),
        "skipped": bool(p.skipped),
        "detail": p.detail,
        "measurements": _jsonable(p.measurements),
    }


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def write_report_json(report: ExperimentReport, path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        json.dump(_jsonable(report.to_json_dict()), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def write_report_text(report: ExperimentReport, path) -> None:
    lines = []
    add = lines.append
    cfg = report.config
    add("cusploc experiment report")
    add("=" * 60)
    m = cfg["model"]
    h_params = ", ".join(f"{v:g}" for v in m["h"]["params"])
    add(f"model: a={m['a']:g} kappa={m['kappa']:g} h={m['h']['name']}({h_params}) "
        f"x0={m['x0']:g} T={m['T']:g} Theta=({m['theta_lo']:g}, {m['theta_hi']:g})")
    add(f"theta0={cfg['theta0']:g}  eps grid: {cfg['eps_list']}  "
        f"replicates: {cfg['n_replicates']}  master_seed: {cfg['master_seed']}")
    p_params = ", ".join(f"{v:g}" for v in cfg["prior"]["params"])
    add(f"dt rule: {cfg['dt_rule']}  estimators: {', '.join(cfg['estimators'])}  "
        f"prior: {cfg['prior']['name']}({p_params})")
    add("")
    ll = report.limit_law
    add(f"limit law: H={ll['H']:g}  U={ll['U']:g}  n_per_side={ll['n_per_side']}  "
        f"n_samples={ll['n_samples']}  gamma^2={ll['gamma_sq']:.6g}  gamma={ll['gamma']:.6g}")
    add(f"  E(u_hat/gamma)^2  = {ll['u_hat_std_sq']:.4f} +- {ll['u_hat_std_sq_se']:.4f}")
    add(f"  E(u_tilde/gamma)^2 = {ll['u_tilde_std_sq']:.4f} +- {ll['u_tilde_std_sq_se']:.4f}")
    add(f"  truncation-suspect samples: {ll['n_suspect']}/{ll['n_samples']}")
    add("")
    add("per-eps estimates (normalized risk = eps^(-2/H) * E(theta_hat-theta0)^2)")
    for eps_key, section in report.per_eps.items():
        parts = []
        for est, s in section.items():
            parts.append(f"{est}: n={s['n']} rmse={s['rmse']:.5g} "
                         f"risk={s['risk']:.4g}+-{s['risk_se']:.3g}")
        add(f"  eps={eps_key}: " + " | ".join(parts))
    add("")
    add(f"KS distances vs standardized limit laws (pass < {KS_THRESHOLD}; {report.ks['rationale']})")
    for eps_key, entry in report.ks.items():
        if eps_key == "rationale":
            continue
        parts = []
        for est, s in entry.items():
            if s.get("ks") is None:
                parts.append(f"{est}: {s.get('note', 'n/a')}")
            else:
                parts.append(f"{est}: {s['ks']:.4f}")
        if parts:
            add(f"  eps={eps_key}: " + ", ".join(parts))
    add("")
    add("rate regression (log rmse on log eps)")
    for est, fit in report.rates.items():
        if fit.get("slope") is None:
            add(f"  {est}: {fit.get('note', 'n/a')}")
        else:
            add(f"  {est}: slope={fit['slope']:.4f} +- {fit['slope_se']:.4f} "
                f"(expected {fit['expected']:.4g})")
    add("")
    add("risk table")
    for row in report.risks:
        tgt = f" target={row['limit_target']:.4f}" if row.get("limit_target") else ""
        flag = "  ** exceeds MLE beyond 2 SE" if row.get("exceeds_mle") else ""
        add(f"  eps={row['eps']:g} {row['estimator']}: risk={row['risk']:.4g} "
            f"+-{row['risk_se']:.3g}{tgt}{flag}")
    ordering = report.risk_ordering
    if ordering:
        if "paired_diff_mean" in ordering:
            add(f"  bayes-mle paired risk diff at eps={ordering['eps']:g}: "
                f"{ordering['paired_diff_mean']:.4g} +- {ordering['paired_diff_se']:.4g} "
                f"-> bayes <= mle: {ordering['bayes_le_mle']}")
        if "limit_ordering_holds" in ordering:
            add(f"  limit-law ordering: E u_tilde^2 = {ordering['limit_u_tilde_sq']:.4f} "
                f"vs E u_hat^2 = {ordering['limit_u_hat_sq']:.4f} "
                f"-> holds: {ordering['limit_ordering_holds']}")
        for est, s in ordering.get("stabilization", {}).items():
            add(f"  risk stabilization {est} (last two eps): gap={s['gap']:.4g} "
                f"+-{s['combined_se']:.3g} within 2 SE: {s['within_2se']}")
    add("")
    add("properties")
    for p in report.properties:
        add(f"  [{p['status']}] {p['name']}: {p['detail']}")
    add("")
    acc = report.accounting
    add(f"accounting: total failures = {acc['total_failures']}")
    for eps_key in (k for k in acc if k not in ("total_failures", "failure_list")):
        parts = [f"{est}: {v['successes']}/{v['successes'] + v['failures']}"
                 for est, v in acc[eps_key].items()]
        add(f"  eps={eps_key}: " + ", ".join(parts))
    if report.uniformity:
        add("")
        add("uniformity sweep (KS of normalized MLE errors vs standardized u_hat)")
        for th_key, s in report.uniformity.items():
            add(f"  theta0={th_key}: ks={s['ks']:.4f} (n={s['n']})")
    add("")
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines))
    os.replace(tmp, path)


def write_plotdata(report: ExperimentReport, config: ExperimentConfig,
                   norm_errors: dict, limit_samples: dict, out_dir) -> list:
    """Plot-ready CSVs: ECDF pairs at the smallest eps and rate points."""
    written = []
    eps_min = config.eps_list[-1]
    target_of = {"mle": "u_hat_std", "bayes": "u_tilde_std"}
    for est, key in target_of.items():
        if (eps_min, est) not in norm_errors:
            continue
        emp = np.sort(norm_errors[(eps_min, est)])
        lim = np.sort(limit_samples[key])
        grid = np.concatenate([emp, lim])
        grid.sort()
        f_emp = np.searchsorted(emp, grid, side="right") / len(emp)
        f_lim = np.searchsorted(lim, grid, side="right") / len(lim)
        path = os.path.join(out_dir, f"plotdata_ecdf_{est}.csv")
        with open(path, "w") as f:
            f.write("x,ecdf_empirical,ecdf_limit\n")
            for x, a, b in zip(grid, f_emp, f_lim):
                f.write(f"{x:.17g},{a:.17g},{b:.17g}\n")
        written.append(path)
    path = os.path.join(out_dir, "plotdata_rate.csv")
    with open(path, "w") as f:
        f.write("estimator,eps,rmse\n")
        for est, fit in report.rates.items():
            for e, r in fit.get("pairs", []):
                f.write(f"{est},{e:.17g},{r:.17g}\n")
    written.append(path)
    return written
