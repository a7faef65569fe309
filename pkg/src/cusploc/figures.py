"""Figure rendering for the report path.

Renders the same quantities the plot-data CSVs carry: the rate regression,
the ECDF overlays against the standardized limit laws, the normalized-risk
table and the deviation-scaling medians.  All figures go to PNG files next
to the delimited output.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = {"mle": "tab:blue", "bayes": "tab:orange", "mde": "tab:green"}


def render_figures(report, config, norm_errors: dict, limit_samples: dict, out_dir) -> list:
    written = []
    written.append(_rate_figure(report, out_dir))
    written.extend(_ecdf_figures(config, norm_errors, limit_samples, out_dir))
    written.append(_risk_figure(report, out_dir))
    dev = _deviation_figure(report, out_dir)
    if dev:
        written.append(dev)
    return [w for w in written if w]


def _rate_figure(report, out_dir):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    plotted = False
    for est, fit in report.rates.items():
        pairs = fit.get("pairs", [])
        if not pairs:
            continue
        eps = np.array([p[0] for p in pairs])
        rmse = np.array([p[1] for p in pairs])
        ax.loglog(eps, rmse, "o", color=_COLORS.get(est), label=f"{est} rmse")
        if fit.get("slope") is not None:
            line = np.exp(fit["intercept"] + fit["slope"] * np.log(eps))
            ax.loglog(eps, line, "-", color=_COLORS.get(est), alpha=0.6,
                      label=f"{est} slope {fit['slope']:.3f}")
        plotted = True
    if not plotted:
        plt.close(fig)
        return None
    ax.set_xlabel("eps")
    ax.set_ylabel("rmse")
    ax.set_title("estimator error rates")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    path = os.path.join(out_dir, "rate_regression.png")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _ecdf_figures(config, norm_errors, limit_samples, out_dir):
    written = []
    eps_min = config.eps_list[-1]
    target_of = {"mle": ("u_hat_std", "u_hat / gamma"),
                 "bayes": ("u_tilde_std", "u_tilde / gamma")}
    for est, (key, label) in target_of.items():
        if (eps_min, est) not in norm_errors:
            continue
        emp = np.sort(norm_errors[(eps_min, est)])
        lim = np.sort(limit_samples[key])
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.step(emp, np.arange(1, len(emp) + 1) / len(emp), where="post",
                color=_COLORS.get(est), label=f"{est} errors (eps={eps_min:g})")
        ax.step(lim, np.arange(1, len(lim) + 1) / len(lim), where="post",
                color="black", alpha=0.6, label=label)
        ax.set_xlabel("normalized error")
        ax.set_ylabel("ECDF")
        ax.set_title(f"{est}: empirical vs limit law")
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        lo, hi = np.quantile(lim, [0.001, 0.999])
        ax.set_xlim(lo * 1.5, hi * 1.5)
        path = os.path.join(out_dir, f"ecdf_{est}.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def _risk_figure(report, out_dir):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_est: dict = {}
    for row in report.risks:
        by_est.setdefault(row["estimator"], []).append(row)
    plotted = False
    for est, rows in by_est.items():
        eps = [r["eps"] for r in rows]
        risk = [r["risk"] for r in rows]
        se = [r["risk_se"] for r in rows]
        ax.errorbar(eps, risk, yerr=2 * np.array(se), fmt="o-",
                    color=_COLORS.get(est), label=est, capsize=3)
        tgt = rows[0].get("limit_target")
        if tgt:
            ax.axhline(tgt, color=_COLORS.get(est), ls="--", alpha=0.5)
        plotted = True
    if not plotted:
        plt.close(fig)
        return None
    ax.set_xscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("normalized risk")
    ax.set_title("normalized risks vs limit targets (dashed)")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    path = os.path.join(out_dir, "risks.png")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _deviation_figure(report, out_dir):
    prop = next((p for p in report.properties
                 if p["name"] == "deviation_scaling" and not p["skipped"]), None)
    if prop is None:
        return None
    meas = prop["measurements"]
    eps = np.array(report.config["eps_list"], dtype=float)
    med = np.array(meas["medians"], dtype=float)
    if len(eps) != len(med):
        return None
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(eps, med, "o-", label="median sup|X - x|")
    kappa = report.config["model"]["kappa"]
    ref = med[-1] * (eps / eps[-1]) ** kappa
    ax.loglog(eps, ref, "--", alpha=0.6, label=f"slope kappa = {kappa:g}")
    ref1 = med[-1] * (eps / eps[-1])
    ax.loglog(eps, ref1, ":", alpha=0.6, label="slope 1")
    ax.set_xlabel("eps")
    ax.set_ylabel("median sup deviation")
    ax.set_title(f"path deviation scaling (fit {meas['slope']:.3f})")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    path = os.path.join(out_dir, "deviation_scaling.png")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
