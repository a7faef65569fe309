"""MLE, Bayesian posterior mean and minimum-distance estimator.

The likelihood ratio is continuous but not differentiable in theta (the
cusp sits wherever the path crosses the candidate level), so both the MLE
and the MDE use derivative-free hierarchical grid search: a coarse scan of
Theta followed by repeated tenfold zooms around the incumbent, never any
gradient step.  The Bayesian estimator integrates the posterior in log
space with a running-max shift, refining the grid near the posterior mode
until the mean stabilizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError
from .likelihood import curve_logz
from .model import CuspModel, Path, _ode_values_matrix, drift

LEVEL0_POINTS = 200
ZOOM_POINTS = 21  # odd, so the incumbent stays on the refined grid
MAX_ZOOM_LEVELS = 8
BAYES_REFINE_POINTS = 81
BAYES_MAX_REFINES = 8


@dataclass(frozen=True)
class Prior:
    """Positive continuous prior density on Theta.

    Catalog: ``uniform`` and ``trunc_gauss`` (Gaussian(mu, sigma) restricted
    to Theta).  Densities are normalized over Theta at construction and the
    normalization is verified by quadrature to 1e-6.
    """

    name: str
    theta_lo: float
    theta_hi: float
    params: tuple = ()

    def __post_init__(self):
        if self.name not in ("uniform", "trunc_gauss"):
            raise ConfigError(f"unknown prior {self.name!r}")
        if self.name == "trunc_gauss":
            if len(self.params) != 2 or self.params[1] <= 0:
                raise ConfigError("trunc_gauss prior needs params (mu, sigma > 0)")
        total, _ = quad(self.pdf, self.theta_lo, self.theta_hi, limit=200)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"prior does not integrate to 1 over Theta (got {total})")

    def _mass(self) -> float:
        if self.name == "uniform":
            return self.theta_hi - self.theta_lo
        mu, sigma = self.params
        from scipy.stats import norm
        return float(norm.cdf(self.theta_hi, mu, sigma) - norm.cdf(self.theta_lo, mu, sigma))

    def pdf(self, theta):
        th = np.asarray(theta, dtype=float)
        if self.name == "uniform":
            dens = np.full_like(th, 1.0 / (self.theta_hi - self.theta_lo))
        else:
            mu, sigma = self.params
            z = (th - mu) / sigma
            dens = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi) * self._mass())
        return dens if np.ndim(theta) else float(dens)

    def logpdf(self, theta):
        return np.log(self.pdf(theta))


def make_prior(name: str, theta_lo: float, theta_hi: float, *params: float) -> Prior:
    return Prior(name, theta_lo, theta_hi, tuple(float(v) for v in params))


@dataclass
class EstimateResult:
    estimator: str
    theta_hat: float
    normalized_error: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# grid search scaffolding
# ---------------------------------------------------------------------------


def _zoom_levels_needed(spacing0: float, target: float) -> int:
    levels = 0
    s = spacing0
    while s > target and levels < MAX_ZOOM_LEVELS:
        s /= 10.0
        levels += 1
    return levels


def _argbest(grid: np.ndarray, vals: np.ndarray, maximize: bool) -> tuple[float, float, bool]:
    """Best grid node with the smallest-theta tie rule and a tie flag."""
    v = vals if maximize else -vals
    best = np.max(v)
    ties = np.flatnonzero(v == best)
    return float(grid[ties[0]]), float(vals[ties[0]]), len(ties) > 1


def _hierarchical_search(objective, model: CuspModel, target_resolution: float,
                         maximize: bool, level0_points: int = LEVEL0_POINTS):
    """Coarse scan of Theta plus tenfold zooms around the incumbent.

    ``objective(grid) -> values`` is evaluated on whole grids.  Each zoom
    level spans one coarse cell on either side of the incumbent (clipped to
    Theta) so the refined spacing is a tenth of the previous one, and the
    incumbent is kept when the refined grid fails to beat it, which makes
    refinement monotone in the objective by construction.
    """
    grid = np.linspace(model.theta_lo, model.theta_hi, level0_points)
    vals = objective(grid)
    theta, best, tie = _argbest(grid, vals, maximize)
    spacing = grid[1] - grid[0]
    levels = [(float(spacing), float(best))]
    for _ in range(_zoom_levels_needed(spacing, target_resolution)):
        lo = max(model.theta_lo, theta - spacing)
        hi = min(model.theta_hi, theta + spacing)
        grid = np.linspace(lo, hi, ZOOM_POINTS)
        vals = objective(grid)
        t_new, v_new, tie_new = _argbest(grid, vals, maximize)
        better = v_new > best if maximize else v_new < best
        if better or (v_new == best and t_new < theta):
            theta, best, tie = t_new, v_new, tie_new
        spacing = (hi - lo) / (ZOOM_POINTS - 1)
        levels.append((float(spacing), float(best)))
    return theta, best, tie, levels


# ---------------------------------------------------------------------------
# MLE
# ---------------------------------------------------------------------------


def mle(observed: Path, model: CuspModel, eps: float) -> EstimateResult:
    """Maximum likelihood estimate by hierarchical grid search.

    The final grid resolution is eps^(1/H) / 50, an order below the
    estimator's stochastic error scale.  Ties take the smallest maximizing
    theta and set the multiplicity flag.
    """
    if eps <= 0:
        raise ConfigError("mle needs eps > 0")
    values, dt = observed.values, observed.dt
    anchor = 0.5 * (model.theta_lo + model.theta_hi)

    def objective(grid):
        return curve_logz(values, model, grid, anchor, eps, dt)

    target = eps ** (1.0 / model.H) / 50.0
    theta, best, tie, levels = _hierarchical_search(objective, model, target, maximize=True)
    return EstimateResult(
        estimator="mle",
        theta_hat=theta,
        diagnostics={
            "objective": best,
            "multiplicity": tie,
            "grid_levels": levels,
            "resolution": levels[-1][0],
        },
    )


# ---------------------------------------------------------------------------
# Bayes
# ---------------------------------------------------------------------------


def bayes(observed: Path, model: CuspModel, eps: float, prior: Prior) -> EstimateResult:
    """Posterior mean under quadratic loss.

    Works on log posterior values shifted by their running maximum before
    exponentiating (the raw log likelihoods are O(eps^-2) apart), with
    trapezoidal integration over the union of all evaluated grids.  The
    grid is refined near the posterior mode until the mean moves by less
    than eps^(1/H) / 100.
    """
    if eps <= 0:
        raise ConfigError("bayes needs eps > 0")
    if (prior.theta_lo, prior.theta_hi) != (model.theta_lo, model.theta_hi):
        raise ConfigError("prior support must equal Theta")
    values, dt = observed.values, observed.dt
    anchor = 0.5 * (model.theta_lo + model.theta_hi)

    grid = np.linspace(model.theta_lo, model.theta_hi, LEVEL0_POINTS + 1)
    logz = curve_logz(values, model, grid, anchor, eps, dt)
    logpost = logz + prior.logpdf(grid)

    def posterior_mean(g, lp):
        shift = lp.max()
        w = np.exp(lp - shift)
        den = np.trapezoid(w, g)
        num = np.trapezoid(w * g, g)
        return num / den, w, den

    mean, w, den = posterior_mean(grid, logpost)
    tol = eps ** (1.0 / model.H) / 100.0
    spacing = grid[1] - grid[0]
    refines = 0
    for _ in range(BAYES_MAX_REFINES):
        mode = grid[np.argmax(logpost)]
        lo = max(model.theta_lo, mode - 2.0 * spacing)
        hi = min(model.theta_hi, mode + 2.0 * spacing)
        new_grid = np.linspace(lo, hi, BAYES_REFINE_POINTS)
        new_logz = curve_logz(values, model, new_grid, anchor, eps, dt)
        new_logpost = new_logz + prior.logpdf(new_grid)
        grid = np.concatenate([grid, new_grid])
        logpost = np.concatenate([logpost, new_logpost])
        order = np.argsort(grid, kind="stable")
        grid, logpost = grid[order], logpost[order]
        spacing = (hi - lo) / (BAYES_REFINE_POINTS - 1)
        refines += 1
        new_mean, w, den = posterior_mean(grid, logpost)
        moved = abs(new_mean - mean)
        mean = new_mean
        if moved < tol:
            break

    # posterior mass within two cells of either Theta endpoint
    cell = 2.0 * spacing
    shift = logpost.max()
    wv = np.exp(logpost - shift)
    lo_mask = grid <= model.theta_lo + cell
    hi_mask = grid >= model.theta_hi - cell
    edge_mass = (
        np.trapezoid(np.where(lo_mask, wv, 0.0), grid)
        + np.trapezoid(np.where(hi_mask, wv, 0.0), grid)
    ) / np.trapezoid(wv, grid)
    return EstimateResult(
        estimator="bayes",
        theta_hat=float(mean),
        diagnostics={
            "refinements": refines,
            "boundary_warning": bool(edge_mass > 0.5),
            "edge_mass": float(edge_mass),
            "grid_size": len(grid),
        },
    )


# ---------------------------------------------------------------------------
# MDE
# ---------------------------------------------------------------------------


def _mde_objective_online(model: CuspModel, thetas: np.ndarray, X: np.ndarray,
                          dt: float) -> np.ndarray:
    """Trapezoid of (X_t - x_t(theta))^2 accumulated during the RK4 sweep.

    ``thetas`` has shape (R, M) (one zoom grid per observation row) and
    ``X`` shape (R, n+1); the state advances for all R*M candidate paths at
    once without ever materializing them.
    """
    R, M = thetas.shape
    n = X.shape[1] - 1
    x = np.full((R, M), float(model.x0))
    obj = 0.5 * dt * (X[:, 0, None] - x) ** 2
    for k in range(n):
        k1 = drift(model, thetas, x)
        k2 = drift(model, thetas, x + 0.5 * dt * k1)
        k3 = drift(model, thetas, x + 0.5 * dt * k2)
        k4 = drift(model, thetas, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        w = dt if k < n - 1 else 0.5 * dt
        obj += w * (X[:, k + 1, None] - x) ** 2
    return obj


def mde_batch(X: np.ndarray, model: CuspModel, dt: float,
              eps: Optional[float] = None,
              level0_paths: Optional[np.ndarray] = None):
    """Minimum-distance estimates for a batch of observation rows.

    The level-0 objective is evaluated against a shared matrix of ODE paths
    (cacheable across batches); zoom levels solve their per-row candidate
    ODEs with the online kernel.  Returns (theta_hats, tie_flags, levels).
    """
    X = np.atleast_2d(X)
    R, n1 = X.shape
    n = n1 - 1
    grid0 = np.linspace(model.theta_lo, model.theta_hi, LEVEL0_POINTS)
    if level0_paths is None:
        level0_paths = _ode_values_matrix(model, grid0, n)
    w = np.full(n1, dt)
    w[0] = w[-1] = 0.5 * dt
    # obj0[r, j] = sum_k w_k (X[r,k] - P[j,k])^2, expanded so BLAS does the cross term
    Xw = X * w
    cross = Xw @ level0_paths.T
    x_sq = (Xw * X).sum(axis=1)
    p_sq = (level0_paths ** 2 * w).sum(axis=1)
    obj0 = x_sq[:, None] - 2.0 * cross + p_sq[None, :]

    spacing0 = grid0[1] - grid0[0]
    target = (eps if eps is not None else model.theta_span / LEVEL0_POINTS / 20.0) / 50.0
    thetas = np.empty(R)
    bests = np.empty(R)
    ties = np.zeros(R, dtype=bool)
    for r in range(R):
        thetas[r], bests[r], ties[r] = _argbest(grid0, obj0[r], maximize=False)

    spacing = spacing0
    levels = [float(spacing0)]
    for _ in range(_zoom_levels_needed(spacing0, target)):
        lo = np.maximum(model.theta_lo, thetas - spacing)
        hi = np.minimum(model.theta_hi, thetas + spacing)
        frac = np.linspace(0.0, 1.0, ZOOM_POINTS)
        grids = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
        objs = _mde_objective_online(model, grids, X, dt)
        for r in range(R):
            t_new, v_new, tie_new = _argbest(grids[r], objs[r], maximize=False)
            if v_new < bests[r] or (v_new == bests[r] and t_new < thetas[r]):
                thetas[r], bests[r], ties[r] = t_new, v_new, tie_new
        spacing = spacing / 10.0
        levels.append(float(spacing))
    return thetas, ties, levels


def mde(observed: Path, model: CuspModel, eps: Optional[float] = None) -> EstimateResult:
    """Minimum-distance estimate: argmin of int (X_t - x_t(theta))^2 dt.

    ``eps`` only sets the final grid resolution (eps / 50); when the noise
    level is unknown the search refines to span/200000 instead.
    """
    thetas, ties, levels = mde_batch(
        observed.values, model, observed.dt, eps=eps
    )
    return EstimateResult(
        estimator="mde",
        theta_hat=float(thetas[0]),
        diagnostics={
            "multiplicity": bool(ties[0]),
            "grid_levels": levels,
            "resolution": levels[-1],
        },
    )
