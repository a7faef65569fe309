"""Likelihood-ratio functionals along observed paths.

The continuous-time log likelihood ratio between two drift parameters is

    ln L(t1, X) - ln L(t2, X)
        = int_0^T (S1 - S2)(X_t) dX_t / eps^2
          - int_0^T (S1^2 - S2^2)(X_t) dt / (2 eps^2).

Both integrals are discretized with the drift evaluated at the left
endpoint of each interval (the Ito convention; mid or right rules would
bias the stochastic integral toward Stratonovich).  Everything is computed
through drift *differences*: the shared O(eps^-2) magnitude of the two
absolute log likelihoods would cancel catastrophically otherwise.

Since only the cusp term depends on theta, the difference reduces to

    S1 - S2     = a (p1 - p2),            p_i = |X - theta_i|^kappa,
    S1^2 - S2^2 = a^2 (p1^2 - p2^2) + 2 a h(X) (p1 - p2),

which is what the batched kernel evaluates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError, DomainError, GridMismatchError
from .model import CuspModel, Path, abs_pow

# largest temporary the theta-chunked kernel will allocate, in elements
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True)
class LimitConstants:
    """Problem constants linking the model to the standardized limit law."""

    gamma_sq: float  # Gamma_theta^2
    gamma: float     # gamma_theta = Gamma_theta^(1/H)
    H: float

    def __post_init__(self):
        if self.gamma_sq <= 0 or self.gamma <= 0:
            raise ConfigError("limit constants must be positive")
        expected = self.gamma_sq ** (1.0 / (2.0 * self.H))
        if not math.isclose(self.gamma, expected, rel_tol=1e-9):
            raise ConfigError("gamma must equal gamma_sq**(1/(2H))")


@dataclass
class LogLikelihoodCurve:
    """u -> ln Z_eps(u) sampled on a localized grid around ref_theta.

    ``scale`` records the abscissa units: "u_units" with the map
    theta = ref_theta + scale_factor * u, or "raw_theta" when the grid is
    already in parameter units (scale_factor = 1).
    """

    ref_theta: float
    eps: float
    scale: str
    scale_factor: float
    grid: np.ndarray
    logZ: np.ndarray
    H: float
    gamma_sq: float

    def __post_init__(self):
        if self.scale not in ("u_units", "raw_theta"):
            raise ConfigError(f"unknown curve scale {self.scale!r}")
        if not np.all(np.isfinite(self.logZ)):
            raise ConfigError("curve contains non-finite log-likelihood values")

    @property
    def thetas(self) -> np.ndarray:
        if self.scale == "raw_theta":
            return self.grid
        return self.ref_theta + self.scale_factor * self.grid

    def to_csv(self, path) -> None:
        """CSV of (u, logZ) or (theta, logZ) plus a JSON sidecar."""
        label = "u" if self.scale == "u_units" else "theta"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([label, "logZ"])
            for g, z in zip(self.grid, self.logZ):
                w.writerow([f"{g:.17g}", f"{z:.17g}"])
        sidecar = {
            "ref_theta": self.ref_theta,
            "eps": self.eps,
            "H": self.H,
            "gamma_sq": self.gamma_sq,
            "scale": self.scale,
        }
        with open(str(path) + ".json", "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def curve_logz(values: np.ndarray, model: CuspModel, thetas: np.ndarray,
               theta_ref: float, eps: float, dt: float) -> np.ndarray:
    """ln [L(theta_j) / L(theta_ref)] for every theta_j, one path.

    ``values`` is the observed path on a uniform grid with step dt.  The
    per-theta reductions run in theta-chunks sized to keep temporaries
    inside the cache budget.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    x_left = values[:-1]
    dx = np.diff(values)
    hv = model.h(x_left)
    a = model.a
    kap = model.kappa

    p_ref = a * abs_pow(x_left - theta_ref, kap)
    ref_dx = float(p_ref @ dx)
    ref_sq = float(np.sum(p_ref * p_ref))
    ref_h = float(p_ref @ hv) if not model.h.is_constant() else float(hv[0]) * float(np.sum(p_ref))

    n = len(x_left)
    chunk = max(1, _CHUNK_BUDGET // n)
    out = np.empty(len(thetas))
    inv_eps2 = 1.0 / (eps * eps)
    for i in range(0, len(thetas), chunk):
        th = thetas[i:i + chunk]
        p = a * abs_pow(x_left[None, :] - th[:, None], kap)
        t_dx = p @ dx - ref_dx
        t_sq = np.sum(p * p, axis=1) - ref_sq
        if model.h.is_constant():
            t_h = float(hv[0]) * (np.sum(p, axis=1)) - ref_h
        else:
            t_h = p @ hv - ref_h
        out[i:i + chunk] = inv_eps2 * (t_dx - 0.5 * dt * (t_sq + 2.0 * t_h))
    return out


def log_likelihood_ratio(observed: Path, model: CuspModel,
                         theta_num: float, theta_den: float, eps: float) -> float:
    """ln L(theta_num, X) - ln L(theta_den, X) on the observed path.

    Exactly zero when the two thetas coincide, and exactly antisymmetric
    under swapping them (every summand is negated, and IEEE negation is
    exact).
    """
    if eps <= 0:
        raise ConfigError("log_likelihood_ratio needs eps > 0")
    if observed.kind == "wiener":
        raise GridMismatchError("log_likelihood_ratio expects an observation path")
    for th in (theta_num, theta_den):
        if not model.theta_lo <= th <= model.theta_hi:
            raise DomainError(f"theta={th} outside closure of Theta")
    if theta_num == theta_den:
        return 0.0
    return float(
        curve_logz(observed.values, model, np.array([theta_num]), theta_den,
                   eps, observed.dt)[0]
    )


def normalized_curve(observed: Path, model: CuspModel, theta0: float, eps: float,
                     u_grid, use_phi: bool = False) -> LogLikelihoodCurve:
    """ln Z_eps(u) on a u-grid around theta0.

    The default u-to-theta map is theta = theta0 + eps^(1/H) u, under which
    ln Z_eps(u) converges to ln Z(gamma_theta0 u).  With ``use_phi`` the
    step becomes phi_eps = gamma^{-1} eps^(1/H) so the limit is the
    standardized Z(u) itself.  Abscissae whose mapped theta escapes Theta
    are rejected, not clamped: clamping would silently change the
    estimator the curve feeds.
    """
    if eps <= 0:
        raise ConfigError("normalized_curve needs eps > 0")
    u_grid = np.asarray(u_grid, dtype=float)
    if u_grid.ndim != 1 or len(u_grid) == 0:
        raise ConfigError("u_grid must be a non-empty 1-d array")
    if np.any(np.diff(u_grid) <= 0):
        raise ConfigError("u_grid must be strictly increasing")
    constants = limit_constants(model, theta0)
    scale = eps ** (1.0 / model.H)
    if use_phi:
        scale /= constants.gamma
    thetas = theta0 + scale * u_grid
    bad = (thetas <= model.theta_lo) | (thetas >= model.theta_hi)
    if np.any(bad):
        raise DomainError(
            "u abscissae map outside Theta: " +
            ", ".join(f"{u:g}" for u in u_grid[bad])
        )
    logz = curve_logz(observed.values, model, thetas, theta0, eps, observed.dt)
    # anchor: u = 0 maps to theta0 and must give exactly 0
    logz[u_grid == 0.0] = 0.0
    return LogLikelihoodCurve(
        ref_theta=theta0, eps=eps, scale="u_units", scale_factor=scale,
        grid=u_grid, logZ=logz, H=model.H, gamma_sq=constants.gamma_sq,
    )


# ---------------------------------------------------------------------------
# Limit constants
# ---------------------------------------------------------------------------

_CUSP_ENERGY_CACHE: dict = {}


def cusp_energy(kappa: float) -> float:
    """J(kappa) = int_R (|s-1|^kappa - |s|^kappa)^2 ds.

    Adaptive quadrature on [-M, 1+M] (log-substituted far pieces, splits at
    the cusps s = 0, 1) plus the analytic tail 2 kappa^2 M^(2k-1) / (1-2k)
    from the |s| -> inf expansion of the integrand.  M is chosen so the
    tail itself is below 1e-8 relative, capped at 1e6 with the residual
    simply added (kappa near 1/2 makes the tail heavy; the cap keeps the
    cost bounded while the analytic term keeps the error tiny).
    """
    if kappa >= 0.5:
        raise DomainError("cusp energy integral diverges for kappa >= 1/2")
    if kappa <= 0.0:
        raise DomainError("kappa must be positive")
    if kappa in _CUSP_ENERGY_CACHE:
        return _CUSP_ENERGY_CACHE[kappa]

    k = kappa
    M = max(1e3, (1e8 * k * k / (1.0 - 2.0 * k)) ** (1.0 / (1.0 - 2.0 * k)))
    M = min(M, 1e6)

    f = lambda s: (np.abs(s - 1.0) ** k - np.abs(s) ** k) ** 2
    parts = [
        quad(f, -2.0, 0.0, limit=200)[0],
        quad(f, 0.0, 1.0, limit=200)[0],
        quad(f, 1.0, 3.0, limit=200)[0],
        quad(lambda y: f(np.exp(y)) * np.exp(y), math.log(3.0), math.log(1.0 + M), limit=400)[0],
        quad(lambda y: f(-np.exp(y)) * np.exp(y), math.log(2.0), math.log(M), limit=400)[0],
    ]
    tail = 2.0 * k * k * M ** (2.0 * k - 1.0) / (1.0 - 2.0 * k)
    value = sum(parts) + tail
    _CUSP_ENERGY_CACHE[kappa] = value
    return value


def limit_constants(model: CuspModel, theta0: float) -> LimitConstants:
    """Gamma^2 = a^2 J(kappa) / h(theta0) and gamma = Gamma^(1/H)."""
    if not model.theta_lo <= theta0 <= model.theta_hi:
        raise DomainError(f"theta0={theta0} outside closure of Theta")
    h0 = float(model.h(theta0))
    gamma_sq = model.a ** 2 * cusp_energy(model.kappa) / h0
    H = model.H
    gamma = gamma_sq ** (1.0 / (2.0 * H))
    return LimitConstants(gamma_sq=gamma_sq, gamma=gamma, H=H)
