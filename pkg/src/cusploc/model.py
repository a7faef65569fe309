"""Problem instance and path-level machinery.

The observation model is a scalar diffusion

    dX_t = S(theta, X_t) dt + eps dW_t,   X_0 = x0,  0 <= t <= T,

whose drift S(theta, x) = a |x - theta|^kappa + h(x) is continuous but not
differentiable at x = theta (a cusp with exponent kappa in (0, 1/2)).  As
eps -> 0 the observation converges to the deterministic flow x_t solving
dx/dt = S(theta, x).  This module owns the model instance, its validity
checks, the ODE and SDE integrators, the time-change identity
int_{x0}^{x_t} dy/S(theta, y) = t, and the occupation-time helpers.

The cusp term is always evaluated exactly as written; no smoothing is
applied anywhere (smoothing would change the singularity class).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .errors import (
    ConfigError,
    DomainError,
    GridMismatchError,
    InternalConsistencyError,
    ModelFunctionError,
)
from .rng import NoiseStream

MAX_ODE_STEPS = 10 ** 6

PATH_KINDS = ("observation", "deterministic", "wiener")


def abs_pow(x, kappa: float):
    """|x|^kappa with cheap exact paths for the quarter and half powers.

    The estimator hot loops evaluate this billions of times for the
    reference exponent kappa = 1/4, where two hardware square roots beat a
    general pow by a wide margin.  All branches agree with np.abs(x)**kappa.
    """
    if kappa == 0.25:
        return np.sqrt(np.sqrt(np.abs(x)))
    if kappa == 0.5:
        return np.sqrt(np.abs(x))
    return np.abs(x) ** kappa


# ---------------------------------------------------------------------------
# h catalog
# ---------------------------------------------------------------------------

_H_CATALOG = ("const", "logistic_bounded", "affine_clamped")


@dataclass(frozen=True)
class HFunction:
    """Named member of the bounded-drift-component catalog.

    Every member is bounded, has a bounded derivative and is separated from
    zero, with machine-checkable bounds ``lower_bound`` (b) and
    ``deriv_bound`` (H1).  Instances carry only (name, params) so they
    serialize and pickle cleanly.
    """

    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in _H_CATALOG:
            raise ConfigError(f"unknown h function {self.name!r}; catalog: {_H_CATALOG}")
        p = self.params
        if self.name == "const":
            if len(p) != 1 or p[0] <= 0:
                raise ConfigError("const h needs one positive parameter c")
        elif self.name == "logistic_bounded":
            if len(p) != 2 or p[0] <= 0 or p[1] < 0:
                raise ConfigError("logistic_bounded h needs params (c > 0, d >= 0)")
        elif self.name == "affine_clamped":
            if len(p) != 4:
                raise ConfigError("affine_clamped h needs params (c, d, lo, hi)")
            c, d, lo, hi = p
            if lo <= 0 or hi < lo:
                raise ConfigError("affine_clamped h needs 0 < lo <= hi")

    def __call__(self, x):
        p = self.params
        if self.name == "const":
            return np.full_like(np.asarray(x, dtype=float), p[0]) if np.ndim(x) else p[0]
        if self.name == "logistic_bounded":
            c, d = p
            return c + d / (1.0 + np.asarray(x, dtype=float) ** 2)
        c, d, lo, hi = p
        return np.clip(c + d * np.asarray(x, dtype=float), lo, hi)

    def deriv(self, x):
        p = self.params
        xa = np.asarray(x, dtype=float)
        if self.name == "const":
            return np.zeros_like(xa) if np.ndim(x) else 0.0
        if self.name == "logistic_bounded":
            c, d = p
            return -2.0 * d * xa / (1.0 + xa ** 2) ** 2
        c, d, lo, hi = p
        inside = (c + d * xa > lo) & (c + d * xa < hi)
        return np.where(inside, d, 0.0)

    @property
    def lower_bound(self) -> float:
        """Largest b with h(x) >= b for all x."""
        p = self.params
        if self.name == "const":
            return p[0]
        if self.name == "logistic_bounded":
            return p[0]
        return p[2]

    @property
    def deriv_bound(self) -> float:
        """Smallest H1 with |h'(x)| <= H1 for all x."""
        p = self.params
        if self.name == "const":
            return 0.0
        if self.name == "logistic_bounded":
            # sup of 2|x|/(1+x^2)^2 is 3*sqrt(3)/8 at x = 1/sqrt(3)
            return p[1] * 3.0 * math.sqrt(3.0) / 8.0
        return abs(p[1])

    def is_constant(self) -> bool:
        return self.name == "const"

    def to_dict(self) -> dict:
        return {"name": self.name, "params": list(self.params)}


def make_h(name: str, *params: float) -> HFunction:
    return HFunction(name, tuple(float(v) for v in params))


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass
class Path:
    """Discretized trajectory on a uniform grid over [0, T]."""

    times: np.ndarray
    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in PATH_KINDS:
            raise ConfigError(f"unknown path kind {self.kind!r}")
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise GridMismatchError("times and values must be 1-d arrays of equal length")
        if len(self.times) < 2:
            raise GridMismatchError("a path needs at least two grid nodes")
        if self.times[0] != 0.0:
            raise GridMismatchError("path grid must start at t = 0")
        steps = np.diff(self.times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0) or steps[0] <= 0:
            raise GridMismatchError("path grid must be uniform and increasing")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def same_grid(self, other: "Path") -> bool:
        return self.times.shape == other.times.shape and bool(
            np.array_equal(self.times, other.times)
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([f"{t:.17g}", f"{v:.17g}"])

    @classmethod
    def from_csv(cls, path, kind: str) -> "Path":
        times, values = [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["t", "value"]:
                raise ConfigError(f"unexpected path CSV header {header}")
            for row in r:
                times.append(float(row[0]))
                values.append(float(row[1]))
        return cls(np.array(times), np.array(values), kind)


def _require_same_grid(a: Path, b: Path) -> None:
    if not a.same_grid(b):
        raise GridMismatchError("paths are on different time grids")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CuspModel:
    """Problem instance (a, kappa, h, x0, T, Theta) with a valid cusp drift.

    Construction enforces the hard structural constraints: kappa strictly
    inside (0, 1/2), a > 0, theta_lo > x0 and theta_hi below the terminal
    ODE value at both Theta endpoints.  ``test_mode=True`` relaxes only
    a >= 0 so the test suite can use closed-form linear-drift oracles; such
    models are always rejected by :func:`validate_model`.
    """

    a: float
    kappa: float
    h: HFunction
    x0: float
    T: float
    theta_lo: float
    theta_hi: float
    test_mode: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ConfigError(f"kappa must lie strictly inside (0, 1/2), got {self.kappa}")
        if self.test_mode:
            if self.a < 0:
                raise ConfigError("cusp amplitude a must be >= 0 in test mode")
        elif self.a <= 0:
            raise ConfigError("cusp amplitude a must be positive")
        if self.T <= 0:
            raise ConfigError("horizon T must be positive")
        if not self.theta_lo < self.theta_hi:
            raise ConfigError("parameter interval requires theta_lo < theta_hi")
        if not self.theta_lo > self.x0:
            raise ConfigError("parameter interval must start above x0")
        # the embedding check needs x_T at both endpoints; 10^4 RK4 steps is
        # plenty for a go/no-go comparison
        for th in (self.theta_lo, self.theta_hi):
            xT = _ode_values_matrix(self, np.array([th]), 10_000)[0, -1]
            if not self.theta_hi < xT:
                raise ConfigError(
                    f"parameter interval not embedded: theta_hi={self.theta_hi} is not below "
                    f"x_T(theta={th}) = {xT:.6g}"
                )

    @property
    def H(self) -> float:
        """Hurst exponent of the limiting fractional Brownian motion."""
        return self.kappa + 0.5

    @property
    def theta_span(self) -> float:
        return self.theta_hi - self.theta_lo

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "kappa": self.kappa,
            "h": self.h.to_dict(),
            "x0": self.x0,
            "T": self.T,
            "theta_lo": self.theta_lo,
            "theta_hi": self.theta_hi,
        }

    @classmethod
    def from_dict(cls, d: dict, test_mode: bool = False) -> "CuspModel":
        h = d["h"]
        return cls(
            a=float(d["a"]),
            kappa=float(d["kappa"]),
            h=make_h(h["name"], *h.get("params", [])),
            x0=float(d["x0"]),
            T=float(d["T"]),
            theta_lo=float(d["theta_lo"]),
            theta_hi=float(d["theta_hi"]),
            test_mode=test_mode,
        )


def drift(model: CuspModel, theta, x):
    """S(theta, x) = a |x - theta|^kappa + h(x), exact at the cusp point."""
    return model.a * abs_pow(np.asarray(x) - theta, model.kappa) + model.h(x)


# ---------------------------------------------------------------------------
# Deterministic flow
# ---------------------------------------------------------------------------


def _ode_values_matrix(model: CuspModel, thetas: np.ndarray, n_steps: int) -> np.ndarray:
    """RK4 solutions of dx/dt = S(theta, x) for a vector of thetas.

    Returns an array of shape (len(thetas), n_steps + 1).  The drift is
    evaluated exactly at every stage; the cusp is integrable so the fixed
    step size keeps the crossing error at O(dt^(1+kappa)).
    """
    thetas = np.asarray(thetas, dtype=float)
    dt = model.T / n_steps
    out = np.empty((len(thetas), n_steps + 1))
    x = np.full(len(thetas), float(model.x0))
    out[:, 0] = x
    for k in range(n_steps):
        k1 = drift(model, thetas, x)
        k2 = drift(model, thetas, x + 0.5 * dt * k1)
        k3 = drift(model, thetas, x + 0.5 * dt * k2)
        k4 = drift(model, thetas, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, k + 1] = x
    return out


def _ode_values_euler(model: CuspModel, theta: float, n_steps: int) -> np.ndarray:
    dt = model.T / n_steps
    out = np.empty(n_steps + 1)
    x = float(model.x0)
    out[0] = x
    for k in range(n_steps):
        x = x + drift(model, theta, x) * dt
        out[k + 1] = x
    return out


def solve_limit_ode(model: CuspModel, theta: float, n_steps: int, method: str = "rk4") -> Path:
    """Deterministic limit path x_t on a uniform grid.

    ``method="rk4"`` is the reference integrator; ``method="euler"`` exists
    so the zero-noise SDE reduction can be compared bitwise.  The returned
    path must be strictly increasing (the drift is bounded below by b > 0); a
    non-monotone result signals an invalid model and raises.
    """
    if n_steps < 100:
        raise ConfigError("solve_limit_ode needs n_steps >= 100")
    if not model.theta_lo <= theta <= model.theta_hi:
        raise DomainError(f"theta={theta} outside closure of Theta")
    if method == "rk4":
        values = _ode_values_matrix(model, np.array([theta]), n_steps)[0]
    elif method == "euler":
        values = _ode_values_euler(model, theta, n_steps)
    else:
        raise ConfigError(f"unknown ODE method {method!r}")
    if not np.all(np.diff(values) > 0):
        raise InternalConsistencyError(
            "limit ODE path is not strictly increasing; the model violates "
            "the positive-drift condition"
        )
    times = np.linspace(0.0, model.T, n_steps + 1)
    return Path(times, values, "deterministic")


def time_of_level(model: CuspModel, theta: float, x: float) -> float:
    """Time t(x) at which the limit flow reaches level x.

    Uses the time-change identity t = int_{x0}^{x} dy / S(theta, y); the
    integrand is bounded (S >= b > 0) with a cusp in its derivative at
    y = theta, so the quadrature interval is split there.
    """
    if x < model.x0:
        raise DomainError(f"level x={x} is below the start point x0={model.x0}")
    if x == model.x0:
        return 0.0
    integrand = lambda y: 1.0 / drift(model, theta, y)
    pieces = []
    if model.x0 < theta < x:
        pieces.append((model.x0, theta))
        pieces.append((theta, x))
    else:
        pieces.append((model.x0, x))
    total = 0.0
    for lo, hi in pieces:
        val, _ = quad(integrand, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-12)
        total += val
    # grid terminal nodes may overshoot x_T by integrator error, so the
    # reachability guard carries a small relative slack
    if total > model.T * (1.0 + 1e-6):
        raise DomainError(
            f"level x={x} is not reached within the horizon (t(x)={total:.6g} > T={model.T})"
        )
    return total


# ---------------------------------------------------------------------------
# Stochastic paths
# ---------------------------------------------------------------------------


def simulate_wiener(stream: NoiseStream, n_steps: int, T: float) -> Path:
    """Standard Wiener path from cumulative Gaussian increments."""
    if n_steps < 1:
        raise ConfigError("simulate_wiener needs n_steps >= 1")
    values = wiener_values(stream, n_steps, T)
    times = np.linspace(0.0, T, n_steps + 1)
    return Path(times, values, "wiener")


def wiener_values(stream: NoiseStream, n_steps: int, T: float) -> np.ndarray:
    rng = stream.generator()
    dt = T / n_steps
    incr = rng.standard_normal(n_steps) * math.sqrt(dt)
    values = np.empty(n_steps + 1)
    values[0] = 0.0
    np.cumsum(incr, out=values[1:])
    return values


def _em_values(model: CuspModel, theta: float, eps: float, dW: np.ndarray, dt: float) -> np.ndarray:
    """Euler-Maruyama on increment rows dW of shape (..., n).

    With eps = 0 the noise term is skipped entirely so the output is
    bit-identical to the explicit-Euler ODE solution on the same grid.
    """
    dW = np.atleast_2d(dW)
    n = dW.shape[1]
    out = np.empty((dW.shape[0], n + 1))
    x = np.full(dW.shape[0], float(model.x0))
    out[:, 0] = x
    if eps == 0.0:
        for k in range(n):
            x = x + drift(model, theta, x) * dt
            out[:, k + 1] = x
    else:
        for k in range(n):
            x = x + drift(model, theta, x) * dt + eps * dW[:, k]
            out[:, k + 1] = x
    return out


def simulate_sde(model: CuspModel, theta: float, eps: float, wiener: Path) -> Path:
    """Euler-Maruyama observation path driven by a given Wiener path.

    The drift is only Hoelder at the cusp but the scheme is applied as
    written; the step-size policy (dt <= eps^2) lives in the harness.
    """
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    if wiener.kind != "wiener":
        raise GridMismatchError("simulate_sde needs a wiener-kind driving path")
    dW = np.diff(wiener.values)
    values = _em_values(model, theta, eps, dW, wiener.dt)[0]
    return Path(wiener.times.copy(), values, "observation")


def sup_deviation(observed: Path, deterministic: Path) -> float:
    """max_t |X_t - x_t| over the shared grid."""
    _require_same_grid(observed, deterministic)
    return float(np.max(np.abs(observed.values - deterministic.values)))


def occupation_integral(observed: Path, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """Trapezoidal approximation of int_0^T g(X_t) dt.

    As eps -> 0 this converges to int g(x) / S(theta0, x) dx over the
    reachable range (the occupation-time limit), which the harness uses as
    the comparison target.
    """
    gv = np.asarray(g(observed.values), dtype=float)
    if gv.shape != observed.values.shape:
        gv = np.broadcast_to(gv, observed.values.shape)
    if not np.all(np.isfinite(gv)):
        raise ModelFunctionError("g returned non-finite values on the path range")
    return float(np.trapezoid(gv, dx=observed.dt))


def occupation_limit(model: CuspModel, theta0: float,
                     g: Callable[[float], float], n_steps: int = 20_000) -> float:
    """int g(x) / S(theta0, x) dx over [x0, x_T(theta0)] by quadrature."""
    xT = float(_ode_values_matrix(model, np.array([theta0]), n_steps)[0, -1])
    integrand = lambda y: g(y) / drift(model, theta0, y)
    pieces = [(model.x0, theta0), (theta0, xT)] if model.x0 < theta0 < xT else [(model.x0, xT)]
    return sum(quad(integrand, lo, hi, limit=200)[0] for lo, hi in pieces)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def validate_model(
    model: CuspModel,
    b: float,
    H1: float,
    margin: float = 1.0,
    n_samples: int = 2001,
    dense_theta_check: bool = False,
) -> ValidationReport:
    """Check the drift conditions for a model against claimed bounds b and H1.

    Samples the state range [x0, x_T(theta_hi) + margin] for the h bounds
    and the polynomial growth bound, and solves the limit ODE at the Theta
    endpoints (optionally on a dense theta grid) for the embedding
    condition theta_hi < inf_theta x_T(theta).  Returns the violated clause
    names in check order rather than raising.
    """
    violations = []
    if not 0.0 < model.kappa < 0.5:
        violations.append("kappa out of (0,1/2)")
    if model.a <= 0:
        violations.append("a not positive")

    xT_hi = float(_ode_values_matrix(model, np.array([model.theta_hi]), 20_000)[0, -1])
    xs = np.linspace(model.x0, xT_hi + margin, n_samples)
    hv = np.asarray(model.h(xs), dtype=float)
    if not np.all(np.isfinite(hv)):
        raise ModelFunctionError("h returned non-finite values on the sampled state range")
    dv = np.asarray(model.h.deriv(xs), dtype=float)
    if np.min(hv) < b:
        violations.append("h not separated from zero")
    if np.max(np.abs(dv)) > H1 * (1.0 + 1e-12):
        violations.append("h derivative bound exceeded")

    if not model.theta_lo > model.x0:
        violations.append("theta_lo not above x0")
    thetas = (
        np.linspace(model.theta_lo, model.theta_hi, 17)
        if dense_theta_check
        else np.array([model.theta_lo, model.theta_hi])
    )
    xT = _ode_values_matrix(model, thetas, 20_000)[:, -1]
    if not model.theta_hi < float(np.min(xT)):
        violations.append("theta_hi not below inf x_T(theta)")

    # growth bound |S| <= L (1 + |x|^kappa) with L implied by the structure:
    # a|x-theta|^kappa <= a(|x|^kappa + |theta|^kappa) and h bounded
    theta_max = max(abs(model.theta_lo), abs(model.theta_hi))
    L = model.a * (1.0 + theta_max ** model.kappa) + float(np.max(np.abs(hv)))
    for th in (model.theta_lo, model.theta_hi):
        S = np.abs(drift(model, th, xs))
        if np.max(S - L * (1.0 + np.abs(xs) ** model.kappa)) > 1e-12:
            violations.append("growth bound exceeded")
            break

    return ValidationReport(ok=not violations, violations=violations)
