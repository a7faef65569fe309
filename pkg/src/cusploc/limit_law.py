"""Simulation of the limiting objects: fBm, Z(u), u_hat and u_tilde.

The rescaled estimation errors converge to functionals of

    ln Z(u) = W^H(u) - |u|^(2H) / 2,

where W^H is two-sided fractional Brownian motion with Hurst parameter
H = kappa + 1/2: the MLE error law is that of the argmax u_hat of Z, the
Bayes error law that of u_tilde = int u Z du / int Z du, both divided by
the problem constant gamma.  Sampling is exact: the covariance

    C(s, t) = (|s|^(2H) + |t|^(2H) - |s - t|^(2H)) / 2

is factorized once per grid (dense Cholesky; grids are capped at 8192
nodes so exactness is affordable) and W^H(0) = 0 is pinned by leaving the
origin out of the factorization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, GridTooSmallError, NumericalError
from .likelihood import LimitConstants
from .rng import NoiseStream

MAX_GRID_NODES = 8192
EDGE_FRACTION = 0.1      # outer share of the grid counted as "edge"
EDGE_MASS_FLAG = 1e-3    # samples with more edge mass are truncation-suspect
SUSPECT_BUDGET = 0.05

_CHOL_CACHE: dict = {}


@dataclass
class FbmSample:
    """One two-sided fBm realization on a symmetric uniform grid."""

    H: float
    grid: np.ndarray
    values: np.ndarray

    @property
    def du(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def U(self) -> float:
        return float(self.grid[-1])


@dataclass
class LimitVariables:
    u_hat: float
    u_tilde: float
    edge_mass: float
    truncation_suspect: bool
    tie_flag: bool
    U: float
    du: float


@dataclass
class MomentEstimate:
    """Monte Carlo moment of |u_hat|^p and |u_tilde|^p with standard errors."""

    H: float
    p: float
    n_samples: int
    U: float
    n_per_side: int
    u_hat_moment: float
    u_hat_se: float
    u_tilde_moment: float
    u_tilde_se: float
    n_suspect: int


def _symmetric_grid(U: float, n_per_side: int) -> np.ndarray:
    du = U / n_per_side
    return np.concatenate([
        np.arange(-n_per_side, 0, dtype=float) * du,
        [0.0],
        np.arange(1, n_per_side + 1, dtype=float) * du,
    ])


def _cholesky_factor(H: float, U: float, n_per_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower factor of the fBm covariance on the grid minus the origin."""
    key = (H, U, n_per_side)
    if key in _CHOL_CACHE:
        return _CHOL_CACHE[key]
    grid = _symmetric_grid(U, n_per_side)
    nz = np.concatenate([grid[:n_per_side], grid[n_per_side + 1:]])
    g = np.abs(nz)
    C = 0.5 * (g[:, None] ** (2 * H) + g[None, :] ** (2 * H)
               - np.abs(nz[:, None] - nz[None, :]) ** (2 * H))
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * float(np.max(np.diag(C)))
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(len(C)))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"fBm covariance factorization failed even with jitter {jitter:.3e}"
            ) from exc
    _CHOL_CACHE[key] = (grid, L)
    return grid, L


def sample_fbm_batch(H: float, U: float, n_per_side: int,
                     streams: Sequence[NoiseStream]) -> tuple[np.ndarray, np.ndarray]:
    """fBm values for many streams at once; rows match per-stream sampling.

    Row i is a deterministic function of streams[i] alone (each stream
    contributes its own Gaussian column), so batching never changes the
    samples.  Returns (grid, values) with values of shape (len(streams),
    2 n_per_side + 1) and the origin column exactly zero.
    """
    if not 0.5 <= H < 1.0:
        raise ConfigError("H must lie in [1/2, 1)")
    if n_per_side < 8:
        raise ConfigError("n_per_side must be >= 8")
    if 2 * n_per_side + 1 > MAX_GRID_NODES:
        raise ConfigError(f"grid of {2 * n_per_side + 1} nodes exceeds cap {MAX_GRID_NODES}")
    if U <= 0:
        raise ConfigError("U must be positive")
    grid, L = _cholesky_factor(H, U, n_per_side)
    m = 2 * n_per_side
    Z = np.empty((m, len(streams)))
    for i, s in enumerate(streams):
        Z[:, i] = s.generator().standard_normal(m)
    V = (L @ Z).T
    values = np.concatenate(
        [V[:, :n_per_side], np.zeros((len(streams), 1)), V[:, n_per_side:]], axis=1
    )
    return grid, values


def sample_fbm(H: float, U: float, n_per_side: int, stream: NoiseStream) -> FbmSample:
    """One exact two-sided fBm sample, deterministic in the stream."""
    grid, values = sample_fbm_batch(H, U, n_per_side, [stream])
    return FbmSample(H=H, grid=grid, values=values[0])


def limit_z(sample: FbmSample) -> np.ndarray:
    """ln Z(u) = W^H(u) - |u|^(2H)/2 on the sample grid; ln Z(0) = 0."""
    return sample.values - 0.5 * np.abs(sample.grid) ** (2 * sample.H)


def _limit_variables_from_logz(grid: np.ndarray, lnz: np.ndarray) -> LimitVariables:
    du = float(grid[1] - grid[0])
    m = float(np.max(lnz))
    ties = np.flatnonzero(lnz == m)
    u_hat = float(grid[ties[0]])
    w = np.exp(lnz - m)
    trap = np.full(len(grid), du)
    trap[0] = trap[-1] = 0.5 * du
    den = float(np.sum(w * trap))
    u_tilde = float(np.sum(w * trap * grid) / den)
    edge = max(1, int(EDGE_FRACTION * len(grid) / 2))
    edge_mass = float((np.sum(w[:edge] * trap[:edge]) + np.sum(w[-edge:] * trap[-edge:])) / den)
    return LimitVariables(
        u_hat=u_hat,
        u_tilde=u_tilde,
        edge_mass=edge_mass,
        truncation_suspect=edge_mass > EDGE_MASS_FLAG,
        tie_flag=len(ties) > 1,
        U=float(grid[-1]),
        du=du,
    )


def sample_limit_variables(sample: FbmSample) -> LimitVariables:
    """Argmax and normalized-mean functionals of one Z realization.

    u_hat takes the smallest grid index on ties (flagged; ties are a grid
    artifact).  u_tilde truncates the line integrals to the grid, so the
    share of Z-mass in the outer 10 percent of the grid is reported and
    samples above 1e-3 are flagged truncation-suspect.
    """
    return _limit_variables_from_logz(sample.grid, limit_z(sample))


def limit_variables_batch(H: float, U: float, n_per_side: int,
                          streams: Sequence[NoiseStream]) -> list[LimitVariables]:
    grid, values = sample_fbm_batch(H, U, n_per_side, streams)
    pen = 0.5 * np.abs(grid) ** (2 * H)
    return [_limit_variables_from_logz(grid, v - pen) for v in values]


def limit_moments(H: float, p: float, n_samples: int, U: float, n_per_side: int,
                  stream: NoiseStream) -> MomentEstimate:
    """Monte Carlo E|u_hat|^p and E|u_tilde|^p with standard errors.

    Truncation-suspect samples are counted separately; if they exceed 5
    percent of the draws the grid is too small for trustworthy moments and
    the call fails, advising a larger U.
    """
    if n_samples < 100:
        raise ConfigError("limit_moments needs n_samples >= 100")
    if p <= 0:
        raise ConfigError("moment order p must be positive")
    streams = [stream.child(i) for i in range(n_samples)]
    out = limit_variables_batch(H, U, n_per_side, streams)
    uh = np.array([v.u_hat for v in out])
    ut = np.array([v.u_tilde for v in out])
    n_suspect = int(sum(v.truncation_suspect for v in out))
    if n_suspect > SUSPECT_BUDGET * n_samples:
        raise GridTooSmallError(
            f"{n_suspect}/{n_samples} samples are truncation-suspect; "
            f"increase the grid half-width U (currently {U})"
        )
    ah, at = np.abs(uh) ** p, np.abs(ut) ** p
    return MomentEstimate(
        H=H, p=p, n_samples=n_samples, U=U, n_per_side=n_per_side,
        u_hat_moment=float(np.mean(ah)),
        u_hat_se=float(np.std(ah, ddof=1) / np.sqrt(n_samples)),
        u_tilde_moment=float(np.mean(at)),
        u_tilde_se=float(np.std(at, ddof=1) / np.sqrt(n_samples)),
        n_suspect=n_suspect,
    )


def standardize(v: LimitVariables, constants: LimitConstants) -> tuple[float, float]:
    """(u_hat / gamma, u_tilde / gamma): the limit laws of the normalized errors."""
    return v.u_hat / constants.gamma, v.u_tilde / constants.gamma
