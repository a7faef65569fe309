"""Likelihood-ratio functionals: exact identities, curves, limit constants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from cusploc import (
    ConfigError,
    CuspModel,
    DomainError,
    NoiseStream,
    cusp_energy,
    limit_constants,
    log_likelihood_ratio,
    make_h,
    make_prior,
    normalized_curve,
    simulate_sde,
    simulate_wiener,
)
from cusploc.harness import ExperimentConfig, _simulate_rows
from cusploc.likelihood import curve_logz


# independent high-precision values of J(kappa), computed with mpmath
# tanh-sinh quadrature at 30 digits (cross-checked against the scipy route
# at two tail cutoffs M = 1e6 and 1e7)
J_ORACLE = {0.1: 0.0845465998468, 0.25: 0.51198858466, 0.4: 2.1000001397}


def _obs(ref_model, eps, n, seed=1):
    w = simulate_wiener(NoiseStream(seed, 0), n, ref_model.T)
    return simulate_sde(ref_model, 1.0, eps, w)


# ---------------------------------------------------------------------------
# log_likelihood_ratio identities
# ---------------------------------------------------------------------------


def test_llr_zero_at_identical_thetas(ref_model):
    x = _obs(ref_model, 0.05, 600)
    assert log_likelihood_ratio(x, ref_model, 0.9, 0.9, 0.05) == 0.0


def test_llr_antisymmetry_exact(ref_model):
    x = _obs(ref_model, 0.05, 600)
    lab = log_likelihood_ratio(x, ref_model, 0.8, 1.2, 0.05)
    lba = log_likelihood_ratio(x, ref_model, 1.2, 0.8, 0.05)
    assert lab == -lba


@settings(max_examples=20, deadline=None)
@given(
    t1=st.floats(0.55, 1.45), t2=st.floats(0.55, 1.45), t3=st.floats(0.55, 1.45),
)
def test_llr_chain_identity(ref_model, t1, t2, t3):
    # telescoping in exact arithmetic; floats keep it to rounding error
    x = _obs(ref_model, 0.05, 400)
    l13 = log_likelihood_ratio(x, ref_model, t1, t3, 0.05)
    l12 = log_likelihood_ratio(x, ref_model, t1, t2, 0.05)
    l23 = log_likelihood_ratio(x, ref_model, t2, t3, 0.05)
    assert l13 == pytest.approx(l12 + l23, rel=1e-10, abs=1e-8)


def test_llr_rejects_bad_inputs(ref_model):
    x = _obs(ref_model, 0.05, 300)
    with pytest.raises(ConfigError):
        log_likelihood_ratio(x, ref_model, 0.9, 1.0, 0.0)
    with pytest.raises(DomainError):
        log_likelihood_ratio(x, ref_model, 0.4, 1.0, 0.05)


def test_llr_true_parameter_dominates(ref_model):
    # at eps = 0.01 the true theta0 beats theta0 + 0.1 nearly always
    eps = 0.01
    cfg = ExperimentConfig(
        model=ref_model, theta0=1.0, eps_list=(eps,), n_replicates=500,
        prior=make_prior("uniform", 0.5, 1.5), out_dir="/tmp/unused",
    )
    n = cfg.n_steps(eps)
    dt = ref_model.T / n
    wins = 0
    done = 0
    while done < 500:
        hi = min(done + 250, 500)
        X, _, _, _ = _simulate_rows(cfg, eps, 0, range(done, hi))
        for i in range(hi - done):
            v = curve_logz(X[i], ref_model, np.array([1.0]), 1.1, eps, dt)[0]
            wins += int(v > 0)
        done = hi
    assert wins / 500 >= 0.99


# ---------------------------------------------------------------------------
# normalized curves
# ---------------------------------------------------------------------------


def test_curve_anchor_and_shape(ref_model):
    x = _obs(ref_model, 0.05, 800)
    u = np.linspace(-2, 2, 9)
    curve = normalized_curve(x, ref_model, 1.0, 0.05, u)
    assert curve.logZ[4] == 0.0
    assert curve.scale == "u_units"
    assert len(curve.thetas) == 9
    assert np.all(np.isfinite(curve.logZ))


def test_curve_rejects_grid_escaping_theta(ref_model):
    x = _obs(ref_model, 0.1, 300)
    # eps^(1/H) = 0.1^(4/3) ~ 0.0464, so u = 11 maps beyond theta_hi = 1.5
    with pytest.raises(DomainError):
        normalized_curve(x, ref_model, 1.0, 0.1, np.array([0.0, 11.0]))


def test_curve_phi_scaling(ref_model):
    x = _obs(ref_model, 0.05, 800)
    c = limit_constants(ref_model, 1.0)
    plain = normalized_curve(x, ref_model, 1.0, 0.05, np.array([0.0, 1.0]))
    phi = normalized_curve(x, ref_model, 1.0, 0.05, np.array([0.0, 1.0]), use_phi=True)
    assert phi.scale_factor == pytest.approx(plain.scale_factor / c.gamma, rel=1e-12)


def test_curve_moments_match_finite_eps_quadrature(ref_model):
    """Mean/variance of ln Z_eps(1) vs the exact deterministic-path values.

    The finite-eps variance of ln Z_eps(u) is the squared drift-difference
    integral along the limit path; computing it by direct quadrature gives
    an oracle that is independent of the sampled paths.
    """
    eps, n_rep = 0.02, 400
    m = ref_model
    d = eps ** (1.0 / m.H)
    # J_eps = int (|v-1|^k - |v|^k)^2 / S(theta0, theta0 + v d) dv over the
    # reachable v-range (v = (x - theta0) / d)
    x_T = 6.324545127012
    lo, hi = (m.x0 - 1.0) / d, (x_T - 1.0) / d
    f = lambda v: (np.abs(v - 1.0) ** m.kappa - np.abs(v) ** m.kappa) ** 2 / (
        m.a * np.abs(v) ** m.kappa * d ** m.kappa + 1.0)
    jeps = sum(
        quad(f, a, b, limit=400)[0]
        for a, b in [(lo, -2.0), (-2.0, 0.0), (0.0, 1.0), (1.0, 3.0), (3.0, hi)]
    )
    cfg = ExperimentConfig(
        model=m, theta0=1.0, eps_list=(eps,), n_replicates=n_rep,
        prior=make_prior("uniform", 0.5, 1.5), out_dir="/tmp/unused",
    )
    nst = cfg.n_steps(eps)
    dt = m.T / nst
    theta_u = 1.0 + d
    vals = np.empty(n_rep)
    done = 0
    while done < n_rep:
        hi_i = min(done + 200, n_rep)
        X, _, _, _ = _simulate_rows(cfg, eps, 0, range(done, hi_i))
        for i in range(hi_i - done):
            vals[done + i] = curve_logz(X[i], m, np.array([theta_u]), 1.0, eps, dt)[0]
        done = hi_i
    se_mean = vals.std(ddof=1) / math.sqrt(n_rep)
    se_var = vals.var(ddof=1) * math.sqrt(2.0 / (n_rep - 1))
    assert abs(vals.mean() - (-0.5 * jeps)) < 4.0 * se_mean + 0.02 * jeps
    assert abs(vals.var(ddof=1) - jeps) < 4.0 * se_var + 0.03 * jeps


def test_curve_csv_round_trip(tmp_path, ref_model):
    import csv as csvmod
    import json

    x = _obs(ref_model, 0.05, 400)
    u = np.linspace(-1, 1, 5)
    curve = normalized_curve(x, ref_model, 1.0, 0.05, u)
    f = tmp_path / "curve.csv"
    curve.to_csv(f)
    with open(f) as fh:
        rows = list(csvmod.reader(fh))
    assert rows[0] == ["u", "logZ"]
    assert len(rows) == 6
    sidecar = json.loads((tmp_path / "curve.csv.json").read_text())
    assert sidecar["scale"] == "u_units"
    assert sidecar["eps"] == 0.05
    assert sidecar["gamma_sq"] == pytest.approx(0.5119885847, rel=1e-6)


# ---------------------------------------------------------------------------
# limit constants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kappa", [0.1, 0.25, 0.4])
def test_cusp_energy_vs_oracle(kappa):
    assert cusp_energy(kappa) == pytest.approx(J_ORACLE[kappa], rel=1e-6)


def test_cusp_energy_divergence_guard():
    with pytest.raises(DomainError):
        cusp_energy(0.5)


def test_limit_constants_scaling_in_a():
    h = make_h("const", 1.0)
    base = CuspModel(a=1.0, kappa=0.25, h=h, x0=0.0, T=3.0, theta_lo=0.5, theta_hi=1.5)
    doubled = CuspModel(a=2.0, kappa=0.25, h=h, x0=0.0, T=3.0, theta_lo=0.5, theta_hi=1.5)
    c1 = limit_constants(base, 1.0)
    c2 = limit_constants(doubled, 1.0)
    assert c2.gamma_sq == 4.0 * c1.gamma_sq


def test_limit_constants_scaling_in_h():
    base = CuspModel(a=1.0, kappa=0.25, h=make_h("const", 1.0), x0=0.0, T=3.0,
                     theta_lo=0.5, theta_hi=1.5)
    doubled = CuspModel(a=1.0, kappa=0.25, h=make_h("const", 2.0), x0=0.0, T=3.0,
                        theta_lo=0.5, theta_hi=1.5)
    c1 = limit_constants(base, 1.0)
    c2 = limit_constants(doubled, 1.0)
    assert c2.gamma_sq == c1.gamma_sq / 2.0


def test_limit_constants_gamma_relation(ref_model):
    c = limit_constants(ref_model, 1.0)
    assert c.gamma == pytest.approx(c.gamma_sq ** (1.0 / (2.0 * c.H)), rel=1e-12)
    assert c.H == 0.75
