"""Model-level behavior: drift, validation, ODE, time change, SDE paths."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cusploc import (
    ConfigError,
    CuspModel,
    DomainError,
    GridMismatchError,
    InternalConsistencyError,
    NoiseStream,
    Path,
    drift,
    make_h,
    occupation_integral,
    simulate_sde,
    simulate_wiener,
    solve_limit_ode,
    sup_deviation,
    time_of_level,
    validate_model,
)
from cusploc.model import HFunction, abs_pow

# frozen oracles for the reference model (a=1, kappa=1/4, h=1, x0=0, T=3,
# theta=1), precomputed by inverting the time-change identity with adaptive
# quadrature at 1e-13 tolerance and cross-checked against a 1e6-step RK4 run
X_T_ORACLE = 6.324545127012
T0_ORACLE = 0.560744611094
INT_X_DT_ORACLE = 8.793754992545


# ---------------------------------------------------------------------------
# drift and h catalog
# ---------------------------------------------------------------------------


def test_drift_vanishes_at_cusp(ref_model):
    assert drift(ref_model, 1.0, 1.0) == 1.0


def test_drift_unit_offset(ref_model):
    assert drift(ref_model, 1.0, 2.0) == 2.0


def test_drift_small_offset_arithmetic():
    m = CuspModel(a=2.0, kappa=0.25, h=make_h("const", 1.0), x0=0.0, T=3.0,
                  theta_lo=0.5, theta_hi=1.5)
    expected = 1.0 + 2.0 * 1e-4 ** 0.25  # = 1.2
    assert drift(m, 1.0, 1.0001) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.2, rel=1e-12)


@given(st.floats(-50, 50), st.sampled_from([0.1, 0.25, 0.3, 0.4, 0.5]))
def test_abs_pow_matches_power(x, kappa):
    assert abs_pow(x, kappa) == pytest.approx(abs(x) ** kappa, rel=1e-14, abs=1e-300)


def test_h_catalog_bounds():
    h = make_h("logistic_bounded", 0.5, 2.0)
    xs = np.linspace(-30, 30, 20001)
    assert np.min(h(xs)) >= h.lower_bound - 1e-12
    assert np.max(np.abs(h.deriv(xs))) <= h.deriv_bound + 1e-12
    hc = make_h("affine_clamped", 1.0, 0.25, 0.5, 3.0)
    assert np.min(hc(xs)) >= hc.lower_bound
    assert np.max(np.abs(hc.deriv(xs))) <= hc.deriv_bound


def test_h_catalog_rejects_bad_params():
    with pytest.raises(ConfigError):
        make_h("const", -1.0)
    with pytest.raises(ConfigError):
        make_h("nonsense", 1.0)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def test_validate_reference_model(ref_model):
    rep = validate_model(ref_model, b=1.0, H1=0.0)
    assert rep.ok and rep.violations == []


def test_validate_rejects_kappa_at_half():
    with pytest.raises(ConfigError):
        CuspModel(a=1.0, kappa=0.5, h=make_h("const", 1.0), x0=0.0, T=3.0,
                  theta_lo=0.5, theta_hi=1.5)


def test_validate_flags_kappa_out_of_range():
    # construction rejects kappa = 0.5 outright, so reach validate_model
    # through a bypassed instance to exercise its own clause
    m = CuspModel.__new__(CuspModel)
    for k, v in dict(a=1.0, kappa=0.5, h=make_h("const", 1.0), x0=0.0, T=3.0,
                     theta_lo=0.5, theta_hi=1.5, test_mode=True).items():
        object.__setattr__(m, k, v)
    rep = validate_model(m, b=1.0, H1=0.0)
    assert "kappa out of (0,1/2)" in rep.violations


def test_validate_flags_h_not_separated(ref_model):
    # h(x) = x is representable only by bypassing the catalog constructor
    bad_h = HFunction.__new__(HFunction)
    object.__setattr__(bad_h, "name", "affine_clamped")
    object.__setattr__(bad_h, "params", (0.0, 1.0, 1e-9, 1e9))
    m = CuspModel(a=1.0, kappa=0.25, h=bad_h, x0=0.0, T=3.0,
                  theta_lo=0.5, theta_hi=1.5)
    rep = validate_model(m, b=0.5, H1=1.0)
    assert not rep.ok
    assert "h not separated from zero" in rep.violations


def test_validate_flags_zero_amplitude():
    m = CuspModel(a=0.0, kappa=0.25, h=make_h("const", 1.0), x0=0.0, T=3.0,
                  theta_lo=0.5, theta_hi=1.5, test_mode=True)
    rep = validate_model(m, b=1.0, H1=0.0)
    assert not rep.ok
    assert "a not positive" in rep.violations


def test_embedding_check_fails_at_construction():
    # T too short: x_T barely clears theta_lo, never theta_hi
    with pytest.raises(ConfigError):
        CuspModel(a=1.0, kappa=0.25, h=make_h("const", 1.0), x0=0.0, T=0.5,
                  theta_lo=0.5, theta_hi=1.5)


# ---------------------------------------------------------------------------
# deterministic flow
# ---------------------------------------------------------------------------


def test_ode_linear_closed_form():
    m = CuspModel(a=0.0, kappa=0.25, h=make_h("const", 2.0), x0=0.0, T=3.0,
                  theta_lo=0.5, theta_hi=1.5, test_mode=True)
    path = solve_limit_ode(m, 1.0, n_steps=500)
    np.testing.assert_allclose(path.values, 2.0 * path.times, rtol=1e-12)


def test_ode_terminal_value_vs_oracle(ref_model):
    path = solve_limit_ode(ref_model, 1.0, n_steps=300_000)
    assert abs(path.values[-1] - X_T_ORACLE) < 1e-6


def test_ode_monotone_and_grid(ref_model):
    path = solve_limit_ode(ref_model, 1.0, n_steps=512)
    assert path.kind == "deterministic"
    assert np.all(np.diff(path.values) > 0)
    assert path.values[0] == ref_model.x0
    assert path.times[-1] == ref_model.T


def test_ode_nonmonotone_raises_internal_error():
    bad_h = HFunction.__new__(HFunction)
    object.__setattr__(bad_h, "name", "const")
    object.__setattr__(bad_h, "params", (-2.0,))
    m = CuspModel.__new__(CuspModel)
    object.__setattr__(m, "a", 0.0)
    object.__setattr__(m, "kappa", 0.25)
    object.__setattr__(m, "h", bad_h)
    object.__setattr__(m, "x0", 0.0)
    object.__setattr__(m, "T", 3.0)
    object.__setattr__(m, "theta_lo", 0.5)
    object.__setattr__(m, "theta_hi", 1.5)
    object.__setattr__(m, "test_mode", True)
    with pytest.raises(InternalConsistencyError):
        solve_limit_ode(m, 1.0, n_steps=200)


def test_time_change_round_trip(ref_model):
    path = solve_limit_ode(ref_model, 1.0, n_steps=20_000)
    for i in (1, 2_000, 7_000, 13_000, 20_000):
        t = time_of_level(ref_model, 1.0, path.values[i])
        assert abs(t - path.times[i]) < 1e-6


def test_time_of_level_examples(ref_model):
    m = CuspModel(a=0.0, kappa=0.25, h=make_h("const", 2.0), x0=0.0, T=3.0,
                  theta_lo=0.5, theta_hi=1.5, test_mode=True)
    assert time_of_level(m, 1.0, 2.0 * 1.3) == pytest.approx(1.3, abs=1e-10)
    assert time_of_level(ref_model, 1.0, ref_model.x0) == 0.0
    assert abs(time_of_level(ref_model, 1.0, 1.0) - T0_ORACLE) < 1e-8


def test_time_of_level_domain_errors(ref_model):
    with pytest.raises(DomainError):
        time_of_level(ref_model, 1.0, -0.5)
    with pytest.raises(DomainError):
        time_of_level(ref_model, 1.0, X_T_ORACLE + 1.0)


# ---------------------------------------------------------------------------
# Wiener and SDE paths
# ---------------------------------------------------------------------------


def test_wiener_determinism(stream):
    a = simulate_wiener(stream, 64, 3.0)
    b = simulate_wiener(NoiseStream(stream.master_seed, stream.replicate_index), 64, 3.0)
    assert np.array_equal(a.values, b.values)
    assert a.values[0] == 0.0


def test_wiener_statistics():
    # 1e5 replicates: terminal variance and disjoint-increment correlation
    T, n = 3.0, 2
    n_rep = 100_000
    wT = np.empty(n_rep)
    first = np.empty(n_rep)
    second = np.empty(n_rep)
    for r in range(n_rep):
        v = simulate_wiener(NoiseStream(77, r), n, T).values
        wT[r] = v[-1]
        first[r] = v[1] - v[0]
        second[r] = v[2] - v[1]
    band = 4.0 * math.sqrt(2.0 / n_rep) * T
    assert abs(wT.var(ddof=1) - T) < band
    corr = np.corrcoef(first, second)[0, 1]
    assert abs(corr) < 0.02


def test_sde_zero_noise_is_explicit_euler(ref_model, stream):
    w = simulate_wiener(stream, 400, ref_model.T)
    x = simulate_sde(ref_model, 1.0, 0.0, w)
    euler = solve_limit_ode(ref_model, 1.0, 400, method="euler")
    assert np.array_equal(x.values, euler.values)


def test_sde_grid_mismatch(ref_model, stream):
    path = solve_limit_ode(ref_model, 1.0, 400)
    with pytest.raises(GridMismatchError):
        simulate_sde(ref_model, 1.0, 0.1, path)  # not a wiener path


def test_sde_stays_in_reachable_band(ref_model):
    # eps = 0.01: every path inside [x0 - 1, x_T + 1]
    n = 1000
    for r in range(200):
        w = simulate_wiener(NoiseStream(3, r), n, ref_model.T)
        x = simulate_sde(ref_model, 1.0, 0.01, w)
        assert x.values.min() > ref_model.x0 - 1.0
        assert x.values.max() < X_T_ORACLE + 1.0


# ---------------------------------------------------------------------------
# deviation and occupation
# ---------------------------------------------------------------------------


def test_sup_deviation_trivials(ref_model):
    path = solve_limit_ode(ref_model, 1.0, 300)
    same = Path(path.times.copy(), path.values.copy(), "observation")
    assert sup_deviation(same, path) == 0.0
    bumped = path.values.copy()
    bumped[17] += 0.125
    assert sup_deviation(Path(path.times, bumped, "observation"), path) == 0.125
    short = solve_limit_ode(ref_model, 1.0, 200)
    with pytest.raises(GridMismatchError):
        sup_deviation(same, short)


def test_occupation_constant_gives_T(ref_model, stream):
    w = simulate_wiener(stream, 700, ref_model.T)
    x = simulate_sde(ref_model, 1.0, 0.05, w)
    assert occupation_integral(x, lambda v: np.ones_like(v)) == pytest.approx(3.0, rel=1e-12)


def test_occupation_identity_vs_quadrature(ref_model):
    path = solve_limit_ode(ref_model, 1.0, 200_000)
    obs = Path(path.times, path.values, "observation")
    val = occupation_integral(obs, lambda v: v)
    assert abs(val - INT_X_DT_ORACLE) < 1e-4


def test_occupation_window_density(ref_model):
    # indicator of (y-d, y+d) at small eps: occupation ~ 2d / S(theta0, y)
    y, d = 2.0, 0.05
    g = lambda v: ((v > y - d) & (v < y + d)).astype(float)
    n = 30_000
    vals = []
    for r in range(40):
        w = simulate_wiener(NoiseStream(11, r), n, ref_model.T)
        x = simulate_sde(ref_model, 1.0, 0.01, w)
        vals.append(occupation_integral(x, g))
    target = 2.0 * d / drift(ref_model, 1.0, y)
    assert np.mean(vals) == pytest.approx(target, rel=0.1)


# ---------------------------------------------------------------------------
# Path container
# ---------------------------------------------------------------------------


def test_path_csv_round_trip(tmp_path, ref_model):
    p = solve_limit_ode(ref_model, 1.0, 250)
    f = tmp_path / "p.csv"
    p.to_csv(f)
    q = Path.from_csv(f, "deterministic")
    assert np.array_equal(p.values, q.values)
    assert np.array_equal(p.times, q.times)


def test_path_rejects_nonuniform_grid():
    with pytest.raises(GridMismatchError):
        Path(np.array([0.0, 0.5, 0.7]), np.zeros(3), "wiener")


def test_stream_packing_is_injective():
    from cusploc.rng import pack_stream_index, unpack_stream_index

    seen = set()
    for purpose in (1, 2, 3):
        for eps_index in (0, 1, 5):
            for rep in (0, 1, 999):
                packed = pack_stream_index(purpose, eps_index, rep)
                assert packed not in seen
                seen.add(packed)
                assert unpack_stream_index(packed) == (purpose, eps_index, rep)
