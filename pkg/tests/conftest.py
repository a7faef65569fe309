import pytest

from cusploc import CuspModel, NoiseStream, make_h, make_prior


@pytest.fixture(scope="session")
def ref_model():
    """Reference problem instance used throughout the suite."""
    return CuspModel(a=1.0, kappa=0.25, h=make_h("const", 1.0), x0=0.0, T=3.0,
                     theta_lo=0.5, theta_hi=1.5)


@pytest.fixture(scope="session")
def uniform_prior():
    return make_prior("uniform", 0.5, 1.5)


@pytest.fixture()
def stream():
    return NoiseStream(master_seed=20240101, replicate_index=0)


def simulate_observation(model, theta, eps, n_steps, stream):
    """One observation path via the public API."""
    from cusploc import simulate_sde, simulate_wiener

    w = simulate_wiener(stream, n_steps, model.T)
    return simulate_sde(model, theta, eps, w)
