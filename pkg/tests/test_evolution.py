import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skt_morse import evolution
from skt_morse.continuation import StepControls, coexistence_start, continue_branch, point_at, spectrum_at
from skt_morse.errors import BlowUpError, EstimationError, InputError
from skt_morse.evolution import Trajectory, evolve, growth_rate, imex_step, perturbed
from skt_morse.limits import solve_logistic
from skt_morse.model import Grid, SteadyState, reference_setting

GRID = Grid(100)


@pytest.fixture(scope="module")
def coex100():
    params = reference_setting()
    start = coexistence_start(params, GRID, 10.2)
    return continue_branch(params, GRID, start, 1, StepControls(ds=0.1, ds_max=1.0), lambda_max=62.0)


def kick(params, state, k, size=1e-5):
    spec = spectrum_at(params, GRID, state, params.lam, 6)
    d = spec.eigenvectors[:, k].real
    return spec.eigenvalues[k].real, perturbed(state, d, size * np.linalg.norm(state.z))


@given(rate=st.floats(-30, 30).filter(lambda r: abs(r) > 0.5), c=st.floats(-4, -3))
def test_growth_rate_recovers_synthetic_exponential(rate, c):
    t = np.linspace(0, 2.0, 400)
    probe = np.exp(c + rate * t)
    traj = Trajectory(t, (), probe)
    window = (float(probe.min()) * 0.999, float(probe.max()) * 1.001)
    assert growth_rate(traj, window) == pytest.approx(rate, rel=1e-9)


def test_growth_rate_needs_samples():
    with pytest.raises(EstimationError):
        growth_rate(Trajectory(np.arange(3.0), (), np.ones(3) * 1e-3))
    with pytest.raises(EstimationError):
        growth_rate(Trajectory(np.arange(3.0), ()))


def test_zero_state_is_invariant():
    p = reference_setting(30.0)
    u, v = imex_step(p, GRID, np.zeros(100), np.zeros(100), 1e-3)
    assert not u.any() and not v.any()


def test_stable_semitrivial_state_is_kept():
    p = reference_setting(20.0)
    theta = solve_logistic(20.0, p.b1, GRID)
    base = SteadyState(theta, np.zeros(100))
    start = perturbed(base, np.ones(200), 1e-4)
    traj = evolve(p, GRID, start, T=0.5, dt=1e-3, reference=base)
    assert traj.probe[-1] < 1e-2 * traj.probe[0]


def test_growth_matches_eigenvalue_and_dt_robustness(coex100):
    p = reference_setting(20.0)
    state = point_at(p, GRID, coex100, 20.0).state
    mu, start = kick(p, state, 0)
    rates = [growth_rate(evolve(p, GRID, start, T=0.6, dt=dt, reference=state)) for dt in (1e-4, 5e-5)]
    assert rates[0] == pytest.approx(-mu, rel=0.1)
    assert abs(rates[0] - rates[1]) < 0.02 * abs(rates[1])


def test_unstable_direction_count(coex100):
    # between beta_2 and beta_3 the two negative modes grow and the third decays
    p = reference_setting(60.0)
    state = point_at(p, GRID, coex100, 60.0).state
    spec = spectrum_at(p, GRID, state, 60.0, 6)
    assert spec.morse_index == 2
    for k in range(3):
        mu, start = kick(p, state, k)
        traj = evolve(p, GRID, start, T=0.2, dt=1e-4, reference=state)
        probe = traj.probe[: len(traj.probe) // 4]
        if mu < 0:
            assert probe[-1] > 1.2 * probe[0]
        else:
            assert probe[-1] < probe[0]


def test_blowup_is_reported(monkeypatch):
    monkeypatch.setattr(evolution, "BLOWUP_NORM", 0.5)
    p = reference_setting(20.0)
    start = SteadyState(0.4 * np.ones(100), np.zeros(100))
    with pytest.raises(BlowUpError) as exc:
        evolve(p, GRID, start, T=1.0, dt=1e-3)
    assert len(exc.value.trajectory) >= 1


def test_snapshot_cadence():
    p = reference_setting(5.0)
    traj = evolve(p, GRID, SteadyState(np.full(100, 0.1), np.full(100, 0.1)), T=0.1, dt=1e-4)
    assert len(traj) == 201
    assert traj.times[-1] == pytest.approx(0.1)


def test_input_validation():
    p = reference_setting(5.0)
    s = SteadyState.zeros(100)
    with pytest.raises(InputError):
        evolve(p, GRID, s, T=1.0, dt=0.0)
    with pytest.raises(InputError):
        evolve(p, GRID, s, T=-1.0)
    with pytest.raises(InputError):
        evolve(p, GRID, SteadyState(-np.ones(100), np.zeros(100)), T=1.0)
