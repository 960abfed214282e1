import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from skt_morse.errors import DivergenceError, InputError, SingularityError
from skt_morse.limits import discrete_laplacian_eigs
from skt_morse.model import Grid, LinearizedSystem, SteadyState, assemble_linearization, reference_setting
from skt_morse.solvers import (
    Factorization,
    NewtonSettings,
    Spectrum,
    damped_newton,
    eigen_spectrum,
    linear_solve,
    morse_index,
    newton_solve,
    residual_floor,
)


def random_sparse(rng, n, density=0.2):
    A = sp.random(n, n, density=density, random_state=rng) + n * sp.identity(n)
    return A.tocsc()


@given(seed=st.integers(0, 10_000), n=st.integers(2, 40))
def test_linear_solve_matches_dense_lu(seed, n):
    rng = np.random.default_rng(seed)
    A = random_sparse(rng, n)
    b = rng.standard_normal(n)
    x = linear_solve(A, b)
    lu, piv = sla.lu_factor(A.toarray())
    assert np.allclose(x, sla.lu_solve((lu, piv), b), rtol=1e-10, atol=1e-12)


def test_factorization_reports_condition():
    A = sp.diags([1.0, 1e-3, 1e3]).tocsc()
    fac = Factorization(A)
    assert fac.condition == pytest.approx(1e6, rel=1e-6)


def test_singular_matrix_raises():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularityError):
        linear_solve(A, np.ones(2))


def test_ill_conditioned_matrix_raises():
    A = sp.diags([1.0, 1e-15]).tocsc()
    with pytest.raises(SingularityError):
        linear_solve(A, np.ones(2))


def test_damped_newton_scalar_root():
    x, its = damped_newton(lambda x: x**3 - 8.0, lambda x: sp.csc_matrix([[3 * x[0] ** 2]]), np.array([10.0]))
    assert x[0] == pytest.approx(2.0, rel=1e-12)
    assert its < 20


def test_damped_newton_reports_divergence():
    # x^2 + 1 has no real root
    with pytest.raises(DivergenceError) as exc:
        damped_newton(lambda x: x**2 + 1.0, lambda x: sp.csc_matrix([[2 * x[0] + 1e-3]]), np.array([0.5]),
                      NewtonSettings(max_iters=15))
    assert exc.value.last_iterate is not None


def test_residual_floor_scales_with_state():
    J = sp.identity(3) * 1e5
    assert residual_floor(J, np.array([0.0, 2.0, -1.0])) == pytest.approx(16 * np.finfo(float).eps * 1e5 * 2.0)


def test_newton_settings_validation():
    with pytest.raises(InputError):
        NewtonSettings(tol_residual=0)
    with pytest.raises(InputError):
        NewtonSettings(damping_min=2.0)


def test_newton_stays_on_trivial_state():
    grid = Grid(40)
    s = newton_solve(reference_setting(30.0), grid, SteadyState.zeros(40))
    assert np.all(s.z == 0)


@pytest.mark.parametrize("lam", [5.0, 40.0, 95.0])
def test_trivial_spectrum_both_routes(lam):
    # dense QR and shift-invert ARPACK against the closed form
    grid = Grid(150)
    L = assemble_linearization(reference_setting(lam), grid, SteadyState.zeros(150))
    exact = discrete_laplacian_eigs(grid, 4)[0] - lam
    exact = np.sort(np.repeat(exact, 2))
    for method in ("dense", "shift-invert"):
        spec = eigen_spectrum(L, 8, method=method)
        assert np.allclose(spec.eigenvalues.real, exact, rtol=1e-9, atol=1e-9 * L.norm_inf)
        assert spec.morse_index == int(np.count_nonzero(exact < 0))


@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 120.0))
def test_eigenpair_residuals(seed, lam):
    grid = Grid(60)
    rng = np.random.default_rng(seed)
    bump = np.sin(np.pi * (grid.nodes + 0.5))
    state = SteadyState(rng.uniform(0, 0.5) * bump, rng.uniform(0, 0.5) * bump)
    L = assemble_linearization(reference_setting(lam), grid, state)
    spec = eigen_spectrum(L, 6)
    assert spec.max_residual(L) <= 1e-8 * L.norm_inf
    assert np.all(np.diff(spec.eigenvalues.real) >= -1e-12 * L.norm_inf)


def test_morse_index_ignores_zero_band():
    spec = Spectrum(np.array([-2.0, -1e-12, 3.0]) + 0j, np.eye(3), tol_zero=1e-9, matrix_norm=1.0)
    assert morse_index(spec) == 1
    assert spec.critical_flag
    assert spec.nearest_zero() == 1


def test_eigen_spectrum_rejects_bad_m():
    grid = Grid(5)
    L = assemble_linearization(reference_setting(1.0), grid, SteadyState.zeros(5))
    with pytest.raises(InputError):
        eigen_spectrum(L, 0)
    with pytest.raises(InputError):
        eigen_spectrum(L, 4, method="bogus")


def test_linearized_system_norm():
    M = sp.csr_matrix(np.array([[1.0, -2.0], [3.0, 0.5]]))
    L = LinearizedSystem(M, SteadyState.zeros(1), 0.0)
    assert L.norm_inf == pytest.approx(3.5)
