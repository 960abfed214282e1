import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skt_morse.errors import DecompositionError, InputError
from skt_morse.limits import (
    decoupling_check,
    discrete_laplacian_eigs,
    limiting_eigen_decomposition,
    principal_dirichlet_eig,
    scalar_limit_morse,
    sign_changes,
    solve_logistic,
    solve_ls1,
    solve_ls2,
    weighted_eigs,
    weighted_principal_eig,
)
from skt_morse.model import Grid

N = 30
coef = arrays(np.float64, N, elements=st.floats(-20, 20))
weight = arrays(np.float64, N, elements=st.floats(0.05, 5))

# shooting reference for the j = 2 segregation profile at lam = 45, b1 = 3, c2 = 1 on (-0.5, 0.5),
# computed once with DOP853 (rtol 1e-11) plus Brent on the slope w'(-0.5)
LS2_REF = {"slope": 19.87544561033615, "max": 3.1989813552175432, "min": -3.0317221954282734,
           "zero": 0.01767266377709616}


def dense_weighted(q, r, grid):
    A = -grid.laplacian().toarray() + np.diag(q)
    return sla.eigh(A, np.diag(r), eigvals_only=True)


def test_laplacian_eigs_closed_form():
    grid = Grid(50)
    vals, vecs = discrete_laplacian_eigs(grid)
    dense = np.linalg.eigvalsh(-grid.laplacian().toarray())
    assert np.allclose(vals, dense, rtol=1e-12)
    assert np.allclose(-grid.laplacian() @ vecs, vecs * vals, atol=1e-9 * vals.max())
    assert principal_dirichlet_eig(Grid(400)) == pytest.approx(np.pi**2, rel=1e-3)


@given(q=coef, r=weight)
def test_weighted_eigs_match_dense_generalized(q, r):
    grid = Grid(N)
    vals, vecs = weighted_eigs(q, r, grid, 3)
    ref = dense_weighted(q, r, grid)[:3]
    assert np.allclose(vals, ref, rtol=1e-8, atol=1e-8 * np.max(np.abs(ref)))
    assert np.all(vecs[:, 0] > 0) or np.all(vecs[:, 0] >= -1e-12)


def test_weighted_eigs_with_vanishing_weight():
    grid = Grid(N)
    rng = np.random.default_rng(3)
    q = rng.uniform(0, 5, N)
    r = rng.uniform(0.5, 2, N)
    r[10:14] = 0.0
    vals, vecs = weighted_eigs(q, r, grid, 2)
    A = -grid.laplacian().toarray() + np.diag(q)
    for mu, phi in zip(vals, vecs.T):
        assert np.allclose(A @ phi, mu * r * phi, atol=1e-8 * np.abs(A).max())
    # oracle: the r = 0 rows form a linear constraint; eliminate densely
    ref = sla.eigvals(A, np.diag(r))
    ref = np.sort(ref[np.isfinite(ref)].real)
    assert np.allclose(vals, ref[:2], rtol=1e-8)


@given(q=coef, r=weight, dq=arrays(np.float64, N, elements=st.floats(0, 10)))
def test_principal_eig_monotone_in_q(q, r, dq):
    assume(np.max(dq) > 1e-3)
    grid = Grid(N)
    assert weighted_principal_eig(q + dq, r, grid) >= weighted_principal_eig(q, r, grid) - 1e-9


@given(q=arrays(np.float64, N, elements=st.floats(-200, -100)), r=weight,
       dr=arrays(np.float64, N, elements=st.floats(0, 5)))
def test_negative_principal_eig_rises_with_weight(q, r, dr):
    # Rayleigh quotient: with mu_1 < 0 a larger weight raises mu_1 towards zero
    grid = Grid(N)
    m0 = weighted_principal_eig(q, r, grid)
    assume(m0 < 0)
    assert weighted_principal_eig(q, r + dr, grid) >= m0 - 1e-9 * abs(m0)


def test_weighted_eigs_rejects_bad_weight():
    grid = Grid(5)
    with pytest.raises(InputError):
        weighted_eigs(np.zeros(5), -np.ones(5), grid)
    with pytest.raises(InputError):
        weighted_eigs(np.zeros(5), np.zeros(5), grid)


@pytest.mark.parametrize("lam,b", [(12.0, 3.0), (40.0, 1.0), (100.0, 2.0)])
def test_logistic_profile(lam, b):
    grid = Grid(200)
    theta = solve_logistic(lam, b, grid)
    assert np.all(theta > 0) and theta.max() < lam / b
    res = grid.laplacian() @ theta + theta * (lam - b * theta)
    assert np.max(np.abs(res)) <= 1e-6 * lam * theta.max()
    assert np.allclose(theta, theta[::-1], atol=1e-9 * theta.max())


def test_logistic_scaling_and_absence():
    grid = Grid(100)
    assert solve_logistic(principal_dirichlet_eig(grid) - 0.1, 1.0, grid) is None
    t1 = solve_logistic(30.0, 1.0, grid)
    t3 = solve_logistic(30.0, 3.0, grid)
    assert np.allclose(3 * t3, t1, rtol=1e-8)


def test_ls1_profile():
    grid = Grid(400)
    assert solve_ls1(9.0, grid) is None
    prev = 0.0
    for lam in (12.0, 30.0, 59.8286):
        prof = solve_ls1(lam, grid)
        assert np.all(prof.U > 0)
        assert np.max(np.abs(prof.transformed_residual(grid))) <= 1e-7 * lam * prof.Z.max()
        assert prof.U.max() > prev
        prev = prof.U.max()


def test_ls2_matches_shooting_reference():
    grid = Grid(400)
    w = solve_ls2(45.0, 2, 1, grid, 3.0, 1.0).w
    assert w.max() == pytest.approx(LS2_REF["max"], rel=5e-4)
    assert w.min() == pytest.approx(LS2_REF["min"], rel=5e-4)
    i = np.flatnonzero(np.diff(np.sign(w)))[0]
    zero = grid.nodes[i] - w[i] * grid.h / (w[i + 1] - w[i])
    assert zero == pytest.approx(LS2_REF["zero"], abs=grid.h)
    assert w[0] / grid.h == pytest.approx(LS2_REF["slope"], rel=1e-2)


def test_ls2_orientation_is_a_mirror():
    grid = Grid(200)
    plus = solve_ls2(45.0, 2, 1, grid, 3.0, 1.0).w
    minus = solve_ls2(45.0, 2, -1, grid, 3.0, 1.0).w
    assert np.allclose(minus, plus[::-1], atol=1e-8 * np.max(np.abs(plus)))


@pytest.mark.parametrize("j,lam", [(2, 45.0), (3, 100.0)])
def test_ls2_class_and_limit_index(j, lam):
    grid = Grid(300)
    prof = solve_ls2(lam, j, 1, grid, 3.0, 1.0)
    assert sign_changes(prof.w) == j - 1
    assert np.max(np.abs(prof.residual(grid))) <= 1e-7 * lam * np.max(np.abs(prof.w))
    assert scalar_limit_morse(lam, prof, grid) == j - 1
    assert solve_ls2(discrete_laplacian_eigs(grid, j)[0][j - 1] - 0.5, j, 1, grid, 3.0, 1.0) is None


def test_sign_changes():
    assert sign_changes(np.array([1.0, 2.0, -1.0, 1e-20, -3.0, 4.0])) == 2
    assert sign_changes(np.zeros(4)) == 0


@pytest.mark.parametrize("lam", [15.0, 45.0])
def test_decomposition_coarse_grid(lam):
    grid = Grid(80)
    dec = limiting_eigen_decomposition(lam, grid)
    lamh = discrete_laplacian_eigs(grid)[0]
    assert np.allclose(dec.negative, np.sort(lamh[lamh < lam] - lam), rtol=1e-8)
    assert dec.max_mismatch < 1e-8


def test_decomposition_detects_mismatch():
    # the two routes agree only to rounding, so a zero tolerance must trip the check
    grid = Grid(40)
    with pytest.raises(DecompositionError):
        limiting_eigen_decomposition(30.0, grid, rtol=0.0)


def test_decoupling_residual_is_roundoff():
    grid = Grid(100)
    rep = decoupling_check(20.0, grid)
    assert rep.coupling <= 1e3 * np.finfo(float).eps * rep.scale
    assert rep.h_to_k <= 1e3 * np.finfo(float).eps * rep.scale
