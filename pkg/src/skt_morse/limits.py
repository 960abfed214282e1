"""Limiting problems of the full cross-diffusion limit and their spectral oracles.

* ``solve_logistic``: positive solution of D theta + theta (lam - b theta) = 0
* ``solve_ls1``: small-coexistence limit profile, D[(1 + U) U] + lam U = 0
* ``solve_ls2``: segregation limit profile, D w + lam w - b1 w+^2 + c2 w-^2 = 0
* ``limiting_eigen_decomposition``: splits the 2n x 2n limiting operator into
  the scalar Dirichlet part and a weighted scalar part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DecompositionError, InputError, WrongClassError
from .model import Grid
from .solvers import NewtonSettings, damped_newton, residual_floor

log = logging.getLogger(__name__)


def discrete_laplacian_eigs(grid: Grid, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenpairs of ``-D`` on ``grid``.

    lam_j = (4 / h^2) sin^2(j pi h / (4 ell)) with eigenvector
    sin(j pi (x + ell) / (2 ell)), j = 1..k, normalized to unit 2-norm.
    """
    k = grid.n if k is None else k
    if not 1 <= k <= grid.n:
        raise InputError(f"k must lie in [1, {grid.n}]")
    j = np.arange(1, k + 1)
    vals = 4.0 / grid.h**2 * np.sin(j * np.pi * grid.h / (4.0 * grid.ell)) ** 2
    vecs = np.sin(np.outer(grid.nodes + grid.ell, j) * np.pi / (2.0 * grid.ell))
    vecs /= np.linalg.norm(vecs, axis=0)
    return vals, vecs


def principal_dirichlet_eig(grid: Grid) -> float:
    return float(discrete_laplacian_eigs(grid, 1)[0][0])


def sign_changes(f: np.ndarray, rtol: float = 1e-9) -> int:
    """Count strict sign changes, ignoring entries below ``rtol * max|f|``."""
    f = np.asarray(f, dtype=float)
    scale = np.max(np.abs(f), initial=0.0)
    s = np.sign(f[np.abs(f) > rtol * scale])
    return int(np.count_nonzero(s[1:] != s[:-1]))


# ---------------------------------------------------------------- weighted eigenproblems

def weighted_eigs(q, r, grid: Grid, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``k`` smallest eigenpairs of ``-D phi + q phi = mu r phi`` (r >= 0).

    With r > 0 everywhere the problem is symmetrized by r^{-1/2} and solved
    as a tridiagonal eigenproblem.  Nodes where r = 0 are eliminated by a
    Schur complement first.  Eigenvectors are returned in the original
    variable, unit 2-norm, principal one made positive.
    """
    n = grid.n
    q = np.broadcast_to(np.asarray(q, dtype=float), (n,)).copy()
    r = np.broadcast_to(np.asarray(r, dtype=float), (n,)).copy()
    if np.any(r < 0):
        raise InputError("weight r must be nonnegative")
    pos = r > 0
    if not np.any(pos):
        raise InputError("weight r must not vanish identically")
    k = min(k, int(pos.sum()))
    h2 = grid.h**2
    if np.all(pos):
        s = 1.0 / np.sqrt(r)
        diag = (2.0 / h2 + q) * s * s
        off = -1.0 / h2 * s[:-1] * s[1:]
        vals, y = sla.eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
        vecs = y * s[:, None]
    else:
        A = (-grid.laplacian() + sp.diags(q)).toarray()
        P, Z = np.flatnonzero(pos), np.flatnonzero(~pos)
        azz = A[np.ix_(Z, Z)]
        azp = A[np.ix_(Z, P)]
        schur = A[np.ix_(P, P)] - azp.T @ np.linalg.solve(azz, azp)
        s = 1.0 / np.sqrt(r[P])
        vals, y = sla.eigh(schur * np.outer(s, s), subset_by_index=(0, k - 1))
        yp = y * s[:, None]
        vecs = np.zeros((n, k))
        vecs[P] = yp
        vecs[Z] = -np.linalg.solve(azz, azp @ yp)
    vecs /= np.linalg.norm(vecs, axis=0)
    if vecs[:, 0].sum() < 0:
        vecs[:, 0] *= -1
    return vals, vecs


def weighted_principal_eig(q, r, grid: Grid) -> float:
    """Principal eigenvalue mu_1(q, r) of ``-D phi + q phi = mu r phi``."""
    return float(weighted_eigs(q, r, grid, 1)[0][0])


def weighted_principal_pair(q, r, grid: Grid) -> tuple[float, np.ndarray]:
    vals, vecs = weighted_eigs(q, r, grid, 1)
    return float(vals[0]), vecs[:, 0]


# ---------------------------------------------------------------- logistic equation

def _cubic_ratio(phi: np.ndarray) -> float:
    return float(np.sum(phi**2) / np.sum(phi**3))


def solve_logistic(lam: float, b: float, grid: Grid, settings: NewtonSettings | None = None):
    """Positive solution theta of the diffusive logistic equation, or ``None`` if lam <= lam_1.

    Raises :class:`~skt_morse.errors.DivergenceError` if Newton fails.
    """
    if b <= 0:
        raise InputError("logistic coefficient must be positive")
    lam1 = principal_dirichlet_eig(grid)
    if lam <= lam1:
        return None
    D = grid.laplacian()
    phi = grid.sine_mode(1)
    amp = (lam - lam1) / b * _cubic_ratio(phi)
    guess = np.minimum(amp * phi, lam / b)

    def fun(t):
        return D @ t + t * (lam - b * t)

    def jac(t):
        return (D + sp.diags(lam - 2.0 * b * t)).tocsc()

    theta, _ = damped_newton(fun, jac, guess, settings)
    if not np.all(theta > 0):
        raise WrongClassError(f"logistic Newton converged to a non-positive profile at lam={lam}", theta)
    return theta


# ---------------------------------------------------------------- small-coexistence limit

@dataclass(frozen=True, eq=False)
class LimitProfileU:
    """Positive solution U of the small-coexistence limit at ``lam``."""

    U: np.ndarray
    lam: float

    @property
    def Z(self) -> np.ndarray:
        return (1.0 + self.U) * self.U

    def transformed_residual(self, grid: Grid) -> np.ndarray:
        """-D Z - lam Z / (1 + U); zero for an exact discrete solution."""
        return -(grid.laplacian() @ self.Z) - self.lam * self.Z / (1.0 + self.U)

    def residual(self, grid: Grid) -> np.ndarray:
        return grid.laplacian() @ self.Z + self.lam * self.U


def _u_of_z(Z):
    return 0.5 * (np.sqrt(1.0 + 4.0 * Z) - 1.0)


def _ls1_newton(lam, grid, Z0, settings):
    D = grid.laplacian()

    def fun(Z):
        return -(D @ Z) - lam * Z / (1.0 + _u_of_z(np.maximum(Z, 0.0)))

    def jac(Z):
        Zp = np.maximum(Z, 0.0)
        U = _u_of_z(Zp)
        dU = 1.0 / np.sqrt(1.0 + 4.0 * Zp)
        d = 1.0 / (1.0 + U) - Zp / (1.0 + U) ** 2 * dU
        return (-D - sp.diags(lam * d)).tocsc()

    Z, _ = damped_newton(fun, jac, Z0, settings)
    return Z


def solve_ls1(lam: float, grid: Grid, settings: NewtonSettings | None = None):
    """Small-coexistence limit profile via Newton in Z = (1 + U) U; ``None`` if lam <= lam_1.

    Near onset the seed is the first sine mode with the amplitude of the
    bifurcation normal form; when that seed falls onto Z = 0 (far from onset)
    the profile is reached by natural continuation in lam.
    """
    lam1 = principal_dirichlet_eig(grid)
    if lam <= lam1:
        return None
    phi = grid.sine_mode(1)
    ratio = _cubic_ratio(phi)

    def seed(l):
        return (l - lam1) / lam1 * ratio * phi

    Z = _ls1_newton(lam, grid, seed(lam), settings)
    if np.min(Z) <= 0:
        # march up from just above onset
        lams = np.linspace(lam1 + min(0.5, 0.5 * (lam - lam1)), lam, 2 + int((lam - lam1) / 2.0))
        Z = _ls1_newton(lams[0], grid, seed(lams[0]), settings)
        for lo, hi in zip(lams[:-1], lams[1:]):
            Z = _ls1_newton(hi, grid, Z * (hi - lam1) / (lo - lam1), settings)
        if np.min(Z) <= 0:
            raise WrongClassError(f"LS1 Newton did not find a positive profile at lam={lam}")
    return LimitProfileU(_u_of_z(Z), float(lam))


# ---------------------------------------------------------------- segregation limit

@dataclass(frozen=True, eq=False)
class LimitProfileW:
    """Sign-changing solution w of the segregation limit with j-1 interior sign changes."""

    w: np.ndarray
    lam: float
    j: int
    orientation: int
    b1: float
    c2: float

    @property
    def w_plus(self) -> np.ndarray:
        return np.maximum(self.w, 0.0)

    @property
    def w_minus(self) -> np.ndarray:
        return np.maximum(-self.w, 0.0)

    def residual(self, grid: Grid) -> np.ndarray:
        return ls2_residual(self.w, self.lam, self.b1, self.c2, grid)


def ls2_residual(w, lam, b1, c2, grid: Grid) -> np.ndarray:
    wp, wm = np.maximum(w, 0.0), np.maximum(-w, 0.0)
    return grid.laplacian() @ w + lam * w - b1 * wp**2 + c2 * wm**2


def ls2_derivative(w, lam, b1, c2) -> np.ndarray:
    """Pointwise f_w(lam, w) = lam - 2 b1 w+ - 2 c2 w-."""
    return lam - 2.0 * b1 * np.maximum(w, 0.0) - 2.0 * c2 * np.maximum(-w, 0.0)


def solve_ls2(
    lam: float,
    j: int,
    orientation: int,
    grid: Grid,
    b1: float,
    c2: float,
    t: float | None = None,
    settings: NewtonSettings | None = None,
):
    """Segregation limit profile in class j (j-1 interior zeros); ``None`` if lam <= lam_j.

    ``orientation`` is the sign of w next to x = -ell.  The default seed
    amplitude is ``t = 0.5 (lam - lam_j) / max(b1, c2)``; if that seed lands
    on the trivial profile or the wrong class, the normal-form amplitude and
    twice it are tried before giving up.  An explicit ``t`` disables retries.

    Raises
    ------
    WrongClassError
        If Newton lands on a profile with the wrong number of sign changes;
        retry with a different ``t``.
    """
    if j < 2:
        raise InputError("segregation profiles need j >= 2")
    if orientation not in (1, -1):
        raise InputError("orientation must be +1 or -1")
    lam_j = float(discrete_laplacian_eigs(grid, j)[0][j - 1])
    if lam <= lam_j:
        return None
    D = grid.laplacian()
    mode = orientation * grid.sine_mode(j)

    def fun(w):
        return ls2_residual(w, lam, b1, c2, grid)

    def jac(w):
        return (D + sp.diags(ls2_derivative(w, lam, b1, c2))).tocsc()

    if t is not None:
        seeds = [t]
    else:
        # the nominal amplitude undershoots the normal form and can collapse onto w = 0
        quad = b1 * np.sum(np.maximum(mode, 0) ** 3) + c2 * np.sum(np.maximum(-mode, 0) ** 3)
        normal = (lam - lam_j) * np.sum(mode**2) / quad
        seeds = [0.5 * (lam - lam_j) / max(b1, c2), normal, 2.0 * normal]
    err = None
    for amp in seeds:
        w, _ = damped_newton(fun, jac, amp * mode, settings)
        profile = LimitProfileW(w, float(lam), j, orientation, b1, c2)
        scale = np.max(np.abs(w))
        changes = sign_changes(w)
        lead = np.sign(w[np.argmax(np.abs(w) > 1e-9 * scale)]) if scale > 0 else 0.0
        if scale > 1e-8 * max(1.0, lam) and changes == j - 1 and lead == orientation:
            return profile
        err = WrongClassError(
            f"LS2 profile (amplitude {scale:.3e}) has {changes} sign changes and leading sign "
            f"{lead:+.0f}; expected {j - 1} and {orientation:+d}",
            profile,
        )
        log.debug("LS2 seed amplitude %.4g rejected: %s", amp, err)
    raise err


def scalar_limit_morse(lam: float, w: LimitProfileW, grid: Grid) -> int:
    """Negative-eigenvalue count of ``-D - f_w(lam, w)`` (Sturm count of the limit linearization)."""
    q = -ls2_derivative(w.w, lam, w.b1, w.c2)
    off = -np.ones(grid.n - 1) / grid.h**2
    vals = sla.eigvalsh_tridiagonal(2.0 / grid.h**2 + q, off)
    count = int(np.count_nonzero(vals < 0))
    log.info("limit linearization at lam=%.6g: %d negative eigenvalues, w has %d sign changes",
             lam, count, sign_changes(w.w))
    return count


# ---------------------------------------------------------------- limiting eigenproblem

def limiting_operator(lam: float, U: np.ndarray, grid: Grid) -> sp.csr_matrix:
    """Discrete limiting linearization at (U, U):

        L phi = -D[(1 + U) phi + U psi] - lam phi
        L psi = -D[U phi + (1 + U) psi] - lam psi
    """
    D = grid.laplacian()
    n = grid.n
    a = sp.diags(1.0 + U)
    c = sp.diags(U)
    lamI = lam * sp.identity(n)
    return sp.bmat([[-D @ a - lamI, -D @ c], [-D @ c, -D @ a - lamI]], format="csr")


def change_of_variables(U: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Map T: (phi, psi) -> (phi - psi, (1 + 2U)(phi + psi)) and its inverse."""
    n = U.size
    I = sp.identity(n)
    R = sp.diags(1.0 + 2.0 * U)
    Rinv = sp.diags(1.0 / (1.0 + 2.0 * U))
    T = sp.bmat([[I, -I], [R, R]], format="csr")
    Tinv = 0.5 * sp.bmat([[I, Rinv], [-I, Rinv]], format="csr")
    return T, Tinv


@dataclass(frozen=True)
class DecouplingReport:
    """Entry magnitudes left after conjugating the limiting operator by T.

    ``h_block``: deviation of the h -> h block from -D - lam I;
    ``k_to_h``: the block through which k feeds the h equation;
    ``h_to_k``: the block through which h feeds the k equation.
    """

    h_block: float
    k_to_h: float
    h_to_k: float
    scale: float

    @property
    def coupling(self) -> float:
        return max(self.h_block, self.k_to_h)


def decoupling_check(lam: float, grid: Grid, U: np.ndarray | None = None) -> DecouplingReport:
    """Conjugate the limiting operator by the change of variables and measure the leftovers.

    ``U`` defaults to the LS1 profile at ``lam``; pass zeros for the
    constant-coefficient case.
    """
    if U is None:
        prof = solve_ls1(lam, grid)
        if prof is None:
            raise InputError(f"no LS1 profile at lam={lam}")
        U = prof.U
    L = limiting_operator(lam, U, grid)
    T, Tinv = change_of_variables(U)
    C = (T @ L @ Tinv).tocsr()
    n = grid.n
    target = -grid.laplacian() - lam * sp.identity(n)

    def maxabs(m):
        m = sp.csr_matrix(m)
        return float(np.max(np.abs(m.data), initial=0.0))

    return DecouplingReport(
        h_block=maxabs(C[:n, :n] - target),
        k_to_h=maxabs(C[:n, n:]),
        h_to_k=maxabs(C[n:, :n]),
        scale=float(abs(L).sum(axis=1).max()),
    )


@dataclass(frozen=True, eq=False)
class LimitDecomposition:
    """Spectrum of the limiting operator and its two decoupled pieces."""

    lam: float
    full: np.ndarray  # eigenvalues of the 2n x 2n operator, ascending
    dirichlet: np.ndarray  # lam_j^h - lam
    weighted: np.ndarray  # mu_j(-lam/(1+2U), 1/(1+2U))
    max_mismatch: float

    @property
    def negative(self) -> np.ndarray:
        return self.full[self.full < 0]


def limiting_eigen_decomposition(lam: float, grid: Grid, U: np.ndarray | None = None, rtol: float = 1e-6) -> LimitDecomposition:
    """Full spectrum of the limiting operator versus the union of its decoupled spectra.

    Raises :class:`~skt_morse.errors.DecompositionError` if the sorted
    multisets differ by more than ``rtol * max(1, |mu|)`` anywhere.
    """
    if U is None:
        prof = solve_ls1(lam, grid)
        if prof is None:
            raise InputError(f"lam={lam} must exceed lam_1^h")
        U = prof.U
    full = sla.eigvals(limiting_operator(lam, U, grid).toarray())
    if np.max(np.abs(full.imag)) > rtol * np.max(np.abs(full)):
        raise DecompositionError(f"limiting spectrum is not real (max |Im| = {np.max(np.abs(full.imag)):.3e})")
    full = np.sort(full.real)
    dirichlet = discrete_laplacian_eigs(grid)[0] - lam
    weight = 1.0 / (1.0 + 2.0 * U)
    weighted = weighted_eigs(-lam * weight, weight, grid, grid.n)[0]
    union = np.sort(np.concatenate([dirichlet, weighted]))
    err = np.abs(union - full) / np.maximum(1.0, np.abs(full))
    worst = int(np.argmax(err))
    if err[worst] > rtol:
        raise DecompositionError(
            f"eigenvalue {full[worst]:.10g} of the limiting operator differs from the decoupled "
            f"value {union[worst]:.10g} (relative {err[worst]:.3e})"
        )
    return LimitDecomposition(float(lam), full, dirichlet, weighted, float(err[worst]))


def residual_ok(res: np.ndarray, grid: Grid, x: np.ndarray, tol: float = 1e-8) -> bool:
    """Residual check with the float64 floor of the Dirichlet Laplacian."""
    return float(np.max(np.abs(res))) <= max(tol, residual_floor(grid.laplacian(), x))
