"""Damped Newton, checked sparse linear solves, and spectra of the linearization."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, InputError, SingularityError, SpectralError
from .model import Grid, LinearizedSystem, ModelParams, SteadyState, jacobian, residual_vector

log = logging.getLogger(__name__)

#: condition number above which a matrix is reported singular
SINGULAR_CONDITION = 1e13
#: tol_zero = TOL_ZERO_REL * ||L||_inf
TOL_ZERO_REL = 1e-9
#: bound on ||L q - mu q|| relative to ||L||_inf for every returned pair
EIG_RESIDUAL_REL = 1e-8
# roundoff multiplier for the attainable residual floor eps * ||J|| * ||x||
_FLOOR_FACTOR = 16.0


@dataclass(frozen=True)
class NewtonSettings:
    tol_residual: float = 1e-10
    max_iters: int = 50
    damping_min: float = 1.0 / 64.0
    max_condition: float = SINGULAR_CONDITION

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise InputError("tol_residual must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not 0 < self.damping_min <= 1:
            raise InputError("damping_min must lie in (0, 1]")


def residual_floor(J, x: np.ndarray) -> float:
    """Smallest residual max-norm that float64 can certify at ``x``.

    The differenced composite variables carry rounding of order
    ``eps * ||J||_inf * ||x||_inf``; at n = 400 this is already ~1e-10 for
    O(1) states, so the nominal tolerance is raised to this floor.
    """
    if sp.issparse(J):
        jn = abs(J).sum(axis=1).max()
    else:
        jn = np.abs(J).sum(axis=1).max()
    return float(_FLOOR_FACTOR * np.finfo(float).eps * jn * np.max(np.abs(x), initial=0.0))


def convergence_threshold(J, x: np.ndarray, tol: float) -> float:
    return max(tol, residual_floor(J, x))


class Factorization:
    """Sparse LU of a square matrix with a checked solve."""

    def __init__(self, matrix, max_condition: float = SINGULAR_CONDITION):
        A = sp.csc_matrix(matrix, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise InputError(f"matrix must be square, got {A.shape}")
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularityError(f"LU factorization failed: {exc}", condition=np.inf) from exc
        self.matrix, self.lu = A, lu
        self.condition = None
        if np.isfinite(max_condition):
            nrow = A.shape[0]
            inv = spla.LinearOperator(
                (nrow, nrow),
                matvec=lu.solve,
                rmatvec=lambda y: lu.solve(np.asarray(y, dtype=float), trans="T"),
                dtype=float,
            )
            self.condition = spla.norm(A, 1) * spla.onenormest(inv)
            if not self.condition <= max_condition:
                raise SingularityError(
                    f"matrix is numerically singular (condition ~ {self.condition:.3e})",
                    condition=self.condition,
                )

    def solve(self, rhs, check: bool = True) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.matrix.shape[0]:
            raise InputError(f"incompatible shapes {self.matrix.shape} and {rhs.shape}")
        x = self.lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularityError("non-finite solution", condition=np.inf)
        if check:
            A = self.matrix
            back = np.linalg.norm(A @ x - rhs)
            bound = 1e-10 * (spla.norm(A) * np.linalg.norm(x) + np.linalg.norm(rhs))
            if back > bound:
                raise SingularityError(f"backward error {back:.3e} exceeds {bound:.3e}", condition=np.inf)
        return x


def linear_solve(matrix, rhs, max_condition: float = SINGULAR_CONDITION) -> np.ndarray:
    """Solve ``matrix @ x = rhs`` by sparse LU with a 1-norm condition estimate.

    Raises
    ------
    SingularityError
        If the factorization breaks down, the estimated condition number
        exceeds ``max_condition``, or the backward error is too large.
    """
    return Factorization(matrix, max_condition).solve(rhs)


def damped_newton(
    fun: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], object],
    x0: np.ndarray,
    settings: NewtonSettings | None = None,
) -> tuple[np.ndarray, int]:
    """Newton iteration with backtracking on the Newton-scaled residual.

    A trial step ``x + t dx`` is accepted when the simplified correction
    ``|J(x)^-1 F(x + t dx)|`` falls below ``(1 - t/4) |dx|``; otherwise ``t``
    is halved down to ``damping_min`` (which is then taken regardless).
    Measuring the residual through the current factorization makes the
    test insensitive to the ``1/h^2`` row scaling of the Jacobian, which
    otherwise rejects good steps near singular points.
    Returns the converged vector and the number of iterations used.
    """
    settings = settings or NewtonSettings()
    x = np.array(x0, dtype=float)
    r = fun(x)
    rn = np.max(np.abs(r))
    for it in range(settings.max_iters + 1):
        J = jac(x)
        if rn <= convergence_threshold(J, x, settings.tol_residual):
            return x, it
        if it == settings.max_iters:
            break
        fac = Factorization(J, settings.max_condition)
        dx = fac.solve(-r)
        dn = np.linalg.norm(dx)
        t = 1.0
        while True:
            xt = x + t * dx
            rt = fun(xt)
            rtn = np.max(np.abs(rt))
            if np.isfinite(rtn):
                if rtn < rn or t <= settings.damping_min:
                    break
                if np.linalg.norm(fac.solve(rt, check=False)) <= (1.0 - 0.25 * t) * dn:
                    break
            elif t <= settings.damping_min:
                break
            t *= 0.5
        x, r, rn = xt, rt, rtn
    raise DivergenceError(
        f"Newton did not converge in {settings.max_iters} iterations (|F| = {rn:.3e})",
        last_iterate=x,
        residual_norm=rn,
    )


def newton_solve(
    params: ModelParams,
    grid: Grid,
    guess: SteadyState,
    settings: NewtonSettings | None = None,
) -> SteadyState:
    """Solve the stationary system at ``params.lam`` starting from ``guess``."""
    if guess.n != grid.n:
        raise InputError(f"guess has {guess.n} nodes, grid has {grid.n}")
    try:
        z, _ = damped_newton(
            lambda z: residual_vector(params, grid, z),
            lambda z: jacobian(params, grid, z),
            guess.z,
            settings,
        )
    except DivergenceError as exc:
        if exc.last_iterate is not None:
            exc.last_iterate = SteadyState.from_vector(exc.last_iterate, guess.tag)
        raise
    return SteadyState.from_vector(z, guess.tag)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of smallest real part, ascending, with unit eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    tol_zero: float
    matrix_norm: float

    @property
    def morse_index(self) -> int:
        return morse_index(self)

    @property
    def critical(self) -> np.ndarray:
        """Eigenvalues inside the zero band ``|Re mu| <= tol_zero``."""
        ev = self.eigenvalues
        return ev[np.abs(ev.real) <= self.tol_zero]

    @property
    def critical_flag(self) -> bool:
        return bool(self.critical.size)

    @property
    def saturated(self) -> bool:
        """True when every computed eigenvalue is negative (index is a lower bound)."""
        return bool(np.all(self.eigenvalues.real < -self.tol_zero))

    def nearest_zero(self) -> int:
        """Position of the eigenvalue with the smallest ``|Re mu|``."""
        return int(np.argmin(np.abs(self.eigenvalues.real)))

    def max_residual(self, linsys: LinearizedSystem) -> float:
        L = linsys.matrix
        res = [np.linalg.norm(L @ q - mu * q) for mu, q in zip(self.eigenvalues, self.eigenvectors.T)]
        return float(max(res, default=0.0))


def morse_index(spectrum: Spectrum) -> int:
    """Number of eigenvalues with ``Re mu < -tol_zero``; the zero band is never counted."""
    return int(np.count_nonzero(spectrum.eigenvalues.real < -spectrum.tol_zero))


def _normalize_columns(vecs: np.ndarray, vals: np.ndarray) -> np.ndarray:
    out = np.empty_like(vecs, dtype=complex)
    for i in range(vecs.shape[1]):
        q = vecs[:, i].astype(complex)
        k = np.argmax(np.abs(q))
        q = q * (np.abs(q[k]) / q[k])  # largest entry real positive
        if vals[i].imag == 0:
            q = q.real.astype(complex)
        out[:, i] = q / np.linalg.norm(q)
    return out


def _keep_pairs(vals: np.ndarray, m: int) -> int:
    """Extend the cut ``m`` by one if it would split a conjugate pair."""
    if m < vals.size and vals[m - 1].imag != 0 and np.isclose(vals[m], np.conj(vals[m - 1])):
        return m + 1
    return m


def eigen_spectrum(
    linsys: LinearizedSystem,
    m: int = 8,
    method: str = "auto",
    tol_zero_rel: float = TOL_ZERO_REL,
) -> Spectrum:
    """The ``m`` eigenvalues of smallest real part of ``linsys.matrix``.

    ``method`` is ``"dense"`` (full QR), ``"shift-invert"`` (ARPACK around a
    shift below the spectrum), or ``"auto"`` which picks shift-invert for
    large systems and falls back to dense if ARPACK fails.
    """
    L = linsys.matrix
    N = L.shape[0]
    if not 1 <= m <= N:
        raise InputError(f"m must lie in [1, {N}], got {m}")
    norm = linsys.norm_inf
    use_dense = method == "dense" or (method == "auto" and (N <= 200 or m + 3 >= N))
    if method not in ("auto", "dense", "shift-invert"):
        raise InputError(f"unknown method {method!r}")
    if not use_dense:
        try:
            vals, vecs = _shift_invert(L, m, linsys.lam)
        except SpectralError:
            if method != "auto":
                raise
            log.warning("ARPACK failed at lam=%.6g; falling back to dense eigensolver", linsys.lam)
            use_dense = True
    if use_dense:
        vals, vecs = sla.eig(L.toarray())
    order = np.lexsort((vals.imag, vals.real))
    vals, vecs = vals[order], vecs[:, order]
    # real eigenvalues come back with exact-zero imaginary parts from both routes
    vals = np.where(np.abs(vals.imag) <= 1e-14 * norm, vals.real + 0j, vals)
    keep = _keep_pairs(vals, min(m, vals.size))
    vals, vecs = vals[:keep], _normalize_columns(vecs[:, :keep], vals[:keep])
    spec = Spectrum(vals, vecs, tol_zero_rel * norm, norm)
    worst = spec.max_residual(linsys)
    if worst > EIG_RESIDUAL_REL * norm:
        raise SpectralError(f"eigenpair residual {worst:.3e} exceeds {EIG_RESIDUAL_REL:g} * ||L||")
    return spec


def spectral_shift(lam: float) -> float:
    """Shift placed below the spectrum: the reaction part of L is bounded below by -lam."""
    return -(1.5 * abs(lam) + 10.0)


def _shift_invert(L, m: int, lam: float):
    N = L.shape[0]
    k = min(m + 2, N - 2)
    v0 = np.linspace(1.0, 2.0, N)
    try:
        vals, vecs = spla.eigs(L.tocsc(), k=k, sigma=spectral_shift(lam), which="LM", v0=v0)
    except (spla.ArpackNoConvergence, spla.ArpackError, RuntimeError) as exc:
        raise SpectralError(f"shift-invert iteration failed: {exc}") from exc
    return vals, vecs


def full_spectrum(linsys: LinearizedSystem) -> np.ndarray:
    """Every eigenvalue of the linearization (dense), sorted by real part."""
    vals = sla.eigvals(linsys.dense())
    return vals[np.lexsort((vals.imag, vals.real))]


def with_settings(settings: NewtonSettings | None, **changes) -> NewtonSettings:
    return dataclasses.replace(settings or NewtonSettings(), **changes)
