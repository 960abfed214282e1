"""Domain types and finite-difference assembly of the stationary SKT system.

The unknowns are stored field-blocked: ``z = [u_1..u_n, v_1..v_n]``.  The
residual is

    F_u = D[(1 + alpha v) u] + u (lam - b1 u - c1 v)
    F_v = D[(1 + alpha u) v] + v (lam - b2 u - c2 v)

where ``D`` is the second-order central difference Laplacian with zero
Dirichlet ghost values.  The linearized operator follows the stability
convention ``L = -dF/dz`` so that negative eigenvalues signal instability.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InputError


class BranchTag(str, enum.Enum):
    TRIVIAL = "trivial"
    SEMITRIVIAL_U = "semitrivial_u"
    SEMITRIVIAL_V = "semitrivial_v"
    COEXISTENCE = "coexistence"
    SEGREGATION_PLUS = "segregation_plus"
    SEGREGATION_MINUS = "segregation_minus"


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of the stationary problem.

    ``lam`` is the resource level (the continuation parameter).  It carries
    no sign constraint; every other coefficient must be positive.
    """

    lam: float
    alpha: float
    b1: float
    b2: float
    c1: float
    c2: float
    ell: float = 0.5

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise InputError(f"lam must be finite, got {self.lam}")
        for name in ("alpha", "b1", "b2", "c1", "c2", "ell"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InputError(f"{name} must be positive and finite, got {value}")

    def with_lambda(self, lam: float) -> "ModelParams":
        return dataclasses.replace(self, lam=float(lam))

    def swapped(self) -> "ModelParams":
        """Parameters of the system seen with the roles of u and v exchanged."""
        return dataclasses.replace(self, b1=self.c2, c1=self.b2, b2=self.c1, c2=self.b1)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def reference_setting(lam: float = 0.0) -> ModelParams:
    """The reference setting Omega = (-0.5, 0.5), alpha = 20, b1=3, b2=2, c1=2, c2=1."""
    return ModelParams(lam=lam, alpha=20.0, b1=3.0, b2=2.0, c1=2.0, c2=1.0, ell=0.5)


@dataclass(frozen=True)
class Grid:
    """Uniform interior-node mesh on (-ell, ell); boundary values are never stored."""

    n: int
    ell: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise InputError(f"grid needs an integer n >= 3, got {self.n}")
        if not (math.isfinite(self.ell) and self.ell > 0):
            raise InputError(f"ell must be positive, got {self.ell}")

    @property
    def h(self) -> float:
        return 2.0 * self.ell / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return -self.ell + self.h * np.arange(1, self.n + 1)

    def laplacian(self) -> sp.csr_matrix:
        """Sparse Dirichlet Laplacian ``D`` (negative semi-definite)."""
        return _laplacian(self.n, self.ell)

    def sine_mode(self, j: int) -> np.ndarray:
        """``sin(j pi (x + ell) / (2 ell))`` sampled at the nodes."""
        return np.sin(j * np.pi * (self.nodes + self.ell) / (2.0 * self.ell))

    def l2_norm(self, f: np.ndarray) -> float:
        """Trapezoid approximation of the L2(-ell, ell) norm (boundary values are zero)."""
        return float(np.sqrt(self.h * np.dot(f, f)))


@functools.lru_cache(maxsize=32)
def _laplacian(n: int, ell: float) -> sp.csr_matrix:
    h = 2.0 * ell / (n + 1)
    off = np.ones(n - 1)
    mat = sp.diags([off, -2.0 * np.ones(n), off], [-1, 0, 1], format="csr") / h**2
    mat.data.setflags(write=False)
    return mat


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Paired nodal vectors (u, v) with a branch tag."""

    u: np.ndarray
    v: np.ndarray
    tag: BranchTag = BranchTag.COEXISTENCE

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 1 or u.shape != v.shape:
            raise InputError(f"u and v must be 1-D of equal length, got {u.shape} and {v.shape}")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "tag", BranchTag(self.tag))

    @classmethod
    def from_vector(cls, z, tag=BranchTag.COEXISTENCE) -> "SteadyState":
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or z.size % 2:
            raise InputError(f"state vector must have even length, got shape {z.shape}")
        n = z.size // 2
        return cls(z[:n], z[n:], tag)

    @classmethod
    def zeros(cls, n: int, tag=BranchTag.TRIVIAL) -> "SteadyState":
        return cls(np.zeros(n), np.zeros(n), tag)

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    def with_tag(self, tag) -> "SteadyState":
        return SteadyState(self.u, self.v, tag)

    def reflected(self) -> "SteadyState":
        """Mirror image x -> -x."""
        return SteadyState(self.u[::-1], self.v[::-1], self.tag)

    def is_admissible(self, atol: float = 0.0) -> bool:
        """Check the sign pattern expected for the tag."""
        u, v = self.u, self.v
        if self.tag is BranchTag.TRIVIAL:
            return bool(np.all(np.abs(u) <= atol) and np.all(np.abs(v) <= atol))
        if self.tag is BranchTag.SEMITRIVIAL_U:
            return bool(np.all(u > 0) and np.all(np.abs(v) <= atol))
        if self.tag is BranchTag.SEMITRIVIAL_V:
            return bool(np.all(v > 0) and np.all(np.abs(u) <= atol))
        return bool(np.all(u > 0) and np.all(v > 0))


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    """The 2n x 2n operator ``L = -dF/dz`` assembled at ``base_state``."""

    matrix: sp.csr_matrix
    base_state: SteadyState
    lam: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0] // 2

    @functools.cached_property
    def norm_inf(self) -> float:
        return float(abs(self.matrix).sum(axis=1).max())

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def block(self, i: int, j: int) -> sp.csr_matrix:
        """Block (i, j) with 0 = phi rows/columns, 1 = psi rows/columns."""
        n = self.n
        return self.matrix[i * n:(i + 1) * n, j * n:(j + 1) * n]


def _check(params: ModelParams, grid: Grid, n: int):
    if n != grid.n:
        raise InputError(f"state has {n} nodes but grid has {grid.n}")
    if not math.isclose(params.ell, grid.ell, rel_tol=1e-12):
        raise InputError(f"params.ell={params.ell} does not match grid.ell={grid.ell}")


def residual_vector(params: ModelParams, grid: Grid, z: np.ndarray, lam: float | None = None) -> np.ndarray:
    """Residual on a raw field-blocked vector; ``lam`` overrides ``params.lam``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size != 2 * grid.n:
        raise InputError(f"expected a vector of length {2 * grid.n}, got shape {z.shape}")
    lam = params.lam if lam is None else lam
    a = params.alpha
    n = grid.n
    u, v = z[:n], z[n:]
    D = grid.laplacian()
    fu = D @ ((1.0 + a * v) * u) + u * (lam - params.b1 * u - params.c1 * v)
    fv = D @ ((1.0 + a * u) * v) + v * (lam - params.b2 * u - params.c2 * v)
    return np.concatenate([fu, fv])


def jacobian(params: ModelParams, grid: Grid, z: np.ndarray, lam: float | None = None) -> sp.csc_matrix:
    """Exact Jacobian ``dF/dz`` of :func:`residual_vector` (sparse)."""
    lam = params.lam if lam is None else lam
    a = params.alpha
    n = grid.n
    u, v = z[:n], z[n:]
    D = grid.laplacian()
    dg = sp.diags
    juu = D @ dg(1.0 + a * v) + dg(lam - 2.0 * params.b1 * u - params.c1 * v)
    juv = D @ dg(a * u) + dg(-params.c1 * u)
    jvu = D @ dg(a * v) + dg(-params.b2 * v)
    jvv = D @ dg(1.0 + a * u) + dg(lam - params.b2 * u - 2.0 * params.c2 * v)
    return sp.bmat([[juu, juv], [jvu, jvv]], format="csc")


def assemble_residual(params: ModelParams, grid: Grid, state: SteadyState) -> np.ndarray:
    """Residual of the stationary system at ``params.lam``; zero at a solution."""
    _check(params, grid, state.n)
    return residual_vector(params, grid, state.z)


def assemble_linearization(params: ModelParams, grid: Grid, state: SteadyState) -> LinearizedSystem:
    _check(params, grid, state.n)
    L = (-jacobian(params, grid, state.z)).tocsr()
    return LinearizedSystem(matrix=L, base_state=state, lam=params.lam)
