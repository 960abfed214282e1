"""Linearly implicit time stepping of the parabolic system and growth-rate estimates.

Each step solves

    (I - dt D diag(1 + alpha v^k)) u^{k+1} = u^k + dt u^k (lam - b1 u^k - c1 v^k)
    (I - dt D diag(1 + alpha u^k)) v^{k+1} = v^k + dt v^k (lam - b2 u^k - c2 v^k)

so the quasilinear diffusion is implicit with coefficients frozen at the
current step and the reaction is explicit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import BlowUpError, EstimationError, InputError
from .model import Grid, ModelParams, SteadyState

log = logging.getLogger(__name__)

BLOWUP_NORM = 1e6
UNDERSHOOT = -1e-8


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: tuple
    probe: np.ndarray | None = None
    clamped: int = 0

    def __len__(self):
        return len(self.times)


def _banded_operator(grid: Grid, coef: np.ndarray, dt: float) -> np.ndarray:
    """Banded storage (1 sub, 1 super) of ``I - dt D diag(coef)``."""
    n = grid.n
    r = dt / grid.h**2
    ab = np.zeros((3, n))
    ab[0, 1:] = -r * coef[1:]
    ab[1, :] = 1.0 + 2.0 * r * coef
    ab[2, :-1] = -r * coef[:-1]
    return ab


def imex_step(params: ModelParams, grid: Grid, u: np.ndarray, v: np.ndarray, dt: float):
    """One linearly implicit step; returns the new (u, v)."""
    a, lam = params.alpha, params.lam
    ru = u + dt * u * (lam - params.b1 * u - params.c1 * v)
    rv = v + dt * v * (lam - params.b2 * u - params.c2 * v)
    un = sla.solve_banded((1, 1), _banded_operator(grid, 1.0 + a * v, dt), ru, check_finite=False)
    vn = sla.solve_banded((1, 1), _banded_operator(grid, 1.0 + a * u, dt), rv, check_finite=False)
    return un, vn


def evolve(
    params: ModelParams,
    grid: Grid,
    initial: SteadyState,
    T: float,
    dt: float = 1e-4,
    reference: SteadyState | None = None,
    every: int | None = None,
) -> Trajectory:
    """Integrate from ``initial`` up to time ``T``.

    Snapshots are kept every ``max(1, floor(T / (200 dt)))`` steps unless
    ``every`` is given.  With a ``reference`` state the probe series is the
    discrete 2-norm ``|(u, v) - reference|`` at each snapshot.

    Raises
    ------
    BlowUpError
        If the state max-norm exceeds ``BLOWUP_NORM``; the partial
        trajectory is attached.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise InputError(f"dt must be positive, got {dt}")
    if not T > 0:
        raise InputError(f"T must be positive, got {T}")
    if initial.n != grid.n or (reference is not None and reference.n != grid.n):
        raise InputError("state and grid sizes differ")
    if np.any(initial.u < 0) or np.any(initial.v < 0):
        raise InputError("initial state must be nonnegative")
    steps = int(round(T / dt))
    every = every or max(1, steps // 200)
    ref = reference.z if reference is not None else None
    u, v = initial.u.copy(), initial.v.copy()
    times, states, probe = [0.0], [initial], []
    if ref is not None:
        probe.append(float(np.linalg.norm(initial.z - ref)))
    clamped = 0

    def partial():
        return Trajectory(np.array(times), tuple(states), np.array(probe) if ref is not None else None, clamped)

    for k in range(1, steps + 1):
        u, v = imex_step(params, grid, u, v, dt)
        low = min(u.min(), v.min())
        if low < UNDERSHOOT:
            clamped += 1
            if clamped == 1:
                log.warning("negative undershoot %.3e at t=%.6g; clamping", low, k * dt)
        if low < 0:
            u, v = np.maximum(u, 0.0), np.maximum(v, 0.0)
        size = max(np.max(np.abs(u)), np.max(np.abs(v)))
        if not np.isfinite(size) or size > BLOWUP_NORM:
            raise BlowUpError(f"solution norm {size:.3e} exceeds {BLOWUP_NORM:g} at t={k * dt:.6g}", trajectory=partial())
        if k % every == 0 or k == steps:
            times.append(k * dt)
            state = SteadyState(u, v, initial.tag)
            states.append(state)
            if ref is not None:
                probe.append(float(np.linalg.norm(state.z - ref)))
    return partial()


def growth_rate(trajectory: Trajectory, window: tuple = (1e-4, 1e-2), min_samples: int = 10) -> float:
    """Least-squares slope of ``log(probe)`` against time over samples with probe inside ``window``."""
    if trajectory.probe is None:
        raise EstimationError("trajectory has no probe series")
    lo, hi = window
    p = np.asarray(trajectory.probe)
    t = np.asarray(trajectory.times)
    mask = (p > lo) & (p < hi)
    if np.count_nonzero(mask) < min_samples:
        raise EstimationError(f"only {np.count_nonzero(mask)} samples inside {window}, need {min_samples}")
    slope, _ = np.polyfit(t[mask], np.log(p[mask]), 1)
    return float(slope)


def perturbed(state: SteadyState, direction: np.ndarray, size: float) -> SteadyState:
    """``state + size * direction / |direction|``, clipped at zero."""
    d = np.real(np.asarray(direction, dtype=complex))
    z = state.z + size * d / np.linalg.norm(d)
    return SteadyState.from_vector(np.maximum(z, 0.0), state.tag)
