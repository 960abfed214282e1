"""Pseudo-arclength continuation, bifurcation detection and pitchfork branch switching.

Arclength is measured in the weighted norm ``sqrt(h |dz|^2 + dlam^2)`` so
that step sizes do not depend on the grid resolution.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .errors import (
    DivergenceError,
    InputError,
    NoSwitchError,
    SingularityError,
    SKTError,
    SpectralError,
    StallError,
    UndefinedMeasureError,
)
from .model import (
    BranchTag,
    Grid,
    LinearizedSystem,
    ModelParams,
    SteadyState,
    jacobian,
    residual_vector,
)
from .solvers import (
    NewtonSettings,
    Spectrum,
    convergence_threshold,
    damped_newton,
    eigen_spectrum,
    linear_solve,
    newton_solve,
    with_settings,
)

log = logging.getLogger(__name__)

#: refined events satisfy |mu| <= REFINE_REL * ||L||_inf
REFINE_REL = 1e-8
REFINE_MAX_ITERS = 30


@dataclass(frozen=True)
class StepControls:
    ds: float = 0.05
    ds_min: float = 1e-8
    ds_max: float = 0.5
    grow: float = 1.3
    fast_iters: int = 3
    max_corrector_iters: int = 12
    m: int = 8
    newton: NewtonSettings = field(default_factory=NewtonSettings)

    def __post_init__(self):
        if not 0 < self.ds_min <= self.ds <= self.ds_max:
            raise InputError("step controls need 0 < ds_min <= ds <= ds_max")
        if self.grow < 1:
            raise InputError("grow factor must be >= 1")
        if self.m < 1:
            raise InputError("m must be >= 1")


@dataclass(frozen=True, eq=False)
class BranchPoint:
    """One accepted continuation point.

    ``eigenvalues`` holds the ``m`` smallest-real-part eigenvalues of the
    linearization; ``tangent_hint`` (state part, lambda part) orients the
    first continuation step when set.
    """

    lam: float
    state: SteadyState
    arclength: float = 0.0
    eigenvalues: np.ndarray | None = None
    tol_zero: float = 0.0
    morse_index: int | None = None
    critical_flag: bool = False
    tangent_hint: tuple | None = None
    matrix_norm: float = 0.0

    @property
    def negative_count(self) -> int:
        """Eigenvalues with strictly negative real part (no zero band)."""
        return int(np.count_nonzero(self.eigenvalues.real < 0))

    def nearest_zero(self) -> complex:
        return self.eigenvalues[np.argmin(np.abs(self.eigenvalues.real))]


@dataclass(frozen=True, eq=False)
class BifurcationEvent:
    lambda_star: float
    kernel_vector: np.ndarray
    crossing_direction: int
    mu: float
    matrix_norm: float
    point: BranchPoint
    branch_tag: BranchTag
    index_before: int
    index_after: int
    approximate: bool = False
    gap: float | None = None

    @property
    def refined(self) -> bool:
        return not self.approximate and abs(self.mu) <= REFINE_REL * self.matrix_norm

    @property
    def imperfect(self) -> bool:
        """True for a near-crossing: the tracked eigenvalue has a small nonzero minimum instead of a root."""
        return self.gap is not None


@dataclass(frozen=True, eq=False)
class Branch:
    points: tuple
    tag: BranchTag
    events: tuple = ()

    def __len__(self):
        return len(self.points)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def morse_indices(self) -> np.ndarray:
        return np.array([p.morse_index for p in self.points])

    def with_events(self, events) -> "Branch":
        return dataclasses.replace(self, events=tuple(events))


# ---------------------------------------------------------------- helpers

def spectrum_at(params: ModelParams, grid: Grid, state: SteadyState, lam: float, m: int = 8) -> Spectrum:
    linsys = LinearizedSystem((-jacobian(params, grid, state.z, lam)).tocsr(), state, lam)
    return eigen_spectrum(linsys, m)


def make_point(
    params: ModelParams,
    grid: Grid,
    state: SteadyState,
    lam: float | None = None,
    arclength: float = 0.0,
    m: int = 8,
    annotate: bool = True,
    tangent_hint=None,
) -> BranchPoint:
    lam = params.lam if lam is None else float(lam)
    if not annotate:
        return BranchPoint(lam, state, arclength, tangent_hint=tangent_hint)
    spec = spectrum_at(params, grid, state, lam, m)
    return BranchPoint(
        lam=lam,
        state=state,
        arclength=arclength,
        eigenvalues=spec.eigenvalues,
        tol_zero=spec.tol_zero,
        morse_index=spec.morse_index,
        critical_flag=spec.critical_flag,
        tangent_hint=tangent_hint,
        matrix_norm=spec.matrix_norm,
    )


def _wnorm(h, tz, tl):
    return math.sqrt(h * float(tz @ tz) + tl * tl)


def _tangent(params, grid, z, lam, orient_z, orient_l):
    """Unit tangent of the solution curve, oriented by ``(orient_z, orient_l)``."""
    h = grid.h
    J = jacobian(params, grid, z, lam)
    A = sp.bmat(
        [[J, sp.csc_matrix(z[:, None])], [sp.csc_matrix(h * orient_z[None, :]), sp.csc_matrix([[orient_l]])]],
        format="csc",
    )
    rhs = np.zeros(z.size + 1)
    rhs[-1] = 1.0
    t = linear_solve(A, rhs, max_condition=np.inf)
    tz, tl = t[:-1], t[-1]
    nrm = _wnorm(h, tz, tl)
    return tz / nrm, tl / nrm


def _correct(params, grid, zp, lp, tz, tl, controls):
    """Newton on F = 0 plus the hyperplane through the predictor orthogonal to the tangent."""
    h = grid.h
    z, lam = zp.copy(), lp
    tol = controls.newton.tol_residual
    bz = sp.csc_matrix(h * tz[None, :])
    bl = sp.csc_matrix([[tl]])
    for it in range(controls.max_corrector_iters + 1):
        F = residual_vector(params, grid, z, lam)
        N = h * float(tz @ (z - zp)) + tl * (lam - lp)
        J = jacobian(params, grid, z, lam)
        if np.max(np.abs(F)) <= convergence_threshold(J, z, tol) and abs(N) <= 1e-12:
            return z, lam, it
        if it == controls.max_corrector_iters:
            break
        A = sp.bmat([[J, sp.csc_matrix(z[:, None])], [bz, bl]], format="csc")
        d = linear_solve(A, -np.append(F, N), max_condition=controls.newton.max_condition)
        z, lam = z + d[:-1], lam + d[-1]
        if not np.all(np.isfinite(z)):
            break
    raise DivergenceError("arclength corrector did not converge")


def _finish_at(params, grid, z0, l0, z1, l1, target, settings):
    """Solve at exactly ``target`` lying between two accepted points."""
    w = (target - l0) / (l1 - l0)
    guess = (1 - w) * z0 + w * z1
    z, _ = damped_newton(
        lambda z: residual_vector(params, grid, z, target),
        lambda z: jacobian(params, grid, z, target),
        guess,
        with_settings(settings, max_condition=np.inf),
    )
    return z


# ---------------------------------------------------------------- continuation

def continue_branch(
    params: ModelParams,
    grid: Grid,
    start: BranchPoint,
    direction: int = 1,
    controls: StepControls | None = None,
    lambda_max: float = math.inf,
    max_points: int = 10_000,
    lambda_min: float = -math.inf,
    annotate: bool = True,
    gaps: str = "jump",
) -> Branch:
    """Keller pseudo-arclength continuation from ``start``.

    Predictor: tangent extrapolation.  Corrector: Newton on the residual
    bordered by the arclength hyperplane.  The step is halved on corrector
    failure and grown by ``controls.grow`` after fast convergence.  The run
    stops when lambda leaves ``[lambda_min, lambda_max]`` (the last point is
    then re-solved exactly on the bound) or after ``max_points`` points.

    ``gaps`` sets the policy at a near-crossing, where two curves pass
    within ``REFINE_REL * ||L||`` of a common singular point without
    meeting (an unfolded transcritical point).  With ``"jump"`` the run
    crosses to the curve that continues the incoming direction, as it would
    through an exact crossing; with ``"follow"`` it stays on the smooth
    curve, which bends away.  A coarse step can cross such a gap by itself,
    so only ``"jump"`` gives step-size independent branches.

    Raises
    ------
    StallError
        When the step drops below ``controls.ds_min``; the partial branch is
        attached to the exception.
    """
    controls = controls or StepControls()
    if direction not in (1, -1):
        raise InputError("direction must be +1 or -1")
    if gaps not in ("jump", "follow"):
        raise InputError(f"gaps must be 'jump' or 'follow', got {gaps!r}")
    if gaps == "jump" and not annotate:
        raise InputError("gap jumping needs annotated points")
    tag = start.state.tag
    z, lam = start.state.z, start.lam
    res = np.max(np.abs(residual_vector(params, grid, z, lam)))
    if res > convergence_threshold(jacobian(params, grid, z, lam), z, controls.newton.tol_residual):
        raise InputError(f"start point is not a solution (|F| = {res:.3e})")
    if annotate and start.eigenvalues is None:
        start = make_point(params, grid, start.state, lam, start.arclength, controls.m, tangent_hint=start.tangent_hint)
    if start.tangent_hint is not None:
        oz, ol = start.tangent_hint
        oz, ol = direction * np.asarray(oz, dtype=float), direction * float(ol)
    else:
        oz, ol = np.zeros_like(z), float(direction)
    tz, tl = _tangent(params, grid, z, lam, oz, ol)

    points = [start]
    tangents = [(tz, tl)]
    settled = 0  # points before this index are never re-examined for gaps
    s = start.arclength
    ds = controls.ds
    while len(points) < max_points:
        if not (lambda_min <= lam <= lambda_max):
            break
        try:
            zn, ln, iters = _correct(params, grid, z + ds * tz, lam + ds * tl, tz, tl, controls)
            tzn, tln = _tangent(params, grid, zn, ln, tz, tl)
        except (DivergenceError, SingularityError) as exc:
            ds *= 0.5
            log.debug("step rejected at lam=%.6g (%s); ds -> %.3g", lam, exc, ds)
            if ds < controls.ds_min:
                raise StallError(
                    f"continuation stalled at lam={lam:.6g} (ds < {controls.ds_min:g})",
                    branch=Branch(tuple(points), tag),
                ) from exc
            continue
        if ln > lambda_max or ln < lambda_min:
            target = lambda_max if ln > lambda_max else lambda_min
            zn = _finish_at(params, grid, z, lam, zn, ln, target, controls.newton)
            ln = target
        s += _wnorm(grid.h, zn - z, ln - lam)
        state = SteadyState.from_vector(zn, tag)
        points.append(make_point(params, grid, state, ln, s, controls.m, annotate))
        tangents.append((tzn, tln))
        z, lam, tz, tl = zn, ln, tzn, tln
        if iters <= controls.fast_iters:
            ds = min(ds * controls.grow, controls.ds_max)
        if gaps == "jump" and len(points) - settled >= 3 and _gap_candidate(points[-3:]):
            event = _gap_event(params, grid, tag, points[-3], points[-1], controls.newton, controls.m)
            if event is not None and not event.approximate:
                jumped = _jump_gap(params, grid, points, tangents, event, controls, lambda_min, lambda_max)
                if jumped is not None:
                    k, landing, (tz, tl) = jumped
                    del points[k + 1:], tangents[k + 1:]
                    points.append(landing)
                    tangents.append((tz, tl))
                    settled = len(points) - 1
                    z, lam, s = landing.state.z, landing.lam, landing.arclength
                    ds = controls.ds
            if settled < len(points) - 2:
                settled = len(points) - 2
        if lam in (lambda_max, lambda_min):
            break
    return Branch(tuple(points), tag)


# ---------------------------------------------------------------- near-crossings

#: |Re mu| local minima below this fraction of ||L|| are examined as possible gaps
GAP_CANDIDATE_REL = 1e-7
#: lambda distance from the gap to the jump anchor and to the landing point
GAP_JUMP = 0.5


def _gap_candidate(triple) -> bool:
    a, b, c = (abs(p.nearest_zero().real) for p in triple)
    counts = {p.negative_count for p in triple}
    return len(counts) == 1 and b < a and b < c and b <= GAP_CANDIDATE_REL * triple[1].matrix_norm


def _retrace(params, grid, p0, p1, settings, m, pieces=32):
    """Re-trace the stretch from ``p0`` toward ``p1`` with short steps.

    Near a crossing a coarse predictor can land on a neighbouring curve;
    short tangent steps keep every sample on the curve through ``p0``.
    Returns the annotated points, or None on failure.
    """
    dist = _wnorm(grid.h, p1.state.z - p0.state.z, p1.lam - p0.lam)
    if dist == 0:
        return None
    ds = dist / pieces
    controls = StepControls(ds=ds, ds_min=ds * 1e-6, ds_max=ds, grow=1.0, newton=settings, m=m)
    start = dataclasses.replace(p0, tangent_hint=(p1.state.z - p0.state.z, p1.lam - p0.lam))
    try:
        sub = continue_branch(
            params, grid, start, 1, controls,
            lambda_max=max(p0.lam, p1.lam), lambda_min=min(p0.lam, p1.lam),
            max_points=4 * pieces, gaps="follow",
        )
    except SKTError as exc:
        log.debug("re-trace failed (%s)", exc)
        return None
    return list(sub.points)


def _solve_near(params, grid, tag, pa, pb, lam, settings, m):
    z = _finish_at(params, grid, pa.state.z, pa.lam, pb.state.z, pb.lam, lam, settings)
    state = SteadyState.from_vector(z, tag)
    linsys = LinearizedSystem((-jacobian(params, grid, z, lam)).tocsr(), state, lam)
    return state, eigen_spectrum(linsys, m)


def _gap_event(params, grid, tag, p0, p1, settings, m, dense=None, outer=None):
    """Locate the minimum of |Re mu| between two points of one smooth curve.

    Returns an event flagged imperfect (``gap`` = the minimum) or None when
    the curve has no interior minimum.  The event is marked approximate
    when the minimum exceeds the refinement tolerance.
    """
    settings = with_settings(settings, max_condition=np.inf)
    dense = dense or _retrace(params, grid, p0, p1, settings, m)
    if not dense or len(dense) < 3:
        return None
    mus = np.array([abs(p.nearest_zero().real) for p in dense])
    i = int(np.argmin(mus))
    if i == 0 or i == len(dense) - 1:
        return None
    samples = _Samples(params, grid, tag, settings, m)
    for p in dense[max(i - 2, 0):i + 3]:
        samples.add(p.lam, p.state.z)
    lo, hi = sorted((dense[i - 1].lam, dense[i + 1].lam))
    found = {}

    def objective(lam):
        try:
            lam_s, state, spec = samples.solve(lam)
        except SKTError:
            return np.inf
        mu = abs(spec.eigenvalues[spec.nearest_zero()].real)
        found[lam_s] = (state, spec, mu)
        return mu

    minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7 * max(1.0, hi)})
    if found:
        lam_v = min(found, key=lambda key: found[key][2])
        state, spec, _ = found[lam_v]
    else:
        state, lam_v = dense[i].state, dense[i].lam
        spec = spectrum_at(params, grid, state, lam_v, m)
    k = spec.nearest_zero()
    mu = float(spec.eigenvalues[k].real)
    outer = outer or (p0, p1)
    point = BranchPoint(
        lam=float(lam_v), state=state,
        arclength=dense[i].arclength,
        eigenvalues=spec.eigenvalues, tol_zero=spec.tol_zero,
        morse_index=spec.morse_index, critical_flag=spec.critical_flag,
        matrix_norm=spec.matrix_norm,
    )
    return BifurcationEvent(
        lambda_star=float(lam_v),
        kernel_vector=_orient_kernel(spec.eigenvectors[:, k]),
        crossing_direction=_direction(outer[0], outer[1]),
        mu=mu,
        matrix_norm=spec.matrix_norm,
        point=point,
        branch_tag=tag,
        index_before=outer[0].negative_count,
        index_after=outer[1].negative_count,
        approximate=abs(mu) > REFINE_REL * spec.matrix_norm,
        gap=abs(mu),
    )


def _direction(p0, p1) -> int:
    """Sign of d(mu)/d(lambda) for the tracked eigenvalue; falls back to the index change."""
    slope = (p1.nearest_zero().real - p0.nearest_zero().real) / (p1.lam - p0.lam)
    if p1.negative_count != p0.negative_count:
        # an index gain as lambda grows means mu decreased through zero
        return -1 if (p1.negative_count - p0.negative_count) * (p1.lam - p0.lam) > 0 else 1
    return int(np.sign(slope))


def _jump_gap(params, grid, points, tangents, event, controls, lambda_min, lambda_max):
    """Cross a confirmed gap along the incoming direction.

    The anchor is the last point at least ``GAP_JUMP`` before the gap; the
    landing point is corrected on the hyperplane orthogonal to the anchor
    tangent at lambda = gap + ``GAP_JUMP``.  Returns (anchor index, landing
    point, landing tangent) or None if the landing does not change the
    index.
    """
    sgn = np.sign(points[-1].lam - points[0].lam) or 1.0
    k = 0
    for j, p in enumerate(points):
        if sgn * (event.lambda_star - p.lam) >= GAP_JUMP:
            k = j
    anchor = points[k]
    tz, tl = tangents[k]
    if tl * sgn <= 0:
        return None
    target = float(np.clip(event.lambda_star + sgn * GAP_JUMP, lambda_min, lambda_max))
    sigma = (target - anchor.lam) / tl
    try:
        zn, ln, _ = _correct(params, grid, anchor.state.z + sigma * tz, target, tz, tl, controls)
        tzn, tln = _tangent(params, grid, zn, ln, tz, tl)
        if not lambda_min <= ln <= lambda_max:
            zn = _finish_at(params, grid, anchor.state.z, anchor.lam, zn, ln, target, controls.newton)
            ln = target
    except SKTError as exc:
        log.warning("could not cross the gap at lam=%.6f: %s", event.lambda_star, exc)
        return None
    s = anchor.arclength + _wnorm(grid.h, zn - anchor.state.z, ln - anchor.lam)
    landing = make_point(params, grid, SteadyState.from_vector(zn, anchor.state.tag), ln, s, controls.m)
    if landing.negative_count == event.point.negative_count:
        log.warning("gap jump at lam=%.6f kept the index; following the smooth curve", event.lambda_star)
        return None
    log.info("crossed gap %.3e at lam=%.6f (index %d -> %d)",
             event.gap, event.lambda_star, anchor.negative_count, landing.negative_count)
    return k, landing, (tzn, tln)


# ---------------------------------------------------------------- bifurcation detection

def _orient_kernel(q: np.ndarray) -> np.ndarray:
    q = np.real(q).astype(float)
    q = q / np.linalg.norm(q)
    first = np.flatnonzero(np.abs(q) > 1e-3 * np.max(np.abs(q)))[0]
    return q if q[first] > 0 else -q


class _Samples:
    """Converged (lambda, z) pairs near a crossing, used to predict new trial states."""

    def __init__(self, params, grid, tag, settings, m):
        self.params, self.grid, self.tag, self.m = params, grid, tag, m
        self.settings = settings
        self.lams, self.zs = [], []

    def add(self, lam, z):
        self.lams.append(float(lam))
        self.zs.append(z)

    def _guess(self, lam):
        order = np.argsort(np.abs(np.array(self.lams) - lam))[:2]
        (l0, z0), (l1, z1) = [(self.lams[i], self.zs[i]) for i in order]
        w = (lam - l0) / (l1 - l0)
        return (1 - w) * z0 + w * z1

    def solve(self, lam):
        """Steady state and spectrum at ``lam``.

        On Newton failure the trial lambda is pulled halfway toward the
        nearest converged sample (up to five times); the lambda actually
        solved is returned first.
        """
        p, g = self.params, self.grid
        for _ in range(6):
            try:
                z, _ = damped_newton(
                    lambda x: residual_vector(p, g, x, lam),
                    lambda x: jacobian(p, g, x, lam),
                    self._guess(lam),
                    self.settings,
                )
                break
            except DivergenceError as exc:
                near = self.lams[int(np.argmin(np.abs(np.array(self.lams) - lam)))]
                log.debug("trial solve at lam=%.10g failed (%s); moving toward %.10g", lam, exc, near)
                lam = 0.5 * (lam + near)
        else:
            raise DivergenceError(f"could not re-solve the branch near lam={lam:.10g}")
        self.add(lam, z)
        state = SteadyState.from_vector(z, self.tag)
        linsys = LinearizedSystem((-jacobian(p, g, z, lam)).tocsr(), state, lam)
        return lam, state, eigen_spectrum(linsys, self.m)


def detect_bifurcations(
    params: ModelParams,
    grid: Grid,
    branch: Branch,
    settings: NewtonSettings | None = None,
    m: int = 8,
) -> list:
    """Locate every crossing of an eigenvalue through zero along ``branch``.

    A crossing is flagged where the number of eigenvalues with negative real
    part changes between consecutive points.  The stretch is re-traced with
    short steps; if the fine trace confirms the change, the eigenvalue
    closest to zero is driven to zero by an Illinois secant iteration in
    lambda, re-solving the steady state at each trial lambda.  If the fine
    trace keeps the index, the coarse step had crossed a gap between two
    curves and the event is placed at the minimum of ``|Re mu|`` (flagged
    imperfect).  Events that do not meet ``REFINE_REL * ||L||`` are
    returned with ``approximate=True``.
    """
    if len(branch.points) < 2 or any(p.eigenvalues is None for p in branch.points):
        raise InputError("branch needs at least two annotated points")
    settings = with_settings(settings, max_condition=np.inf)
    events = []
    for p0, p1 in zip(branch.points[:-1], branch.points[1:]):
        if p0.negative_count == p1.negative_count or p0.lam == p1.lam:
            continue
        events.append(_refine(params, grid, branch.tag, p0, p1, settings, m))
    return events


def _refine(params, grid, tag, p0, p1, settings, m):
    outer = (p0, p1)
    dense = _retrace(params, grid, p0, p1, settings, m)
    if dense is not None:
        pairs = [(a, b) for a, b in zip(dense[:-1], dense[1:]) if a.negative_count != b.negative_count]
        if pairs:
            p0, p1 = pairs[0]
        else:
            event = _gap_event(params, grid, tag, p0, p1, settings, m, dense=dense, outer=outer)
            if event is not None:
                log.info("near-crossing on %s branch at lam=%.8f (gap %.3e, index %d -> %d)",
                         tag.value, event.lambda_star, event.gap, event.index_before, event.index_after)
                return event
    a, b = p0.lam, p1.lam
    fa, fb = p0.nearest_zero().real, p1.nearest_zero().real
    samples = _Samples(params, grid, tag, settings, m)
    samples.add(p0.lam, p0.state.z)
    samples.add(p1.lam, p1.state.z)
    bisect = not (fa * fb < 0)
    best = None
    prev = None
    for _ in range(REFINE_MAX_ITERS):
        c = 0.5 * (a + b) if bisect else b - fb * (b - a) / (fb - fa)
        try:
            c, state, spec = samples.solve(c)
        except (DivergenceError, SpectralError) as exc:
            log.warning("refinement near lam=%.8g stopped: %s", c, exc)
            break
        fc = spec.eigenvalues[spec.nearest_zero()].real
        if best is None or abs(fc) < abs(best[3]):
            best = (c, state, spec, fc)
        tol = REFINE_REL * spec.matrix_norm
        if abs(fc) <= tol and (
            (prev is not None and abs(c - prev) <= 1e-9 * max(1.0, abs(c))) or abs(fc) <= 1e-5 * tol
        ):
            break
        if bisect and abs(b - a) < 1e-12 * max(1.0, abs(c)):
            break
        prev = c
        if bisect:
            if np.sign(fc) == np.sign(fa):
                a, fa = c, fc
            else:
                b, fb = c, fc
            continue
        # Illinois: keep the root bracketed, halve the stale endpoint's weight
        if np.sign(fc) == np.sign(fb):
            fa *= 0.5
        else:
            a, fa = b, fb
        b, fb = c, fc
    if best is None:
        nearer = p0 if abs(p0.nearest_zero()) <= abs(p1.nearest_zero()) else p1
        best = (nearer.lam, nearer.state, None, nearer.nearest_zero().real)
        linsys = LinearizedSystem((-jacobian(params, grid, nearer.state.z, nearer.lam)).tocsr(), nearer.state, nearer.lam)
        best = best[:2] + (eigen_spectrum(linsys, m), best[3])
    c, state, spec, fc = best
    k = spec.nearest_zero()
    point = BranchPoint(
        lam=c,
        state=state,
        arclength=outer[0].arclength
        + (outer[1].arclength - outer[0].arclength) * (c - outer[0].lam) / (outer[1].lam - outer[0].lam),
        eigenvalues=spec.eigenvalues,
        tol_zero=spec.tol_zero,
        morse_index=spec.morse_index,
        critical_flag=spec.critical_flag,
        matrix_norm=spec.matrix_norm,
    )
    event = BifurcationEvent(
        lambda_star=float(c),
        kernel_vector=_orient_kernel(spec.eigenvectors[:, k]),
        crossing_direction=_direction(*outer),
        mu=float(fc),
        matrix_norm=spec.matrix_norm,
        point=point,
        branch_tag=tag,
        index_before=outer[0].negative_count,
        index_after=outer[1].negative_count,
        approximate=bisect or abs(fc) > REFINE_REL * spec.matrix_norm,
    )
    log.info("bifurcation on %s branch at lam=%.8f (mu=%.3e, index %d -> %d)",
             tag.value, c, fc, event.index_before, event.index_after)
    return event


def trace_branch(params, grid, start, direction=1, controls=None, lambda_max=math.inf, max_points=10_000,
                 lambda_min=-math.inf):
    """Continue a branch and attach its refined bifurcation events."""
    controls = controls or StepControls()
    branch = continue_branch(params, grid, start, direction, controls, lambda_max, max_points, lambda_min)
    events = detect_bifurcations(params, grid, branch, controls.newton, controls.m)
    return branch.with_events(events)


# ---------------------------------------------------------------- branch switching

def _left_kernel(L, mu, norm):
    shift = -max(10.0 * abs(mu), 1e-9 * norm)
    vals, vecs = spla.eigs(L.T.tocsc(), k=1, sigma=shift, which="LM", v0=np.linspace(1.0, 2.0, L.shape[0]))
    return vals[0], np.real(vecs[:, 0])


def switch_branch(
    params: ModelParams,
    grid: Grid,
    event: BifurcationEvent,
    parent_point: BranchPoint | None = None,
    amplitude: float | None = None,
    sign: int = 1,
    offset: float = 0.2,
    settings: NewtonSettings | None = None,
    m: int = 8,
    tag: BranchTag | None = None,
) -> BranchPoint:
    """Jump from a pitchfork point onto the bifurcating branch.

    The initial guess is ``parent + amplitude * kernel`` at
    ``lambda_star + offset``.  The corrector keeps the projection onto the
    kernel vector pinned at ``amplitude`` and leaves lambda free, so the
    iteration cannot slide back onto the parent branch.  The default
    amplitude is ``sign * 1e-2 * ||parent||_2``.

    Raises
    ------
    NoSwitchError
        If the parent has no (numerically) zero eigenvalue, if the kernel is
        a fold direction (``dF/dlam`` outside the range of the Jacobian), or
        if the corrected point lies on the parent branch.
    """
    parent = parent_point or event.point
    settings = settings or NewtonSettings()
    z0, lam0 = parent.state.z, parent.lam
    q = np.asarray(event.kernel_vector, dtype=float)
    q = q / np.linalg.norm(q)
    L = (-jacobian(params, grid, z0, lam0)).tocsr()
    norm = float(abs(L).sum(axis=1).max())
    if abs(event.mu) > 10 * REFINE_REL * norm:
        raise NoSwitchError(f"no kernel at lam={lam0:.6g}: smallest |mu| = {abs(event.mu):.3e}")
    mu_left, psi = _left_kernel(L, event.mu, norm)
    if abs(mu_left.real - event.mu) > 10 * REFINE_REL * norm:
        raise NoSwitchError(f"no kernel at lam={lam0:.6g}: left eigenvalue {mu_left.real:.3e}")
    zn = np.linalg.norm(z0)
    if zn > 0:
        fold = abs(psi @ z0) / (np.linalg.norm(psi) * zn)
        if fold > 1e-3:
            hint = "; the event is a near-crossing, use gap_children" if event.imperfect else ""
            raise NoSwitchError(
                f"kernel at lam={lam0:.6g} is a fold direction (|<psi, dF/dlam>| = {fold:.2e}); "
                f"no branch to switch to{hint}"
            )
    if amplitude is None:
        amplitude = sign * 1e-2 * (zn if zn > 0 else 1.0)
    if amplitude == 0:
        raise InputError("amplitude must be nonzero")

    def fun(y):
        return np.append(residual_vector(params, grid, y[:-1], y[-1]), q @ (y[:-1] - z0) - amplitude)

    def jac(y):
        z, lam = y[:-1], y[-1]
        J = jacobian(params, grid, z, lam)
        return sp.bmat([[J, sp.csc_matrix(z[:, None])], [sp.csc_matrix(q[None, :]), None]], format="csc")

    y0 = np.append(z0 + amplitude * q, lam0 + offset)
    try:
        y, _ = damped_newton(fun, jac, y0, with_settings(settings, max_condition=np.inf))
    except DivergenceError as exc:
        raise NoSwitchError(f"branch-switch corrector failed: {exc}; try a larger amplitude or offset") from exc
    z, lam = y[:-1], float(y[-1])
    # compare against the parent continued to the same lambda
    try:
        zpar, _ = damped_newton(
            lambda x: residual_vector(params, grid, x, lam),
            lambda x: jacobian(params, grid, x, lam),
            z0,
            with_settings(settings, max_condition=np.inf),
        )
        dist = np.linalg.norm(z - zpar)
    except SKTError:
        dist = np.linalg.norm(z - z0)
    if dist <= 0.1 * abs(amplitude):
        raise NoSwitchError(
            f"corrector fell back onto the parent branch (distance {dist:.3e}); try a larger amplitude or offset"
        )
    if tag is None:
        tag = BranchTag.SEGREGATION_PLUS if amplitude > 0 else BranchTag.SEGREGATION_MINUS
    state = SteadyState.from_vector(z, tag)
    hint = (np.sign(amplitude) * q, 0.0)
    return make_point(params, grid, state, lam, parent.arclength, m, tangent_hint=hint)


def gap_children(
    params: ModelParams,
    grid: Grid,
    branch: Branch,
    event: BifurcationEvent,
    controls: StepControls | None = None,
    reach: float = GAP_JUMP,
) -> tuple:
    """Start points of the two half-branches that leave a near-crossing.

    At a gap the curve arriving at ``event`` bends away instead of crossing
    (first half), and the curve that carries the branch on past the gap
    folds back (second half).  Both are followed with ``gaps="follow"`` to
    ``lambda_star + reach``.  Returns ``(plus, minus)`` ordered by the sign
    of the projection of ``state - event state`` on the kernel vector; each
    carries a tangent hint pointing away from the gap.
    """
    if not event.imperfect:
        raise InputError("gap_children needs a near-crossing event; use switch_branch")
    # short steps: the curves are a gap apart, coarse steps hop between them
    controls = controls or StepControls(ds=0.002, ds_max=0.02)
    sgn = 1.0 if event.index_after != event.index_before and branch.points[-1].lam >= event.lambda_star else -1.0
    target = event.lambda_star + sgn * reach
    lo, hi = sorted((event.lambda_star - 4 * reach, target))
    ends = []
    start = dataclasses.replace(event.point, tangent_hint=(np.zeros(2 * grid.n), sgn))
    ends.append(continue_branch(params, grid, start, 1, controls, lambda_max=hi, lambda_min=lo,
                                max_points=400, gaps="follow"))
    after = [p for p in branch.points
             if sgn * (p.lam - event.lambda_star) > 0 and p.negative_count == event.index_after]
    if not after:
        raise NoSwitchError(f"branch has no point past the gap at lam={event.lambda_star:.6g}")
    land = after[0]
    k = branch.points.index(land)
    nxt = branch.points[min(k + 1, len(branch.points) - 1)]
    back = dataclasses.replace(land, tangent_hint=(nxt.state.z - land.state.z, nxt.lam - land.lam))
    ends.append(continue_branch(params, grid, back, -1, controls, lambda_max=hi, lambda_min=lo,
                                max_points=400, gaps="follow"))
    starts = []
    for sub in ends:
        last, prev = sub.points[-1], sub.points[-2]
        if abs(last.lam - target) > 1e-9 * max(1.0, abs(target)):
            raise NoSwitchError(f"half-branch from the gap at lam={event.lambda_star:.6g} did not reach {target:.6g}")
        starts.append((last, prev))
    z0, q = event.point.state.z, event.kernel_vector
    starts.sort(key=lambda pair: -float(q @ (pair[0].state.z - z0)))
    out = []
    for (last, prev), tag in zip(starts, (BranchTag.SEGREGATION_PLUS, BranchTag.SEGREGATION_MINUS)):
        state = last.state.with_tag(tag)
        hint = (last.state.z - prev.state.z, last.lam - prev.lam)
        out.append(dataclasses.replace(last, state=state, tangent_hint=hint))
    if out[0].negative_count is None or abs(float(q @ (out[0].state.z - out[1].state.z))) == 0:
        raise NoSwitchError("gap half-branches coincide")
    return tuple(out)


# ---------------------------------------------------------------- diagnostics

def segregation_measure(state: SteadyState) -> float:
    """Overlap ratio int min(u, v) / int max(u, v) in [0, 1] (trapezoid rule, zero boundary values).

    1 means identical profiles; values near 0 mean the species occupy
    disjoint regions.
    """
    u = np.maximum(state.u, 0.0)
    v = np.maximum(state.v, 0.0)
    top = np.maximum(u, v).sum()
    if top == 0:
        raise UndefinedMeasureError("overlap ratio is undefined for the zero state")
    return float(np.minimum(u, v).sum() / top)


def point_at(
    params: ModelParams,
    grid: Grid,
    branch: Branch,
    lam: float,
    settings: NewtonSettings | None = None,
    m: int = 8,
) -> BranchPoint:
    """Solve for the branch state at ``lam`` from the two bracketing points."""
    pts = branch.points
    for p0, p1 in zip(pts[:-1], pts[1:]):
        if min(p0.lam, p1.lam) <= lam <= max(p0.lam, p1.lam) and p0.lam != p1.lam:
            if lam == p0.lam:
                return p0
            z = _finish_at(params, grid, p0.state.z, p0.lam, p1.state.z, p1.lam, lam, settings)
            w = (lam - p0.lam) / (p1.lam - p0.lam)
            s = (1 - w) * p0.arclength + w * p1.arclength
            return make_point(params, grid, SteadyState.from_vector(z, branch.tag), lam, s, m)
    raise InputError(f"lam={lam} is outside the branch range [{pts[0].lam}, {pts[-1].lam}]")


def newton_at(params: ModelParams, grid: Grid, guess: SteadyState, lam: float, settings=None) -> SteadyState:
    return newton_solve(params.with_lambda(lam), grid, guess, settings)


# ---------------------------------------------------------------- branch seeds

def trivial_start(params: ModelParams, grid: Grid, lam: float, m: int = 8) -> BranchPoint:
    return make_point(params, grid, SteadyState.zeros(grid.n), lam, m=m)


def semitrivial_start(params: ModelParams, grid: Grid, lam: float, which: str = "u", m: int = 8,
                      settings: NewtonSettings | None = None) -> BranchPoint:
    """(theta, 0) or (0, theta) with theta the logistic profile at ``lam``."""
    from .limits import solve_logistic

    b = params.b1 if which == "u" else params.c2
    theta = solve_logistic(lam, b, grid, settings)
    if theta is None:
        raise InputError(f"no semi-trivial state at lam={lam} (need lam > lambda_1^h)")
    zero = np.zeros(grid.n)
    if which == "u":
        state = SteadyState(theta, zero, BranchTag.SEMITRIVIAL_U)
    else:
        state = SteadyState(zero, theta, BranchTag.SEMITRIVIAL_V)
    return make_point(params, grid, state, lam, m=m)


def coexistence_start(params: ModelParams, grid: Grid, lam: float | None = None, m: int = 8,
                      settings: NewtonSettings | None = None) -> BranchPoint:
    """First point of the small-coexistence branch.

    The guess is ``u = v = U / alpha`` with ``U`` the limiting profile at the
    same lambda (default ``lambda_1^h + 0.3``).  A plain small sine guess of
    amplitude ``0.1 / alpha`` is too small there and Newton lands on the
    zero state.
    """
    from .limits import principal_dirichlet_eig, solve_ls1

    lam = principal_dirichlet_eig(grid) + 0.3 if lam is None else float(lam)
    prof = solve_ls1(lam, grid, settings)
    if prof is None:
        raise InputError(f"no coexistence state at lam={lam} (need lam > lambda_1^h)")
    guess = SteadyState(prof.U / params.alpha, prof.U / params.alpha, BranchTag.COEXISTENCE)
    state = newton_solve(params.with_lambda(lam), grid, guess, settings)
    if not state.is_admissible():
        raise DivergenceError(f"coexistence seed at lam={lam} converged to a non-positive state")
    return make_point(params, grid, state, lam, m=m)
