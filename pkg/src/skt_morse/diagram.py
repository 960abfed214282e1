"""Trace the standard branch set and write the bifurcation-diagram files.

Branch names: ``trivial``, ``semitrivial_u``, ``semitrivial_v``,
``coexistence`` and ``segregation_j`` for j >= 2, which expands to the two
halves ``segregation_j_plus`` / ``segregation_j_minus`` leaving the j-th
event of the coexistence branch.
"""

from __future__ import annotations

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .continuation import (
    Branch,
    coexistence_start,
    continue_branch,
    detect_bifurcations,
    gap_children,
    semitrivial_start,
    switch_branch,
    trivial_start,
)
from .errors import ConfigError, InputError, NoSwitchError, SKTError, StallError
from .limits import principal_dirichlet_eig
from .model import Grid

log = logging.getLogger(__name__)

#: offset above lambda_1^h where the branches leaving the trivial state are started
ONSET_OFFSET = 0.3

EXIT_OK, EXIT_STALL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4


@dataclass
class DiagramResult:
    branches: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def status(self) -> int:
        if any(e["kind"] != "stall" for e in self.errors):
            return EXIT_NUMERICAL
        return EXIT_STALL if self.errors else EXIT_OK


def segregation_level(name: str) -> int:
    try:
        j = int(name.rsplit("_", 1)[1])
    except (IndexError, ValueError):
        raise InputError(f"not a segregation branch name: {name!r}") from None
    if j < 2:
        raise InputError("segregation branches start at j = 2")
    return j


class Tracer:
    """Traces named branches for one configuration; the coexistence branch is shared."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.params = config.model
        self.grid = Grid(config.n, config.model.ell)
        self.lambda_1 = principal_dirichlet_eig(self.grid)
        self._coex = None
        self._lock = threading.Lock()

    @property
    def onset(self) -> float:
        return max(self.lambda_1 + ONSET_OFFSET, self.config.lambda_min)

    def _continue(self, start, lambda_max=None):
        cfg = self.config
        lam_max = cfg.lambda_max if lambda_max is None else lambda_max
        branch = continue_branch(self.params, self.grid, start, 1, cfg.controls, lambda_max=lam_max, gaps=cfg.gaps)
        events = detect_bifurcations(self.params, self.grid, branch, cfg.controls.newton, cfg.m)
        return branch.with_events(events)

    def trivial(self, lambda_max=None) -> Branch:
        start = trivial_start(self.params, self.grid, self.config.lambda_min, self.config.m)
        return self._continue(start, lambda_max)

    def semitrivial(self, which: str, lambda_max=None) -> Branch:
        start = semitrivial_start(self.params, self.grid, self.onset, which, self.config.m)
        return self._continue(start, lambda_max)

    def coexistence(self) -> Branch:
        with self._lock:
            if self._coex is None:
                start = coexistence_start(self.params, self.grid, self.onset, self.config.m)
                self._coex = self._continue(start)
            return self._coex

    def segregation_starts(self, j: int) -> tuple:
        """Start points (plus, minus) of the two halves leaving the j-th coexistence event."""
        coex = self.coexistence()
        events = [e for e in coex.events if e.index_before == j - 1 and e.index_after == j]
        if not events:
            raise NoSwitchError(f"coexistence branch has no event with index {j - 1} -> {j} below "
                                f"lambda_max={self.config.lambda_max}")
        ev = events[0]
        if ev.imperfect:
            return gap_children(self.params, self.grid, coex, ev)
        cfg = self.config
        amp = cfg.switch_amplitude * float(np.linalg.norm(ev.point.state.z))
        return tuple(
            switch_branch(self.params, self.grid, ev, amplitude=s * amp, offset=cfg.switch_offset, m=cfg.m)
            for s in (1, -1)
        )

    def segregation(self, j: int, lambda_max=None) -> tuple:
        return tuple(self._continue(start, lambda_max) for start in self.segregation_starts(j))

    def trace(self, name: str, lambda_max=None) -> dict:
        """Named branch(es) as ``{file stem: Branch}``."""
        if name == "trivial":
            return {name: self.trivial(lambda_max)}
        if name in ("semitrivial_u", "semitrivial_v"):
            return {name: self.semitrivial(name[-1], lambda_max)}
        if name == "coexistence":
            return {name: self.coexistence()}
        if name.startswith("segregation_"):
            plus, minus = self.segregation(segregation_level(name), lambda_max)
            return {f"{name}_plus": plus, f"{name}_minus": minus}
        raise InputError(f"unknown branch {name!r}")


def thread_count() -> int:
    """Worker count from ``SKT_MORSE_THREADS`` (default 1)."""
    raw = os.environ.get("SKT_MORSE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"SKT_MORSE_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError("SKT_MORSE_THREADS must be >= 1")
    return value


def _needs_onset(name: str) -> bool:
    return name != "trivial"


def run_diagram(config: RunConfig, write: bool = True) -> DiagramResult:
    """Trace every configured branch and (optionally) write the output files.

    Files in ``config.output_dir``: ``branch_<name>.csv`` per branch,
    ``events.json``, ``diagram.csv``, ``errors.json`` and ``run.json``.
    A stalled branch keeps its partial points and adds an error record.
    """
    tracer = Tracer(config)
    result = DiagramResult()
    names = [n for n in config.branches if not (_needs_onset(n) and config.lambda_max <= tracer.onset)]
    skipped = [n for n in config.branches if n not in names]
    if skipped:
        log.info("lambda_max=%g is below the onset %.4f; skipping %s", config.lambda_max, tracer.onset, skipped)

    def job(name):
        try:
            return name, tracer.trace(name), None
        except StallError as exc:
            err = {"branch": name, "kind": "stall", "message": str(exc)}
            partial = exc.branch
            if partial is None or len(partial) < 2:
                return name, {}, err
            try:
                events = detect_bifurcations(tracer.params, tracer.grid, partial, config.controls.newton, config.m)
                partial = partial.with_events(events)
            except SKTError as inner:
                log.warning("event detection on the partial %s branch failed: %s", name, inner)
            return name, {name: partial}, err
        except SKTError as exc:
            return name, {}, {"branch": name, "kind": type(exc).__name__, "message": str(exc)}

    threads = thread_count()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(job, names))
    for name, traced, err in outcomes:
        result.branches.update(traced)
        if err:
            result.errors.append(err)
    result.events = {stem: list(branch.events) for stem, branch in result.branches.items()}
    if write:
        _write(config, tracer.grid, result)
    return result


def _write(config: RunConfig, grid: Grid, result: DiagramResult):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stem, branch in result.branches.items():
        result.files.append(io.write_branch_csv(out / f"branch_{stem}.csv", branch, grid))
    records = [io.event_record(stem, e) for stem, evs in result.events.items() for e in evs]
    result.files.append(io.write_json(out / "events.json", records))
    result.files.append(io.write_diagram_csv(out / "diagram.csv", result.branches.items(), grid))
    result.files.append(io.write_json(out / "errors.json", result.errors))
    result.files.append(io.write_json(out / "run.json", {"config": config.as_dict(), "seed": config.seed,
                                                        "status": result.status}))
