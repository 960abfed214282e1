"""CSV and JSON files: state snapshots, branch tables, event lists and diagram data.

Floats are written with ``repr`` (shortest round-tripping form), so reading
a file back gives bit-identical values and reruns give byte-identical files.

Branch table columns
--------------------
arclength      cumulative weighted arclength (ordering only)
lambda         continuation parameter
l2_norm_u      discrete L2 norm of u
l2_norm_v      discrete L2 norm of v
sup_u, sup_v   max-norms
morse_index    eigenvalues with Re mu < -tol_zero
critical_flag  1 if an eigenvalue lies in the zero band
overlap_ratio  sum min(u, v) / sum max(u, v); nan for the zero state

Diagram columns
---------------
branch, point, lambda, l2_norm (of the pair), morse_index, color_class
(min(index, 3)), color (blue, red, green, lightblue).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ParseError, UndefinedMeasureError
from .model import BranchTag, Grid, ModelParams, SteadyState

BRANCH_COLUMNS = (
    "arclength", "lambda", "l2_norm_u", "l2_norm_v", "sup_u", "sup_v",
    "morse_index", "critical_flag", "overlap_ratio",
)
DIAGRAM_COLUMNS = ("branch", "point", "lambda", "l2_norm", "morse_index", "color_class", "color")
COLORS = ("blue", "red", "green", "lightblue")


def _f(x: float) -> str:
    return repr(float(x))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


# ---------------------------------------------------------------- snapshots

def save_snapshot(
    path,
    state: SteadyState,
    grid: Grid,
    params: ModelParams | None = None,
    morse_index: int | None = None,
    extra: dict | None = None,
) -> Path:
    """Write ``x,u,v`` rows to ``path`` and metadata to ``path + '.json'``."""
    path = Path(path)
    if state.n != grid.n:
        raise ValueError(f"state has {state.n} nodes, grid has {grid.n}")
    lines = ["x,u,v"]
    lines += [f"{_f(x)},{_f(u)},{_f(v)}" for x, u, v in zip(grid.nodes, state.u, state.v)]
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "n": grid.n,
        "ell": grid.ell,
        "branch_tag": state.tag.value,
        "morse_index": morse_index,
        "params": params.as_dict() if params is not None else None,
    }
    if extra:
        meta.update(extra)
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_snapshot(path, with_meta: bool = False):
    """Read a snapshot written by :func:`save_snapshot`.

    Returns the state, or ``(state, meta)`` with ``with_meta``.

    Raises
    ------
    ParseError
        On a bad header, a row that is not three floats, or a sidecar that
        disagrees with the table.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    rows = text.splitlines()
    if not rows or rows[0].strip() != "x,u,v":
        raise ParseError("expected header 'x,u,v'", line=1)
    xs, us, vs = [], [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        parts = row.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 fields, got {len(parts)}", line=i)
        try:
            x, u, v = (float(p) for p in parts)
        except ValueError:
            raise ParseError(f"non-numeric field in {row!r}", line=i) from None
        xs.append(x), us.append(u), vs.append(v)
    if len(us) < 3:
        raise ParseError("snapshot needs at least 3 rows", line=len(rows))
    meta = {}
    side = _sidecar(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad sidecar {side.name}: {exc.msg}", line=exc.lineno) from exc
        if meta.get("n") not in (None, len(us)):
            raise ParseError(f"sidecar says n={meta['n']} but table has {len(us)} rows")
    tag = meta.get("branch_tag") or BranchTag.COEXISTENCE.value
    try:
        state = SteadyState(np.array(us), np.array(vs), BranchTag(tag))
    except ValueError as exc:
        raise ParseError(f"bad branch tag {tag!r}") from exc
    meta.setdefault("x", xs)
    return (state, meta) if with_meta else state


def snapshot_grid(meta: dict) -> Grid:
    return Grid(int(meta["n"]), float(meta.get("ell", 0.5)))


def snapshot_params(meta: dict) -> ModelParams | None:
    p = meta.get("params")
    return ModelParams(**p) if p else None


# ---------------------------------------------------------------- branches

def _overlap(state) -> float:
    from .continuation import segregation_measure

    try:
        return segregation_measure(state)
    except UndefinedMeasureError:
        return math.nan


def branch_rows(branch, grid: Grid) -> list:
    rows = []
    for p in branch.points:
        st = p.state
        rows.append((
            p.arclength, p.lam, grid.l2_norm(st.u), grid.l2_norm(st.v),
            float(np.max(np.abs(st.u))), float(np.max(np.abs(st.v))),
            p.morse_index, int(bool(p.critical_flag)), _overlap(st),
        ))
    return rows


def write_branch_csv(path, branch, grid: Grid) -> Path:
    path = Path(path)
    out = [",".join(BRANCH_COLUMNS)]
    for r in branch_rows(branch, grid):
        out.append(",".join([_f(r[0]), _f(r[1]), _f(r[2]), _f(r[3]), _f(r[4]), _f(r[5]),
                             str(r[6]), str(r[7]), _f(r[8])]))
    path.write_text("\n".join(out) + "\n")
    return path


def read_branch_csv(path) -> dict:
    """Columns of a branch table as numpy arrays keyed by column name."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != BRANCH_COLUMNS:
            raise ParseError(f"unexpected header {header}", line=1)
        data = {c: [] for c in BRANCH_COLUMNS}
        for i, row in enumerate(reader, start=2):
            if len(row) != len(BRANCH_COLUMNS):
                raise ParseError(f"expected {len(BRANCH_COLUMNS)} fields, got {len(row)}", line=i)
            try:
                for c, v in zip(BRANCH_COLUMNS, row):
                    data[c].append(int(v) if c in ("morse_index", "critical_flag") else float(v))
            except ValueError:
                raise ParseError(f"bad value in row {row}", line=i) from None
    return {c: np.array(v) for c, v in data.items()}


def event_record(name: str, event) -> dict:
    rec = {
        "branch": name,
        "lambda_star": float(event.lambda_star),
        "crossing_direction": int(event.crossing_direction),
        "mu": float(event.mu),
        "index_before": int(event.index_before),
        "index_after": int(event.index_after),
        "approximate": bool(event.approximate),
        "imperfect": bool(event.imperfect),
    }
    if event.imperfect:
        rec["gap"] = float(event.gap)
    return rec


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_events(path) -> list:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(data, list) or any(
        not isinstance(r, dict) or not {"branch", "lambda_star", "crossing_direction"} <= set(r) for r in data
    ):
        raise ParseError("events file must be a list of records with branch, lambda_star, crossing_direction")
    return data


def color_class(index: int) -> int:
    return min(int(index), 3)


def diagram_rows(named_branches, grid: Grid) -> list:
    rows = []
    for name, branch in named_branches:
        for i, p in enumerate(branch.points):
            norm = math.hypot(grid.l2_norm(p.state.u), grid.l2_norm(p.state.v))
            c = color_class(p.morse_index)
            rows.append((name, i, p.lam, norm, p.morse_index, c, COLORS[c]))
    return rows


def write_diagram_csv(path, named_branches, grid: Grid) -> Path:
    path = Path(path)
    out = [",".join(DIAGRAM_COLUMNS)]
    for r in diagram_rows(named_branches, grid):
        out.append(f"{r[0]},{r[1]},{_f(r[2])},{_f(r[3])},{r[4]},{r[5]},{r[6]}")
    path.write_text("\n".join(out) + "\n")
    return path


def read_diagram_csv(path) -> list:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DIAGRAM_COLUMNS:
            raise ParseError(f"unexpected header {header}", line=1)
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(DIAGRAM_COLUMNS):
                raise ParseError(f"expected {len(DIAGRAM_COLUMNS)} fields, got {len(row)}", line=i)
            try:
                rows.append((row[0], int(row[1]), float(row[2]), float(row[3]), int(row[4]), int(row[5]), row[6]))
            except ValueError:
                raise ParseError(f"bad value in row {row}", line=i) from None
    return rows


def write_series_csv(path, columns, series) -> Path:
    path = Path(path)
    out = [",".join(columns)]
    for row in zip(*series):
        out.append(",".join(_f(x) for x in row))
    path.write_text("\n".join(out) + "\n")
    return path
