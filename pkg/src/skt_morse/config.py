"""Run configuration: an INI-style key/value file plus command-line overrides.

Example (every key optional; shown with defaults)::

    [model]
    alpha = 20
    b1 = 3
    b2 = 2
    c1 = 2
    c2 = 1
    ell = 0.5

    [grid]
    n = 400

    [continuation]
    ds = 0.05
    ds_min = 1e-8
    ds_max = 0.5
    grow = 1.3
    m = 8
    lambda_min = 5
    lambda_max = 120
    switch_amplitude = 0.01
    switch_offset = 0.2
    gaps = jump

    [run]
    branches = trivial, semitrivial_u, semitrivial_v, coexistence, segregation_2, segregation_3
    output_dir = out
    seed = 0
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .continuation import StepControls
from .errors import ConfigError, InputError
from .model import ModelParams, reference_setting

BRANCHES = ("trivial", "semitrivial_u", "semitrivial_v", "coexistence", "segregation_2", "segregation_3")

_SCHEMA = {
    "model": {"alpha": float, "b1": float, "b2": float, "c1": float, "c2": float, "ell": float},
    "grid": {"n": int},
    "continuation": {
        "ds": float, "ds_min": float, "ds_max": float, "grow": float, "m": int,
        "lambda_min": float, "lambda_max": float, "switch_amplitude": float, "switch_offset": float,
        "gaps": str,
    },
    "run": {"branches": str, "output_dir": str, "seed": int},
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = field(default_factory=reference_setting)
    n: int = 400
    controls: StepControls = field(default_factory=StepControls)
    lambda_min: float = 5.0
    lambda_max: float = 120.0
    switch_amplitude: float = 1e-2
    switch_offset: float = 0.2
    gaps: str = "jump"
    branches: tuple = BRANCHES
    output_dir: Path = Path("out")
    seed: int = 0

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError(f"n must be >= 3, got {self.n}")
        if not self.lambda_min < self.lambda_max:
            raise ConfigError("lambda_min must be below lambda_max")
        if not self.switch_amplitude > 0:
            raise ConfigError("switch_amplitude must be positive")
        if self.gaps not in ("jump", "follow"):
            raise ConfigError(f"gaps must be 'jump' or 'follow', got {self.gaps!r}")
        unknown = set(self.branches) - set(BRANCHES)
        if unknown:
            raise ConfigError(f"unknown branches: {', '.join(sorted(unknown))}")

    @property
    def m(self) -> int:
        return self.controls.m

    def as_dict(self) -> dict:
        return {
            "model": self.model.as_dict(),
            "n": self.n,
            "controls": {k: v for k, v in dataclasses.asdict(self.controls).items() if k != "newton"},
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "switch_amplitude": self.switch_amplitude,
            "switch_offset": self.switch_offset,
            "gaps": self.gaps,
            "branches": list(self.branches),
            "seed": self.seed,
        }


def parse_branches(text: str) -> tuple:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    if not names:
        raise ConfigError("branch list is empty")
    return names


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (if given), apply ``overrides`` and validate.

    ``overrides`` uses flat keys: ``alpha``, ``n``, ``lambda_max``,
    ``output_dir``, ``branches``, ``seed`` and any other schema key.

    Raises
    ------
    ConfigError
        Unknown section or key, unparsable value, or a value outside its
        allowed range.
    """
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                try:
                    values[key] = _SCHEMA[section][key](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    known = {k for keys in _SCHEMA.values() for k in keys}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown override {key!r}")
        values[key] = value
    return _build(values)


def _build(values: dict) -> RunConfig:
    try:
        base = reference_setting()
        model = dataclasses.replace(base, **{k: float(values[k]) for k in _SCHEMA["model"] if k in values})
        ctl = {k: values[k] for k in ("ds", "ds_min", "ds_max", "grow", "m") if k in values}
        controls = StepControls(**ctl)
        kwargs = {k: values[k] for k in ("n", "lambda_min", "lambda_max", "switch_amplitude",
                                          "switch_offset", "gaps", "seed") if k in values}
        if "branches" in values:
            b = values["branches"]
            kwargs["branches"] = parse_branches(b) if isinstance(b, str) else tuple(b)
        if "output_dir" in values:
            kwargs["output_dir"] = Path(values["output_dir"])
        return RunConfig(model=model, controls=controls, **kwargs)
    except InputError as exc:
        raise ConfigError(str(exc)) from exc
