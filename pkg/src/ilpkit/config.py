"""Experiment configuration files.

Flat INI-style key/value text with three sections::

    [model]
    name = ts2-tracking
    lambda = 0.5
    gamma = 5200.0

    [run]
    delta = 1.0
    steps = 25
    reps = 2000
    master_seed = 20240901
    x0 = sample            ; or explicit: 200.0, 0, 0, 0, 50.0, 0
    x0_seed = 7
    sigma0 = zero          ; or rows: 1,0;0,1

    [output]
    dir = out

Unknown sections, keys, or model parameters are rejected with the offending
key and line number.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import MODEL_SCHEMAS

__all__ = ["ExperimentConfig", "load_config", "require_mc_reps"]

_RUN_KEYS = {"delta", "steps", "reps", "master_seed", "x0", "x0_seed", "sigma0"}
_OUTPUT_KEYS = {"dir", "note"}


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment description."""

    model_name: str
    model_params: dict = field(default_factory=dict)
    delta: float = 1.0
    steps: int = 25
    reps: int = 2
    master_seed: int = 0
    x0: np.ndarray | None = None  # None means "sample from the model"
    x0_seed: int | None = None
    sigma0: np.ndarray | str = "zero"
    out_dir: Path = Path("out")
    note: str = ""
    source: Path | None = None

    def sigma0_matrix(self, dim: int) -> np.ndarray:
        if isinstance(self.sigma0, str):
            return np.zeros((dim, dim))
        m = np.asarray(self.sigma0, dtype=float)
        if m.shape != (dim, dim):
            raise ConfigError(
                "sigma0 has shape %s but the model dimension is %d" % (m.shape, dim),
                section="run",
                key="sigma0",
            )
        return m

    def echo_lines(self) -> list[str]:
        """Canonical key=value lines for report reproduction."""
        lines = ["model.name = %s" % self.model_name]
        for key in sorted(self.model_params):
            lines.append("model.%s = %.17g" % (key, self.model_params[key]))
        lines.append("run.delta = %.17g" % self.delta)
        lines.append("run.steps = %d" % self.steps)
        lines.append("run.reps = %d" % self.reps)
        lines.append("run.master_seed = %d" % self.master_seed)
        if self.x0 is None:
            lines.append("run.x0 = sample")
            lines.append("run.x0_seed = %s" % ("none" if self.x0_seed is None else self.x0_seed))
        else:
            lines.append("run.x0 = %s" % ", ".join("%.17g" % v for v in self.x0))
        if isinstance(self.sigma0, str):
            lines.append("run.sigma0 = zero")
        else:
            rows = ";".join(",".join("%.17g" % v for v in row) for row in np.asarray(self.sigma0))
            lines.append("run.sigma0 = %s" % rows)
        if self.note:
            lines.append("output.note = %s" % self.note)
        return lines


def _key_line(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and len(stripped) > len(key):
            rest = stripped[len(key) :].lstrip()
            if rest.startswith("=") or rest.startswith(":"):
                return i
    return None


def _parse_vector(raw: str, *, key: str, line: int | None) -> np.ndarray:
    try:
        return np.array([float(v) for v in raw.replace(";", ",").split(",") if v.strip() != ""])
    except ValueError as exc:
        raise ConfigError("cannot parse %r as a vector" % raw, key=key, line=line) from exc


def _parse_matrix(raw: str, *, key: str, line: int | None) -> np.ndarray:
    try:
        rows = [
            [float(v) for v in row.split(",") if v.strip() != ""]
            for row in raw.split(";")
            if row.strip() != ""
        ]
        m = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ConfigError("cannot parse %r as a matrix" % raw, key=key, line=line) from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError("sigma0 must be square (rows separated by ';')", key=key, line=line)
    return m


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment configuration file.

    Raises :class:`ConfigError` with section/key/line diagnostics on any
    unknown key, missing requirement, or malformed value.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (path, exc)) from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError("malformed config file: %s" % exc) from exc

    known_sections = {"model", "run", "output"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError("unknown section", section=section)

    if not parser.has_section("model") or not parser.has_option("model", "name"):
        raise ConfigError("missing required key", section="model", key="name")
    name = parser.get("model", "name").strip()
    if name not in MODEL_SCHEMAS:
        raise ConfigError(
            "unknown model %r; built-ins: %s" % (name, ", ".join(sorted(MODEL_SCHEMAS))),
            section="model",
            key="name",
            line=_key_line(text, "name"),
        )
    schema = MODEL_SCHEMAS[name]
    params = {}
    for key, raw in parser.items("model"):
        if key == "name":
            continue
        if key not in schema:
            raise ConfigError(
                "unknown parameter for model %r" % name,
                section="model",
                key=key,
                line=_key_line(text, key),
            )
        try:
            params[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(
                "cannot parse %r as a number" % raw,
                section="model",
                key=key,
                line=_key_line(text, key),
            ) from exc

    cfg = ExperimentConfig(model_name=name, model_params=params, source=path)

    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            line = _key_line(text, key)
            if key not in _RUN_KEYS:
                raise ConfigError("unknown key", section="run", key=key, line=line)
            raw = raw.strip()
            try:
                if key == "delta":
                    cfg.delta = float(raw)
                elif key == "steps":
                    cfg.steps = int(raw)
                elif key == "reps":
                    cfg.reps = int(raw)
                elif key == "master_seed":
                    cfg.master_seed = int(raw)
                elif key == "x0_seed":
                    cfg.x0_seed = int(raw)
                elif key == "x0":
                    cfg.x0 = None if raw.lower() == "sample" else _parse_vector(raw, key=key, line=line)
                elif key == "sigma0":
                    cfg.sigma0 = "zero" if raw.lower() == "zero" else _parse_matrix(raw, key=key, line=line)
            except ValueError as exc:
                raise ConfigError(
                    "cannot parse %r" % raw, section="run", key=key, line=line
                ) from exc

    if parser.has_section("output"):
        for key, raw in parser.items("output"):
            line = _key_line(text, key)
            if key not in _OUTPUT_KEYS:
                raise ConfigError("unknown key", section="output", key=key, line=line)
            if key == "dir":
                cfg.out_dir = Path(raw.strip())
            elif key == "note":
                cfg.note = raw.strip()

    _validate(cfg, text)
    return cfg


def _validate(cfg: ExperimentConfig, text: str) -> None:
    if cfg.steps < 1:
        raise ConfigError(
            "steps must be >= 1", section="run", key="steps", line=_key_line(text, "steps")
        )
    if not cfg.delta > 0.0:
        raise ConfigError(
            "delta must be positive", section="run", key="delta", line=_key_line(text, "delta")
        )


def require_mc_reps(cfg: ExperimentConfig) -> None:
    """Monte Carlo commands need at least two repetitions."""
    if cfg.reps < 2:
        raise ConfigError("reps must be >= 2 for Monte Carlo runs", section="run", key="reps")
