"""INI-style run configuration with strict key checking."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .model import ModelParams, ParameterError


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list:
    return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


# section -> key -> (parser, default)
SCHEMA = {
    "grid": {"n_cells": (int, 200)},
    "equilibrium": {"tol": (float, 1e-8), "max_iter": (int, 25)},
    "evolve": {
        "stepper": (str, "mol"),
        "initial": (str, "uniform"),
        "t_end": (float, 1e3),
        "rtol": (float, 1e-6),
        "atol": (float, 1e-8),
        "form": (str, "gradient"),
        "stop_when_stationary": (_bool, True),
        "tau": (float, 1e-2),
        "n_steps": (int, 100),
        "mass_conserving": (_bool, True),
        "snapshot_every": (int, 0),
    },
    "sweep": {
        "axis": (str, "epsilon"),
        "values": (_floats, [0.005, 0.007, 0.01, 0.014, 0.02, 0.028]),
        "newton_tol": (float, 1e-8),
        "t_max": (float, 1e6),
    },
    "stability": {
        "count": (int, 10),
        "perturbation": (_bool, False),
        "eps_values": (_floats, []),
    },
}

MODEL_KEYS = ("d", "eps_r", "eps_b", "D_r", "D_b", "N_r", "N_b", "v_r", "v_b", "x_lo", "x_hi")

CHOICES = {
    ("evolve", "stepper"): ("mol", "regularized"),
    ("evolve", "initial"): ("uniform", "pointparticle"),
    ("evolve", "form"): ("gradient", "general"),
    ("sweep", "axis"): ("theta_r", "epsilon"),
}


@dataclass
class RunConfig:
    params: ModelParams
    sections: dict
    text: str = ""
    source: str = ""
    model_raw: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.sections[section][key]

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def echo(self) -> dict:
        out = {"model": self.params.to_mapping()}
        for sec, vals in self.sections.items():
            out[sec] = dict(vals)
        return out


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate configuration text; every problem raises :class:`ConfigError`."""
    # keys are case sensitive (D_r vs d)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    allowed = set(SCHEMA) | {"model"}
    unknown_sections = [s for s in cp.sections() if s not in allowed]
    if unknown_sections:
        raise ConfigError(f"{source}: unknown section(s) {unknown_sections}")
    model_raw = dict(cp["model"]) if cp.has_section("model") else {}
    bad = sorted(set(model_raw) - set(MODEL_KEYS))
    if bad:
        raise ConfigError(f"{source}: unknown key(s) in [model]: {bad}")
    try:
        params = ModelParams.from_mapping(model_raw)
    except (ParameterError, ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: [model]: {exc}") from exc
    sections = {}
    for sec, spec in SCHEMA.items():
        raw = dict(cp[sec]) if cp.has_section(sec) else {}
        bad = sorted(set(raw) - set(spec))
        if bad:
            raise ConfigError(f"{source}: unknown key(s) in [{sec}]: {bad}")
        vals = {}
        for key, (conv, default) in spec.items():
            if key in raw:
                try:
                    vals[key] = conv(raw[key])
                except ValueError as exc:
                    raise ConfigError(f"{source}: [{sec}] {key}: {exc}") from exc
            else:
                vals[key] = list(default) if isinstance(default, list) else default
            choices = CHOICES.get((sec, key))
            if choices and vals[key] not in choices:
                raise ConfigError(f"{source}: [{sec}] {key} must be one of {choices}, got {vals[key]!r}")
        sections[sec] = vals
    _check_ranges(sections, source)
    return RunConfig(params, sections, text, source, model_raw)


def _check_ranges(s: dict, source: str):
    def need(cond, msg):
        if not cond:
            raise ConfigError(f"{source}: {msg}")

    need(s["grid"]["n_cells"] >= 4, "[grid] n_cells must be at least 4")
    need(s["equilibrium"]["tol"] > 0, "[equilibrium] tol must be positive")
    need(s["equilibrium"]["max_iter"] >= 1, "[equilibrium] max_iter must be positive")
    ev = s["evolve"]
    need(ev["t_end"] > 0, "[evolve] t_end must be positive")
    need(ev["rtol"] > 0 and ev["atol"] > 0, "[evolve] tolerances must be positive")
    need(ev["tau"] > 0, "[evolve] tau must be positive")
    need(ev["n_steps"] >= 1, "[evolve] n_steps must be positive")
    need(ev["snapshot_every"] >= 0, "[evolve] snapshot_every must be nonnegative")
    sw = s["sweep"]
    need(len(sw["values"]) >= 1, "[sweep] values must not be empty")
    need(sw["values"] == sorted(sw["values"]), "[sweep] values must be sorted")
    need(sw["newton_tol"] > 0 and sw["t_max"] > 0, "[sweep] newton_tol and t_max must be positive")
    st = s["stability"]
    need(st["count"] >= 1, "[stability] count must be positive")
    need(all(e > 0 for e in st["eps_values"]), "[stability] eps_values must be positive")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not valid UTF-8 text") from exc
    return parse_config(text, str(path))


def default_config() -> RunConfig:
    return parse_config("", "<defaults>")
