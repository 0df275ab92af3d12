"""Run configuration: flat `key = value` lines under `[section]` headers.

Comments start with '#' or ';'.  Unknown sections or keys, duplicates and
malformed values are errors carrying the offending line number.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError


def _float(s):
    return float(s)


def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _auto_float(s):
    return None if s.strip().lower() == "auto" else float(s)


def _auto_floats(s):
    return None if s.strip().lower() == "auto" else _floats(s)


def _choice(*opts):
    def parse(s):
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return s
    return parse


SCHEMA = {
    "equilibrium": {
        "family": (_choice("classical", "anisotropic", "oscillatory"), "classical"),
        "d": (int, 1),
        "gamma": (_auto_float, None),
        "beta": (_auto_float, None),
        "asymmetry_plus": (_float, 1.0),
        "asymmetry_minus": (_float, 1.0),
        "sigma_osc": (_float, 3.0),
        "amplitude": (_float, 0.5),
        "allow_out_of_range": (_bool, False),
    },
    "grid": {
        "n": (int, 512),
        "vmax": (_auto_float, None),
        "stretch": (_float, 1.0),
        "r0": (_float, 50.0),
        "c": (_float, 8.0),
    },
    "sweep": {
        "etas": (_auto_floats, None),
        "n_points": (int, 8),
        "eta_top": (_float, 1e-2),
        "tol": (_float, 1e-12),
    },
    "limit": {
        "s_min": (_float, 1e-3),
        "s_max": (_float, 30.0),
        "n": (int, 4000),
        "cut": (_float, 1.0),
    },
    "drift": {
        "eps": (_floats, [1e-4, 1e-6, 1e-8, 1e-10, 1e-12]),
    },
    "propagator": {
        "xi": (_floats, [0.5, 1.0, 2.0]),
        "t": (_floats, [0.5, 1.0, 2.0]),
        "eps": (_floats, [1e-2, 3e-3, 1e-3]),
        "rel_change": (_float, 1e-3),
        "reference": (_choice("analytic", "fitted"), "analytic"),
    },
    "montecarlo": {
        "n": (int, 100_000),
        "dt": (_float, 1e-2),
        "eps": (_float, 3e-3),
        "t_macro": (_float, 1.0),
        "seed": (int, 0),
        "xi": (_floats, [1.0]),
        "n_boot": (int, 200),
        "snapshot": (_bool, True),
    },
    "tolerances": {
        "kappa_spread": (_float, 0.05),
        "alpha_rel": (_float, 0.05),
        "cf_slack": (_float, 0.10),
        "ks": (_float, 0.02),
    },
    "output": {
        "dir": (str, "out"),
    },
}


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    source: Optional[str] = None

    def __getitem__(self, section):
        return self.sections[section]

    def get(self, section, key):
        return self.sections[section][key]

    @property
    def d(self) -> int:
        return self.sections["equilibrium"]["d"]

    @property
    def gamma(self) -> float:
        eq = self.sections["equilibrium"]
        return eq["gamma"] if eq["gamma"] is not None else 0.5 * eq["beta"]


def _blank() -> RunConfig:
    return RunConfig({sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()})


def defaults() -> RunConfig:
    return parse_config("", "<defaults>")


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cfg = _blank()
    cfg.source = source
    seen = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any section")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} in [{section}]")
        seen.add((section, key))
        try:
            cfg.sections[section][key] = SCHEMA[section][key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {section}.{key}: {exc}") from None
    eq = cfg.sections["equilibrium"]
    if eq["gamma"] is None and eq["beta"] is None:
        eq["gamma"] = 2.0
    if eq["gamma"] is not None and eq["beta"] is not None and abs(2 * eq["gamma"] - eq["beta"]) > 1e-12:
        raise ConfigError(f"{source}: gamma and beta given inconsistently (beta must be 2 gamma)")
    if eq["d"] < 1:
        raise ConfigError(f"{source}: d must be a positive integer")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
