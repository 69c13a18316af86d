"""Run configuration: a flat ``key = value`` file with sections.

Every key has a default, so an empty or missing file is valid.  Values are
checked against the ranges the modules accept, and errors carry the file
name and line of the offending entry.
"""
from __future__ import annotations

import configparser
import copy
import math
import os
from dataclasses import dataclass, field

OUT_ENV = "FERMICHAIN_OUT"

# section -> key -> (type, default, check, description of the valid range)
SCHEMA = {
    "model": {
        "lambda": (float, 0.05, lambda x: abs(x) <= 0.2, "|lambda| <= 0.2"),
        "r": (float, 2.0 ** -5, lambda x: -2 < x < 2, "-2 < r < 2"),
        "gamma": (float, 2.0, lambda x: 1 < x <= 8, "1 < gamma <= 8"),
        "v": (tuple, (0.0, 0.5), lambda x: len(x) >= 1, "comma-separated v(0), v(1), ..."),
    },
    "free": {
        "L": (int, 10, lambda x: 2 <= x <= 256, "2 <= L <= 256"),
        "beta": (float, 20.0, lambda x: x > 0, "beta > 0"),
        "nt": (int, 80, lambda x: x >= 1, "nt >= 1"),
    },
    "propagator": {
        "h": (int, -3, lambda x: -30 <= x <= 0, "-30 <= h <= 0"),
        "regime": (int, 1, lambda x: x in (1, 2), "1 or 2"),
        "omega": (int, 1, lambda x: x in (-1, 1), "-1 or 1"),
        "res": (float, 1.0, lambda x: x > 0, "res > 0"),
        "npts": (int, 17, lambda x: x >= 1, "npts >= 1"),
    },
    "trees": {
        "h_root": (int, -2, lambda x: -8 <= x <= 0, "-8 <= h_root <= 0"),
        "n": (int, 3, lambda x: 1 <= x <= 5, "1 <= n <= 5"),
        "exhaustive_max": (int, 3, lambda x: 0 <= x <= 5, "0 <= exhaustive_max <= 5"),
    },
    "flow": {
        "floor": (int, -8, lambda x: -20 <= x <= -1, "-20 <= floor <= -1"),
        "depth_below": (int, 24, lambda x: x >= 20, "depth_below >= 20"),
        "window": (int, 10, lambda x: 2 <= x <= 20, "2 <= window <= 20"),
        "depth": (int, 4, lambda x: 1 <= x <= 6, "1 <= depth <= 6"),
        "size": (float, 24.0, lambda x: 8 <= x <= 96, "8 <= size <= 96"),
        "bound": (float, 4.0, lambda x: x > 0, "bound > 0"),
    },
    "ed": {
        "L": (int, 8, lambda x: 2 <= x <= 12, "2 <= L <= 12"),
        "beta": (float, 0.0, lambda x: x >= 0, "beta >= 0 (0 means 4 L)"),
        "nk0": (int, 6, lambda x: x >= 1, "nk0 >= 1"),
    },
    "crossover": {
        "kmin": (int, 3, lambda x: 2 <= x <= 20, "2 <= kmin <= 20"),
        "kmax": (int, 10, lambda x: 2 <= x <= 20, "2 <= kmax <= 20"),
    },
    "run": {
        "seed": (int, 0, lambda x: x >= 0, "seed >= 0"),
        "out": (str, "out", lambda x: bool(x), "non-empty path"),
    },
}


class ConfigError(ValueError):
    """Invalid configuration entry; the message starts with ``file:line``."""


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {
        sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()})
    source: str = "<defaults>"

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    @property
    def out(self):
        return self.values["run"]["out"]

    def copy(self):
        return RunConfig(copy.deepcopy(self.values), self.source)

    def as_dict(self):
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
                for s, d in self.values.items()}


def _convert(kind, raw):
    if kind is tuple:
        return tuple(float(p) for p in raw.split(",") if p.strip())
    if kind is int:
        return int(raw, 10)
    if kind is float:
        x = float(raw)
        if not math.isfinite(x):
            raise ValueError("not finite")
        return x
    return raw


def coerce(section, key, raw, where):
    """Parse and range-check one entry; ``where`` prefixes error messages."""
    if section not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key '{key}' in [{section}]")
    kind, _, check, desc = SCHEMA[section][key]
    try:
        val = _convert(kind, raw) if isinstance(raw, str) else kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: {section}.{key} = {raw!r} is not a valid "
                          f"{kind.__name__}") from None
    if not check(val):
        raise ConfigError(f"{where}: {section}.{key} = {raw!r} out of range ({desc})")
    return val


def _line_index(text):
    """``(section, key) -> line number`` for every assignment in ``text``."""
    index, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            index[(section, None)] = n
            continue
        for sep in ("=", ":"):
            if sep in s:
                index[(section, s.split(sep, 1)[0].strip())] = n
                break
    return index


def load_config(path=None):
    """Defaults, overlaid by the file at ``path`` and by ``FERMICHAIN_OUT``."""
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            text = fh.read()
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                           inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.ParsingError as exc:
            n, line = exc.errors[0]
            raise ConfigError(f"{path}:{n}: cannot parse {line}") from None
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", "?")
            raise ConfigError(f"{path}:{lineno}: {exc.message}") from None
        lines = _line_index(text)
        for section in parser.sections():
            for key, raw in parser.items(section):
                n = lines.get((section, key), lines.get((section, None), "?"))
                val = coerce(section, key, raw, f"{path}:{n}")
                cfg.values[section][key] = val
        cfg.source = str(path)
    if os.environ.get(OUT_ENV):
        cfg.values["run"]["out"] = os.environ[OUT_ENV]
    return cfg


def override(cfg: RunConfig, section, key, value, flag):
    """Apply a command-line override with the flag name as error location."""
    if value is not None:
        cfg.values[section][key] = coerce(section, key, value, flag)
