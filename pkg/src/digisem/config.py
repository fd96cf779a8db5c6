"""Flat ``section.key = value`` experiment configuration.

Every key has a default and a parser in :data:`SCHEMA`; files and overrides
may only set known keys. ``#`` starts a comment. The canonical dump
(:meth:`Config.dumps`) lists every key in schema order and is what the run
manifest hashes.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "-inf" if v == -math.inf else repr(v)
    return str(v)


# key -> (parser, default)
SCHEMA = {
    "run.seed": (int, 2024),
    "frontend.height": (int, 16),
    "frontend.width": (int, 16),
    "frontend.channels": (int, 1024),
    "frontend.gamma_s": (float, 4.0),
    "frontend.gamma_c": (int, 16),
    "frontend.codec_seed": (int, 0),
    "frontend.codec_fit_maps": (int, 32),
    "frontend.maps_per_trial": (int, 1),
    "converter.M": (int, 4),
    "converter.N": (int, 64),
    "converter.L": (int, 16),
    "converter.rho": (float, 0.99),
    "converter.eps": (float, 1e-5),
    "converter.anchors": (int, 256),
    "converter.codeword_step": (float, 0.1),
    "converter.w_lr": (float, 0.01),
    "converter.reinit": (_bool, True),
    "converter.train_steps": (int, 300),
    "converter.maps_per_step": (int, 8),
    "phy.mcs": (str, "auto"),
    "phy.mcs_table": (str, "4QAM-1/2:-inf,16QAM-1/2:7.25,16QAM-3/4:11,64QAM-2/3:14.75,64QAM-5/6:17.75"),
    "phy.max_iter": (int, 30),
    "phy.scale": (float, 0.8),
    "channel.kind": (str, "rayleigh"),
    "channel.snr_db": (float, 0.0),
    "channel.fading": (str, "block"),
    "channel.seed": (int, 0),
    "channel.snr_convention": (str, "symbol"),
    "uan.enabled": (_bool, True),
    "uan.alpha": (float, 2.0),
    "uan.tau": (float, 0.5),
    "uan.hidden_widths": (_ints, (16, 16)),
    "uan.agg_widths": (_ints, (8,)),
    "uan.train_snr_range": (_floats, (-10.0, 10.0)),
    "uan.train_frames": (int, 600),
    "uan.epochs": (int, 40),
    "uan.batch_size": (int, 256),
    "uan.lr": (float, 3e-3),
    "uan.seed": (int, 0),
    "sweep.snr_db": (_floats, (-10.0, -5.0, 0.0, 5.0, 10.0)),
    "sweep.trials": (int, 200),
    "artifacts.dir": (str, ""),
}


class Config:
    """Immutable-ish mapping of fully-typed config values."""

    def __init__(self, values: dict | None = None):
        self._values = {k: d for k, (_, d) in SCHEMA.items()}
        for k, v in (values or {}).items():
            self[k] = v

    def __getitem__(self, key):
        return self._values[key]

    def __setitem__(self, key, value):
        if key not in SCHEMA:
            raise KeyError(f"unknown config key {key!r}")
        parser = SCHEMA[key][0]
        self._values[key] = parser(value) if isinstance(value, str) else value

    def __contains__(self, key):
        return key in self._values

    def items(self):
        return self._values.items()

    def copy(self) -> "Config":
        return Config(dict(self._values))

    def with_overrides(self, overrides) -> "Config":
        """``overrides`` is a mapping or an iterable of ``"key=value"`` strings."""
        out = self.copy()
        if isinstance(overrides, dict):
            items = overrides.items()
        else:
            items = []
            for text in overrides:
                if "=" not in text:
                    raise ValueError(f"override {text!r} is not key=value")
                k, v = text.split("=", 1)
                items.append((k.strip(), v.strip()))
        for k, v in items:
            out[k] = v
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self._values.items())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Config) and self.dumps() == other.dumps()


def loads(text: str) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise KeyError(f"line {lineno}: unknown config key {key!r}")
        values[key] = value
    return Config(values)


def load(path) -> Config:
    return loads(Path(path).read_text())
