"""Experiment configuration: a flat set of dotted keys with typed values.

Files use ``key = value`` lines. ``[section]`` headers prefix the keys that
follow, ``#`` starts a comment. Unknown keys are rejected so typos cannot
silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import ConfigKeyError, ParseError

FREQUENCY_PRESETS = {"2.4GHz": 2.4e9, "2.48GHz": 2.48e9, "5.8GHz": 5.8e9}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_frequency(s: str | float) -> float:
    """Hz from a number or a string such as ``5.8GHz`` / ``2480 MHz``."""
    if isinstance(s, (int, float)):
        value = float(s)
    else:
        text = s.strip()
        if text in FREQUENCY_PRESETS:
            return FREQUENCY_PRESETS[text]
        m = re.fullmatch(r"([0-9.eE+-]+)\s*([kMG]?Hz)?", text)
        if not m:
            raise ValueError(f"not a frequency: {s!r}")
        scale = {None: 1.0, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}[m.group(2)]
        value = float(m.group(1)) * scale
    if value <= 0:
        raise ValueError("frequency must be positive")
    return value


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"{v!r} is not one of {', '.join(options)}")
        return v
    return parse


def _positive(kind):
    def parse(s):
        v = kind(s)
        if v <= 0:
            raise ValueError("must be positive")
        return v
    return parse


def _non_negative(kind):
    def parse(s):
        v = kind(s)
        if v < 0:
            raise ValueError("must be non-negative")
        return v
    return parse


def _str(s: str) -> str:
    return s.strip()


# key -> (default, parser, description)
KEYS: dict[str, tuple[Any, Callable[[str], Any], str]] = {
    "seed": (0, int, "base seed for every random stream"),
    "area.width": (10.0, _positive(float), "room width in metres"),
    "area.height": (10.0, _positive(float), "room depth in metres"),
    "network.nodes": (60, _non_negative(int), "nodes spread evenly on the perimeter (0: use spacing)"),
    "network.spacing": (0.0, _non_negative(float), "node spacing per side in metres (used when nodes = 0)"),
    "network.height": (1.0, _positive(float), "node height above the floor in metres"),
    "radio.frequency": (5.8e9, parse_frequency, "carrier in Hz or a preset: 2.4GHz, 2.48GHz, 5.8GHz"),
    "subject.profile": ("A", _choice("A", "B", "C"), "body size profile"),
    "model.kind": ("MAM", _choice("MAM", "C-MAM"), "multi-body attenuation model"),
    "quadrature.step_fraction": (0.125, _positive(float), "integration step as a fraction of the wavelength"),
    "quadrature.max_elements": (5_000_000, _positive(int), "largest allowed integration grid per sheet"),
    "membership.threshold": (0.5, _positive(float), "footprint fraction that must lie in a Fresnel region"),
    "membership.samples": (256, _positive(int), "footprint sample points"),
    "bounds.tau": (0.2, _non_negative(float), "Jaccard distance threshold"),
    "bounds.variant": ("cluster-consistent", _choice("cluster-consistent", "literal-guarded"), "count variant"),
    "bounds.trials": (500, _positive(int), "Monte Carlo trials per target count"),
    "bounds.n_min": (1, _positive(int), "smallest target count"),
    "bounds.n_max": (20, _positive(int), "largest target count"),
    "data.n_min": (1, _non_negative(int), "smallest target count in generated data"),
    "data.n_max": (6, _non_negative(int), "largest target count in generated data"),
    "data.samples_per_n": (200, _positive(int), "snapshots per target count"),
    "noise.enabled": (False, _parse_bool, "add Gaussian dB noise to simulated RSS"),
    "noise.sigma_db": (0.0, _non_negative(float), "noise standard deviation in dB"),
    "rss.free_space_dbm": (-50.0, float, "empty-room received power for every link"),
    "rss.window_ms": (60, _positive(int), "snapshot window for RSS ingestion"),
    "rss.averaging_window": (10, _positive(int), "snapshots in the attenuation moving average"),
    "train.learning_rate": (1e-3, _positive(float), "Adam step size"),
    "train.batch_size": (32, _positive(int), "mini-batch size"),
    "train.max_epochs": (300, _positive(int), "epoch limit"),
    "train.patience": (10, _positive(int), "epochs without validation improvement before stopping"),
    "train.validation_fraction": (0.2, _non_negative(float), "share of training data held for early stopping"),
    "train.iterations": (4, _positive(int), "message-passing iterations K"),
    "train.include_sort_key": (False, _parse_bool, "also feed the sort-key layer to the readout"),
    "sweep.grid": ("", _str, "cells as key=v1,v2;key=v1,v2"),
    "sweep.command": ("bounds", _choice("bounds"), "what each sweep cell computes"),
    "figure.enabled": (True, _parse_bool, "render PNG figures next to CSV reports"),
}


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({k: d for k, (d, _p, _doc) in KEYS.items()})

    def with_overrides(self, pairs: Iterable[tuple[str, str]], source: str = "--set") -> "ExperimentConfig":
        values = dict(self.values)
        for key, raw in pairs:
            values[key] = _parse_value(key, raw, source)
        return ExperimentConfig(values)

    def canonical(self) -> str:
        return "".join(f"{k}={_format(self.values[k])}\n" for k in sorted(self.values))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _parse_value(key: str, raw: str, where: str) -> Any:
    if key not in KEYS:
        valid = ", ".join(sorted(KEYS))
        raise ConfigKeyError(f"{where}: unknown key {key!r}; valid keys: {valid}")
    try:
        return KEYS[key][1](raw)
    except ValueError as exc:
        raise ParseError(f"{where}: bad value for {key}: {exc}") from None


def parse_config_text(text: str, origin: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ParseError(f"{origin}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        full = f"{section}.{key}" if section else key
        _parse_value(full, raw, f"{origin}:{lineno}")
        pairs.append((full, raw))
    return pairs


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    cfg = ExperimentConfig.defaults()
    if path is not None:
        p = Path(path)
        cfg = cfg.with_overrides(parse_config_text(p.read_text(), str(p)), str(p))
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"--set {item!r}: expected key=value")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return cfg.with_overrides(pairs)


def write_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.canonical())


def describe_keys() -> str:
    return "\n".join(f"{k} (default {_format(d)}): {doc}" for k, (d, _p, doc) in KEYS.items())
