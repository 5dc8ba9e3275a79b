"""Experiment configuration: sectioned ``key = value`` files, schema 1.

A file has one ``[suite]`` section and optional per-experiment sections
named after experiment ids. Keys set in an experiment section override the
suite-level values for that experiment only::

    [suite]
    schema = 1
    experiments = speed-limit, cap-dislocation
    seed = 7
    output = results

    [cap-dislocation]
    k = 64, 128, 256, 512
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping, Optional

from ..exceptions import ConfigError

SCHEMA = 1
DEFAULT_K = (32, 64, 128, 256, 512)
DEFAULT_TOLERANCES = {"slack": 1e-9, "identity": 1e-10, "rawnsley": 1e-9, "matrix": 1e-10}
SUITE_KEYS = {"schema", "experiments", "output", "threads", "heavy"}
EXPERIMENT_KEYS = {"k", "seed", "oversample", "steps", "s_rule", "tolerances"}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    k: tuple
    seed: int
    oversample: float = 1.5
    steps: int = 128
    tolerances: Mapping = field(default_factory=lambda: MappingProxyType(dict(DEFAULT_TOLERANCES)))
    s_rule: str = "power:0.25"
    selections: Mapping = field(default_factory=lambda: MappingProxyType({}))
    output: Path = Path("results")
    heavy: bool = False

    def __post_init__(self):
        validate_k(self.k)
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.oversample < 1:
            raise ConfigError("oversample must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        parse_s_rule(self.s_rule)

    def tolerance(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES.get(name, 1e-9)))

    def with_k(self, ks) -> "ExperimentConfig":
        return replace(self, k=tuple(ks))


@dataclass(frozen=True)
class SuiteConfig:
    experiments: tuple
    output: Path
    threads: int = 1
    heavy: bool = False


def validate_k(ks) -> tuple:
    ks = tuple(ks)
    if not ks:
        raise ConfigError("k list is empty")
    for k in ks:
        if not isinstance(k, int) or isinstance(k, bool) or k < 2:
            raise ConfigError(f"k values must be integers >= 2, got {k!r}")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"k list must be strictly increasing: {ks}")
    return ks


def parse_s_rule(desc: str) -> Callable[[float], float]:
    """``power:e`` gives s = hbar^e, ``sqrt:r`` gives r sqrt(hbar),
    ``const:s`` a fixed mesh."""
    kind, _, arg = str(desc).partition(":")
    try:
        value = float(arg)
    except ValueError:
        raise ConfigError(f"malformed s_rule {desc!r}") from None
    if kind == "power" and 0 < value < 1:
        return lambda h: h**value
    if kind == "sqrt" and value > 0:
        return lambda h: value * math.sqrt(h)
    if kind == "const" and 0 < value <= 1:
        return lambda h: value
    raise ConfigError(f"unsupported s_rule {desc!r}")


def _int_list(text: str, key: str) -> tuple:
    items = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return tuple(int(p) for p in items)
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated integer list") from None


def _bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean")


def _tolerances(text: str) -> dict:
    out = dict(DEFAULT_TOLERANCES)
    for item in filter(None, (p.strip() for p in text.split(","))):
        name, sep, val = item.partition(":")
        if not sep:
            raise ConfigError(f"tolerance entries look like name:value, got {item!r}")
        try:
            out[name.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"tolerance {name!r} is not a number") from None
    return out


def _experiment_fields(section: Mapping, base: dict) -> dict:
    out = dict(base)
    selections = dict(base.get("selections", {}))
    for key, value in section.items():
        if key in SUITE_KEYS:
            continue
        if key == "k":
            out["k"] = _int_list(value, "k")
        elif key == "seed":
            try:
                out["seed"] = int(value)
            except ValueError:
                raise ConfigError("seed must be an integer") from None
        elif key == "oversample":
            out["oversample"] = float(value)
        elif key == "steps":
            out["steps"] = int(value)
        elif key == "s_rule":
            out["s_rule"] = value.strip()
        elif key == "tolerances":
            out["tolerances"] = _tolerances(value)
        else:
            selections[key] = value.strip()
    out["selections"] = selections
    return out


def parse_config(text: str, base_dir: Optional[Path] = None, default_k: Optional[Callable[[str], tuple]] = None) -> SuiteConfig:
    """Parse and validate a config; ``default_k`` supplies per-experiment
    sweeps when neither the suite nor the experiment sets ``k``."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    if not parser.has_section("suite"):
        raise ConfigError("missing [suite] section")
    suite = parser["suite"]
    if suite.get("schema", "").strip() != str(SCHEMA):
        raise ConfigError(f"schema must be {SCHEMA}")
    ids = [p.strip() for p in suite.get("experiments", "").split(",") if p.strip()]
    if not ids:
        raise ConfigError("no experiments listed")
    if len(set(ids)) != len(ids):
        raise ConfigError("experiment listed twice")
    if "seed" not in suite:
        raise ConfigError("seed is required")
    root = Path(base_dir or ".")
    output = Path(suite.get("output", "results"))
    output = output if output.is_absolute() else root / output
    threads = int(suite.get("threads", "1"))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    heavy = _bool(suite.get("heavy", "false"), "heavy")
    base = _experiment_fields({k: v for k, v in suite.items()}, {"selections": {}})
    experiments = []
    for eid in ids:
        fields = _experiment_fields(parser[eid], base) if parser.has_section(eid) else dict(base)
        if "k" not in fields:
            if default_k is None:
                fields["k"] = DEFAULT_K
            else:
                fields["k"] = tuple(default_k(eid))
        fields["selections"] = MappingProxyType(fields["selections"])
        if "tolerances" in fields:
            fields["tolerances"] = MappingProxyType(fields["tolerances"])
        experiments.append(ExperimentConfig(experiment=eid, output=output, heavy=heavy, **fields))
    for name in parser.sections():
        if name != "suite" and name not in ids:
            raise ConfigError(f"section [{name}] names an experiment that is not listed")
    return SuiteConfig(tuple(experiments), output, threads, heavy)


def load_config(path, default_k: Optional[Callable[[str], tuple]] = None) -> SuiteConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, p.parent, default_k)
