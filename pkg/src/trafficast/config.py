"""INI configuration: typed schema, field-by-field validation, environment overrides."""
from __future__ import annotations

import configparser
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

ENV_PREFIX = "TRAFFICAST_"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)
    return parse


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.replace(",", " ").split()]


def _date_list(text: str) -> list[str]:
    return [dt.date.fromisoformat(p).isoformat() for p in text.replace(",", " ").split()]


def _str(text: str) -> str:
    return text.strip()


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], str | None] | None = None


def _positive(v):
    return None if v is None or v > 0 else "must be > 0"


def _non_negative(v):
    return None if v is None or v >= 0 else "must be >= 0"


def _at_least(n):
    return lambda v: None if v is None or v >= n else f"must be >= {n}"


def _open_unit(v):
    return None if 0 < v < 1 else "must lie strictly between 0 and 1"


def _one_of(*choices):
    return lambda v: None if v in choices else f"must be one of {', '.join(choices)}"


def _horizons(v):
    if not v:
        return "needs at least one horizon"
    return None if min(v) >= 1 else "horizons must be >= 1"


SCHEMA: dict[str, dict[str, Field]] = {
    "run": {
        "seed": Field(int, 0, _non_negative),
        "threads": Field(int, 1, _at_least(1)),
    },
    "data": {
        "input": Field(_str, ""),
        "step": Field(int, 300, _positive),
        "period": Field(int, 288, _at_least(2)),
        "utc_offset_hours": Field(float, 8.0, lambda v: None if -14 <= v <= 14 else "must lie in [-14, 14]"),
        "max_gap": Field(int, 2, _non_negative),
        "exclude_weekends": Field(_bool, True),
        "exclude_dates": Field(_date_list, []),
    },
    "synth": {
        "segments_per_archetype": Field(int, 9, _at_least(1)),
        "days": Field(int, 60, _at_least(2)),
        "sigma_obs": Field(_opt(float), None, _non_negative),
    },
    "cluster": {
        "resolution": Field(int, 64, _at_least(13)),
        "embedding_dim": Field(int, 32, _at_least(1)),
        "margin": Field(float, 0.2, _non_negative),
        "learning_rate": Field(float, 1e-3, _positive),
        "epochs": Field(int, 4, _non_negative),
        "batches_per_epoch": Field(int, 50, _at_least(1)),
        "batch_size": Field(int, 12, _at_least(1)),
        "segments_per_batch": Field(int, 6, _at_least(2)),
        "images_per_segment": Field(int, 9, _at_least(2)),
        "k_min": Field(int, 2, _at_least(2)),
        "k_max": Field(int, 8, _at_least(2)),
        "k": Field(_opt(int), None, _at_least(1)),
        "n_init": Field(int, 10, _at_least(1)),
        "max_iter": Field(int, 300, _at_least(1)),
    },
    "interval": {
        "threshold": Field(float, 0.8, _open_unit),
        "max_lag": Field(int, 20, _at_least(1)),
        "stride": Field(_opt(int), None, _at_least(1)),
    },
    "predict": {
        "lstm1": Field(int, 50, _at_least(1)),
        "lstm2": Field(int, 25, _at_least(1)),
        "dense": Field(int, 200, _at_least(1)),
        "learning_rate": Field(float, 1e-3, _positive),
        "batch_size": Field(int, 64, _at_least(1)),
        "epochs": Field(int, 30, _non_negative),
        "patience": Field(_opt(int), 5, _at_least(1)),
        "folds": Field(int, 10, _at_least(2)),
        "split": Field(float, 0.8, _open_unit),
        "sample_stride": Field(int, 1, _at_least(1)),
        "convention": Field(_str, "last_input", _one_of("last_input", "window_end")),
        "clip_norm": Field(_opt(float), 1.0, _positive),
        "horizons": Field(_int_list, [1, 2, 3], _horizons),
        "include_im": Field(_bool, True),
    },
}


class Config:
    """Resolved settings: ``cfg["predict"]["epochs"]`` or ``cfg.get("predict.epochs")``."""

    def __init__(self, values: dict[str, dict[str, Any]], source: str | None = None):
        self.values = values
        self.source = source

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.values, sort_keys=True))

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **dotted) -> "Config":
        raw = {s: {k: _render(v) for k, v in keys.items()} for s, keys in self.values.items()}
        for name, value in dotted.items():
            section, key = name.split(".", 1) if "." in name else name.split("__", 1)
            raw.setdefault(section, {})[key] = _render(value)
        return _resolve(raw, self.source)


def _render(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def _resolve(raw: dict[str, dict[str, str]], source: str | None) -> Config:
    problems = []
    values: dict[str, dict[str, Any]] = {}
    for section, keys in raw.items():
        if section not in SCHEMA:
            problems.append(f"[{section}]: unknown section")
            continue
        for key in keys:
            if key not in SCHEMA[section]:
                problems.append(f"{section}.{key}: unknown key")
    for section, fields in SCHEMA.items():
        values[section] = {}
        for key, spec in fields.items():
            text = raw.get(section, {}).get(key)
            if text is None:
                value = spec.default
            else:
                try:
                    value = spec.parse(text)
                except (ValueError, TypeError) as exc:
                    problems.append(f"{section}.{key}: cannot parse {text!r} ({exc})")
                    continue
            msg = spec.check(value) if spec.check else None
            if msg:
                problems.append(f"{section}.{key}: {msg} (got {value!r})")
            values[section][key] = value
    c = values["cluster"]
    if not problems and c["k_min"] > c["k_max"]:
        problems.append("cluster.k_min: must not exceed cluster.k_max")
    if problems:
        raise ConfigError(problems)
    return Config(values, source)


def env_overrides(environ=None) -> dict[str, dict[str, str]]:
    """``TRAFFICAST_<SECTION>_<KEY>=value`` pairs, e.g. ``TRAFFICAST_PREDICT_EPOCHS=5``."""
    environ = os.environ if environ is None else environ
    out: dict[str, dict[str, str]] = {}
    problems = []
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for section in SCHEMA:
            if rest.startswith(section + "_"):
                out.setdefault(section, {})[rest[len(section) + 1:]] = value
                break
        else:
            problems.append(f"{name}: does not name a config section")
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path=None, environ=None) -> Config:
    """Defaults, then the INI file (if any), then environment variables."""
    raw: dict[str, dict[str, str]] = {}
    source = None
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError([f"{path}: {exc}"]) from None
        raw = {s: dict(parser.items(s)) for s in parser.sections()}
        source = str(Path(path))
    for section, keys in env_overrides(environ).items():
        raw.setdefault(section, {}).update(keys)
    return _resolve(raw, source)


def default_config() -> Config:
    return _resolve({}, None)


def write_config(cfg: Config, path) -> Path:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in cfg.values.items():
        parser[section] = {k: _render(v) for k, v in keys.items()}
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
    return path


def cluster_settings(cfg: Config):
    from .deepcluster import DeepClusterConfig
    c = cfg["cluster"]
    return DeepClusterConfig(seed=cfg["run"]["seed"], **c)


def predict_settings(cfg: Config):
    from .predict import PredictConfig
    p = {k: v for k, v in cfg["predict"].items() if k not in ("horizons", "include_im")}
    return PredictConfig(seed=cfg["run"]["seed"], **p)
