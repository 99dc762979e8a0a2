"""Experiment configuration files (JSON) for the train, sweep and fit-surface commands."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .ratelaws import TARGETS, RateLaw, Target
from .refmodels import SYSTEMS
from .training import TrainConfig

CONFIG_FORMAT = 1
KINDS = ("train", "sweep", "fit_surface")
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    kind: str
    system: str | None = None
    target: object = None  # Target, or (RateLaw, lo, hi)
    model: dict = field(default_factory=dict)  # layers, width, seed
    data: dict = field(default_factory=dict)  # obs_every
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: dict = field(default_factory=dict)  # max_layers, max_width, restarts
    dataset: dict = field(default_factory=dict)  # count, seed
    out: str | None = None
    format: int = CONFIG_FORMAT
    source: dict = field(default_factory=dict)  # parsed JSON, echoed into reports
    text: str = ""  # file contents, hashed into reports


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"missing required field '{where}{key}'", f"{where}{key}")
    return d[key]


def _section(d, key, allowed):
    sec = d.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be an object", key)
    extra = set(sec) - set(allowed)
    if extra:
        name = sorted(extra)[0]
        raise ConfigError(f"unknown field '{key}.{name}'", f"{key}.{name}")
    return dict(sec)


def _int(sec, key, where, default, lo=1):
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"'{where}.{key}' must be an integer >= {lo}", f"{where}.{key}")
    return v


def parse_target(spec):
    if isinstance(spec, str):
        if spec not in TARGETS:
            raise ConfigError(f"unknown target {spec!r}; known: {', '.join(sorted(TARGETS))}", "target")
        return TARGETS[spec]
    if isinstance(spec, dict):
        try:
            law = RateLaw(_require(spec, "law", "target."), spec.get("params", {}))
            lo, hi = _require(spec, "lo", "target."), _require(spec, "hi", "target.")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "target") from None
        return Target(law.id, law, tuple(float(v) for v in lo), tuple(float(v) for v in hi))
    raise ConfigError("'target' must be a name or a rate-law object", "target")


def parse_config(d: dict, kind: str) -> ExperimentConfig:
    if kind not in KINDS:
        raise ValueError(f"unknown config kind {kind!r}")
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    version = _require(d, "format", "")
    if version != CONFIG_FORMAT:
        raise ConfigError(f"unsupported config format {version!r} (expected {CONFIG_FORMAT})", "format")
    known = {"format", "kind", "system", "target", "model", "data", "train", "grid", "dataset", "out",
             "hidden_activation", "output_activation", "seed", "description"}
    extra = set(d) - known
    if extra:
        name = sorted(extra)[0]
        raise ConfigError(f"unknown field '{name}'", name)
    if d.get("kind", kind) != kind:
        raise ConfigError(f"config is for '{d['kind']}', not '{kind}'", "kind")

    cfg = ExperimentConfig(kind=kind, source=d, out=d.get("out"))
    train = _section(d, "train", _TRAIN_FIELDS)
    try:
        cfg.train = TrainConfig(**train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'train' section: {exc}", "train") from None

    if kind == "train":
        system = _require(d, "system", "")
        if system not in SYSTEMS:
            raise ConfigError(f"unknown system {system!r}; expected one of {', '.join(SYSTEMS)}", "system")
        cfg.system = system
        m = _section(d, "model", ("layers", "width", "seed"))
        cfg.model = {"layers": _int(m, "layers", "model", 5), "width": _int(m, "width", "model", 5),
                     "seed": _int(m, "seed", "model", 0, lo=0)}
        data = _section(d, "data", ("obs_every",))
        cfg.data = {"obs_every": _int(data, "obs_every", "data", 1)} if "obs_every" in data else {}
    else:
        cfg.target = parse_target(_require(d, "target", ""))
        ds = _section(d, "dataset", ("count", "seed"))
        dim = cfg.target.dim
        cfg.dataset = {"count": _int(ds, "count", "dataset", 1000 if dim == 1 else 5000),
                       "seed": _int(ds, "seed", "dataset", 0, lo=0)}
        cfg.model = {"hidden_activation": d.get("hidden_activation", "elu"),
                     "output_activation": d.get("output_activation", "identity")}
        if kind == "sweep":
            g = _section(d, "grid", ("max_layers", "max_width", "restarts"))
            cfg.grid = {"max_layers": _int(g, "max_layers", "grid", 7), "max_width": _int(g, "max_width", "grid", 7),
                        "restarts": _int(g, "restarts", "grid", 100)}
            cfg.model["seed"] = d.get("seed", 0)
        else:
            m = _section(d, "model", ("layers", "width", "seed"))
            cfg.model.update(layers=_int(m, "layers", "model", 3), width=_int(m, "width", "model", 4),
                             seed=_int(m, "seed", "model", 0, lo=0))
    return cfg


def loads_config(text: str, kind: str, name="<config>") -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    cfg = parse_config(d, kind)
    cfg.text = text
    return cfg


def load_config(path, kind: str) -> ExperimentConfig:
    """Load a config file; bare names resolve to the configs shipped with the package."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and "/" not in str(path):
        packaged = resources.files("binode") / "configs" / f"{path}.json"
        if packaged.is_file():
            return loads_config(packaged.read_text(), kind, str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
    return loads_config(text, kind, str(path))
