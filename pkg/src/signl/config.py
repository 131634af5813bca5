"""Plain key = value experiment configuration with a fixed key schema."""

from __future__ import annotations

from .featio import ConfigError

# key -> (type, default).  Booleans are written true/false.
SCHEMA = {
    "data.dir": (str, "data"),
    "data.manifest": (str, ""),
    "data.f": (int, 64),
    "data.t": (int, 64),
    "data.n_train": (int, 200),
    "data.n_dev": (int, 50),
    "data.n_eval": (int, 100),
    "data.n_attack_types": (int, 3),
    "data.artifact_strength": (float, 1.0),
    "graph.n": (int, 8),
    "graph.k": (int, 3),
    "graph.d": (int, 32),
    "graph.layers": (int, 5),
    "graph.heads": (int, 4),
    "train.epochs": (int, 50),
    "train.batch_size": (int, 96),
    "train.lr": (float, 1e-3),
    "train.seed": (int, 0),
    "train.label_fraction": (float, 1.0),
    "train.temperature": (float, 0.5),
    "train.freeze_encoders": (bool, False),
    "train.view_mode": (str, "both"),
    "train.skip_pretrain": (bool, False),
    "train.patience": (int, 10),
    "aug.ed": (bool, False),
    "aug.gn": (bool, False),
    "aug.fm": (bool, False),
    "aug.ed_prob": (float, 0.5),
    "aug.gn_sigma": (float, 0.1),
    "aug.fm_prob": (float, 0.5),
    "paths.checkpoint": (str, ""),
}

VIEW_MODES = ("both", "temporal_only", "spatial_only")


def _coerce(key, raw):
    typ, _ = SCHEMA[key]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def defaults() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def parse_line(line, cfg, where=""):
    line = line.split("#", 1)[0].strip()
    if not line:
        return
    if "=" not in line:
        raise ConfigError(f"{where}: expected key = value, got {line!r}")
    key, raw = (part.strip() for part in line.split("=", 1))
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    cfg[key] = _coerce(key, raw)


def load(path=None, overrides=()) -> dict:
    """Config file plus repeatable key=value overrides (overrides win)."""
    cfg = defaults()
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parse_line(line, cfg, where=f"{path}:{lineno}")
    for item in overrides:
        parse_line(item, cfg, where=f"override {item!r}")
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg["train.epochs"] < 1 or cfg["train.batch_size"] < 1:
        raise ConfigError("epochs and batch size must be >= 1")
    if cfg["train.lr"] <= 0:
        raise ConfigError("learning rate must be positive")
    if not 0 < cfg["train.label_fraction"] <= 1:
        raise ConfigError("label fraction must be in (0, 1]")
    if cfg["train.view_mode"] not in VIEW_MODES:
        raise ConfigError(f"view_mode must be one of {VIEW_MODES}")
    if cfg["train.temperature"] <= 0:
        raise ConfigError("temperature must be positive")


def dump(cfg, path):
    with open(path, "w") as fh:
        for key in SCHEMA:
            value = cfg[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key} = {value}\n")
