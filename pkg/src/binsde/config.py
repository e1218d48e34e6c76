"""Flat key-value configuration files with dotted keys.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored. Keys are dotted paths (``model.params.gamma``); values stay
strings until a typed getter converts them. Command-line ``--set k=v``
overrides are applied on top of the file. The full schema is documented in
the README.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

__all__ = [
    "parse_config_text",
    "load_config",
    "apply_overrides",
    "get_str",
    "get_float",
    "get_int",
    "get_bool",
    "get_float_list",
    "subkeys",
]


def parse_config_text(text: str, source: str = "<config>") -> dict:
    cfg = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}: line {ln}: expected 'key = value', got {raw.strip()!r}"
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}: line {ln}: empty key")
        if key in cfg:
            raise ConfigError(f"{source}: line {ln}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key=value`` strings (from --set flags) over a config dict."""
    out = dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"override {item!r} has an empty key")
        out[key] = value.strip()
    return out


_MISSING = object()


def _fetch(cfg: dict, key: str, default):
    if key in cfg and cfg[key] != "":
        return cfg[key]
    if default is _MISSING:
        raise ConfigError(f"missing required config key {key!r}")
    return default


def get_str(cfg: dict, key: str, default=_MISSING) -> str:
    v = _fetch(cfg, key, default)
    return v if isinstance(v, str) else v


def get_float(cfg: dict, key: str, default=_MISSING) -> float:
    v = _fetch(cfg, key, default)
    if not isinstance(v, str):
        return v
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"config key {key!r}: {v!r} is not a number") from None


def get_int(cfg: dict, key: str, default=_MISSING) -> int:
    v = _fetch(cfg, key, default)
    if not isinstance(v, str):
        return v
    try:
        f = float(v)
        i = int(f)
        if i != f:
            raise ValueError
        return i
    except ValueError:
        raise ConfigError(f"config key {key!r}: {v!r} is not an integer") from None


def get_bool(cfg: dict, key: str, default=_MISSING) -> bool:
    v = _fetch(cfg, key, default)
    if not isinstance(v, str):
        return v
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: {v!r} is not a boolean")


def get_float_list(cfg: dict, key: str, default=_MISSING):
    v = _fetch(cfg, key, default)
    if not isinstance(v, str):
        return v
    try:
        return [float(c) for c in v.split(",") if c.strip() != ""]
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: {v!r} is not a comma-separated number list"
        ) from None


def subkeys(cfg: dict, prefix: str) -> dict:
    """All entries under ``prefix.`` with the prefix stripped."""
    head = prefix.rstrip(".") + "."
    return {k[len(head):]: v for k, v in cfg.items() if k.startswith(head)}
