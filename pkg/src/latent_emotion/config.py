"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Every key maps onto a field of :class:`FullModelConfig`; unknown or
repeated keys are errors so that a typo never falls back to a default.
Booleans accept true/false/yes/no/1/0, integer lists are comma
separated and inception branches are written ``kernel:width`` pairs,
e.g. ``ps.mixed_branches = 3:12, 5:18, 7:24, 11:30``.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .attention import AttentionConfig
from .me_branch import BackboneConfig
from .model import FullModelConfig
from .ps_network import PSNetConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _branches(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in text.split(","):
        k, o = part.split(":")
        out.append((int(k), int(o)))
    return tuple(out)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{k}:{o}" for k, o in value)
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


# key -> (sub-config attribute or None for top level, field name, parser)
KEYS: dict[str, tuple[str | None, str, object]] = {
    "num_classes": (None, "num_classes", int),
    "seed": (None, "seed", int),
    "epochs": (None, "epochs", int),
    "batch_size": (None, "batch_size", int),
    "lr": (None, "lr", float),
    "adam.beta1": (None, "beta1", float),
    "adam.beta2": (None, "beta2", float),
    "adam.eps": (None, "eps", float),
    "modality.colour": (None, "use_colour", _bool),
    "modality.depth": (None, "use_depth", _bool),
    "modality.ps": (None, "use_ps", _bool),
    "fusion.frames": (None, "frame_weighting", str),
    "fusion.mechanism": (None, "fusion", str),
    "backbone.input_size": ("backbone", "input_size", int),
    "backbone.channels": ("backbone", "channels", _ints),
    "backbone.kernel": ("backbone", "kernel", int),
    "backbone.pool": ("backbone", "pool", int),
    "backbone.out_dim": ("backbone", "out_dim", int),
    "backbone.input_pool": ("backbone", "input_pool", int),
    "depth_attention.tokens": ("depth_attention", "tokens", int),
    "depth_attention.d_model": ("depth_attention", "d_model", int),
    "depth_attention.heads": ("depth_attention", "heads", int),
    "depth_attention.residual": ("depth_attention", "residual", _bool),
    "attention.tokens": ("fusion_attention", "tokens", int),
    "attention.d_model": ("fusion_attention", "d_model", int),
    "attention.heads": ("fusion_attention", "heads", int),
    "attention.residual": ("fusion_attention", "residual", _bool),
    "ps.rate": (None, "ps_rate", float),
    "ps.input_length": ("ps", "input_length", int),
    "ps.stem_kernel": ("ps", "stem_kernel", int),
    "ps.stem_multiplier": ("ps", "stem_multiplier", int),
    "ps.grouped_blocks": ("ps", "grouped_blocks", int),
    "ps.grouped_branches": ("ps", "grouped_branches", _branches),
    "ps.mixed_blocks": ("ps", "mixed_blocks", int),
    "ps.mixed_groups": ("ps", "mixed_groups", int),
    "ps.mixed_branches": ("ps", "mixed_branches", _branches),
    "ps.feature_dim": ("ps", "feature_dim", int),
    "wavelet.name": (None, "wavelet", str),
    "wavelet.levels": (None, "wavelet_levels", int),
}

_SUBCONFIGS = {"backbone": BackboneConfig, "depth_attention": AttentionConfig,
               "fusion_attention": AttentionConfig, "ps": PSNetConfig}


def parse_config(text: str, base: FullModelConfig | None = None) -> FullModelConfig:
    """Apply the settings in ``text`` on top of ``base`` (library defaults if omitted)."""
    top: dict[str, object] = {}
    sub: dict[str, dict[str, object]] = {name: {} for name in _SUBCONFIGS}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        section, attr, parser = KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        (top if section is None else sub[section])[attr] = parsed

    cfg = base or FullModelConfig()
    try:
        for section, changes in sub.items():
            if changes:
                top[section] = replace(getattr(cfg, section), **changes)
        cfg = replace(cfg, **top)
        cfg = replace(cfg, ps=replace(cfg.ps, num_classes=cfg.num_classes))
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, base: FullModelConfig | None = None) -> FullModelConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)


def dump_config(cfg: FullModelConfig) -> str:
    """Every key with its current value, in :data:`KEYS` order; ``parse_config`` inverts it."""
    lines = []
    for key, (section, attr, _) in KEYS.items():
        owner = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_fmt(getattr(owner, attr))}")
    return "\n".join(lines) + "\n"
