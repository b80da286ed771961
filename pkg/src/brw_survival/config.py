"""Key-value run configuration (INI syntax) and builders for kernels and laws.

Example::

    [kernel]
    dimension = 1
    kind = heavy-tail          ; finite-variance | nearest-neighbour | heavy-tail
    alpha = 1.5
    radius = 64
    scale = 1.0
    H = 1.0                    ; or a table "1,0: 1.0; 0,1: 2.0"
    tail = complete            ; truncate | complete

    [law]
    rates = 0: 0.5, 1: -1, 2: 0.5

Finite-variance kernels take ``weights = 1: 0.5; -1: 0.5`` (one ``vector:
rate`` entry per support point, coordinates separated by commas).
"""
from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path

import numpy as np

from .branching import BranchingLaw
from .kernel import (
    DirectionTable,
    WalkKernel,
    build_finite_variance_kernel,
    build_heavy_tail_kernel,
    nearest_neighbour_kernel,
)


class ConfigError(ValueError):
    """Missing or malformed configuration entry."""


def load_config(path=None, overrides=None, text: str | None = None) -> configparser.ConfigParser:
    """Read a config file (or text) and apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    if text is not None:
        cp.read_string(text)
    elif path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cp.read(p)
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key.strip(), value.strip())
    return cp


def resolved_dict(cp: configparser.ConfigParser) -> dict:
    return {s: dict(cp.items(s)) for s in cp.sections()}


def config_hash(cp: configparser.ConfigParser) -> str:
    blob = json.dumps(resolved_dict(cp), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _vector(text: str) -> tuple:
    try:
        return tuple(int(c) for c in text.replace(" ", "").split(","))
    except ValueError as exc:
        raise ConfigError(f"bad lattice vector {text!r}") from exc


def parse_table(text: str) -> dict:
    """'1,0: 0.25; -1,0: 0.25' -> {(1, 0): 0.25, (-1, 0): 0.25}."""
    out = {}
    for entry in text.replace("\n", ";").split(";"):
        entry = entry.strip()
        if not entry:
            continue
        if ":" not in entry:
            raise ConfigError(f"table entry {entry!r} lacks ':'")
        key, val = entry.split(":", 1)
        out[_vector(key)] = float(val)
    return out


def parse_points(text: str, d: int) -> list:
    """'0; 1; 2' or '0,0,0; 1,0,0' -> list of tuples."""
    pts = [_vector(p) for p in text.split(";") if p.strip()]
    for p in pts:
        if len(p) != d:
            raise ConfigError(f"point {p} does not have {d} coordinates")
    return pts


def parse_floats(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _get(cp, section, key, default=None, cast=str):
    if cp.has_option(section, key):
        try:
            return cast(cp.get(section, key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    if default is None:
        raise ConfigError(f"missing [{section}] {key}")
    return default


def kernel_from_config(cp: configparser.ConfigParser) -> WalkKernel:
    if not cp.has_section("kernel"):
        raise ConfigError("missing [kernel] section")
    d = _get(cp, "kernel", "dimension", cast=int)
    kind = _get(cp, "kernel", "kind", "finite-variance")
    if kind == "nearest-neighbour":
        return nearest_neighbour_kernel(d, _get(cp, "kernel", "rate", 1.0, float))
    if kind == "finite-variance":
        return build_finite_variance_kernel(d, parse_table(_get(cp, "kernel", "weights")))
    if kind == "heavy-tail":
        H_text = _get(cp, "kernel", "H", "1.0")
        if ":" in H_text:
            tab = parse_table(H_text)
            H = DirectionTable(np.array(list(tab), float), np.array(list(tab.values())), d)
        else:
            H = float(H_text)
        R = cp.get("kernel", "radius", fallback=None)
        return build_heavy_tail_kernel(
            d, _get(cp, "kernel", "alpha", cast=float), H=H,
            R=int(R) if R else None, c=_get(cp, "kernel", "scale", 1.0, float),
            tail=_get(cp, "kernel", "tail", "truncate"),
        )
    raise ConfigError(f"unknown kernel kind {kind!r}")


def law_from_config(cp: configparser.ConfigParser) -> BranchingLaw:
    text = _get(cp, "law", "rates")
    pairs = []
    for entry in text.replace(";", ",").split(","):
        if entry.strip():
            if ":" not in entry:
                raise ConfigError(f"law entry {entry!r} must be 'n: b_n'")
            n, b = entry.split(":", 1)
            pairs.append((int(n), float(b)))
    return BranchingLaw.from_pairs(pairs)
