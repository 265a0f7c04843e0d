"""Plain-text ``key = value`` configs and run manifests."""
from __future__ import annotations

import os
from typing import Dict, Iterable, List

from .formats import sha256_file


class ConfigError(ValueError):
    """Malformed config file or unknown key."""


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """``#`` starts a comment; blank lines are skipped; later keys override earlier ones."""
    out: Dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key.replace("-", "_")] = value
    return out


def read_config(path) -> Dict[str, str]:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), str(path))


def parse_elevations(text: str) -> List[float]:
    """``"0,±30,±60"`` -> sorted [-60, -30, 0, 30, 60]; ``+-`` works as well as ``±``."""
    vals = []
    for tok in str(text).replace("+-", "±").split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok.startswith("±"):
            v = float(tok[1:])
            vals += [-v, v] if v else [0.0]
        else:
            vals.append(float(tok))
    if len(set(vals)) != len(vals):
        raise ConfigError(f"duplicate elevations in {text!r}")
    return sorted(vals)


def parse_floats(text: str) -> List[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def write_manifest(path, command: str, resolved: Dict, inputs: Iterable[str] = (), outputs: Dict[str, str] = None):
    """Echo the fully resolved settings plus SHA-256 of every input file.

    Time stamps are deliberately left out so reruns produce identical manifests.
    """
    lines = [f"command = {command}"]
    for key in sorted(resolved):
        lines.append(f"{key} = {resolved[key]}")
    for p in inputs:
        if p and os.path.exists(p):
            lines.append(f"input.{os.path.basename(p)}.sha256 = {sha256_file(p)}")
    for name, digest in sorted((outputs or {}).items()):
        lines.append(f"output.{name}.sha256 = {digest}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
