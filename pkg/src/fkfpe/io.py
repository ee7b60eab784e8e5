"""File formats: binary density grids, CSV exports, key=value configs."""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .core import DensityGrid, SchemeConfig

MAGIC = b"FKFP"
FORMAT_VERSION = 1
# magic, version, Nx, Nv (u32), Lx, Lv (f64); little endian
_HEADER = struct.Struct("<4sIIIdd")


class ConfigError(ValueError):
    """Malformed configuration file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def write_grid(path, grid: DensityGrid) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, grid.Nx, grid.Nv, grid.Lx, grid.Lv))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_grid(path) -> DensityGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("file too short for an FKFP header")
    magic, version, nx, nv, lx, lv = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != nx * nv:
        raise ValueError(f"expected {nx * nv} values, found {body.size}")
    return DensityGrid(body.reshape(nx, nv).copy(), lx, lv)


def header_lines(config_hash="", seed=None):
    out = [f"# fkfpe {__version__}"]
    if config_hash:
        out.append(f"# config_hash {config_hash}")
    if seed is not None:
        out.append(f"# seed {seed}")
    return out


def _write_with_header(path, header, rows, columns):
    with Path(path).open("w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(c) for c in r])


def _fmt(c):
    if isinstance(c, (float, np.floating)):
        return repr(float(c))
    return c


def write_grid_csv(path, grid: DensityGrid, header=()):
    x, v = np.meshgrid(grid.x, grid.v, indexing="ij")
    rows = zip(x.ravel(), v.ravel(), grid.values.ravel())
    _write_with_header(path, list(header) or header_lines(), rows, ["x", "v", "value"])


def write_csv(path, columns, rows, header=()):
    _write_with_header(path, list(header) or header_lines(), rows, list(columns))


def read_csv(path):
    """Rows of a CSV written by this module, comment lines skipped."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return list(reader)


def write_dat(path, columns, header=()):
    """Whitespace-separated columns for gnuplot."""
    arr = np.column_stack(columns)
    with Path(path).open("w") as fh:
        for line in list(header) or header_lines():
            fh.write(line + "\n")
        np.savetxt(fh, arr, fmt="%.12e")


# ---------------------------------------------------------------- configs

_FIELD_TYPES = {
    "s": float,
    "h": float,
    "T": float,
    "truncation": str,
    "R": float,
    "Lx": float,
    "Lv": float,
    "Nx": int,
    "Nv": int,
    "p": float,
    "alpha": float,
    "seed": int,
    "mode": str,
    "potential": str,
    "remap": str,
    "x0": float,
    "v0": float,
    "sigma_x": float,
    "sigma_v": float,
}
# keys that configure the run but are not scheme parameters
_RUN_KEYS = {"checks": str}
REQUIRED_KEYS = ("s", "h", "T")


def parse_config_text(text: str):
    """Parse ``key = value`` lines into ``(SchemeConfig, run_options)``.

    ``#`` starts a comment. Unknown or repeated keys are errors.
    """
    raw = {}
    lines = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in _FIELD_TYPES and key not in _RUN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        typ = _FIELD_TYPES.get(key) or _RUN_KEYS[key]
        try:
            raw[key] = _convert(typ, value)
        except ValueError:
            raise ConfigError(f"bad value {value!r} for key {key!r}", lineno) from None
        lines[key] = lineno
    for key in REQUIRED_KEYS:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    run_opts = {k: raw.pop(k) for k in list(raw) if k in _RUN_KEYS}
    try:
        cfg = SchemeConfig(**raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, run_opts


def _convert(typ, value):
    if typ is float:
        v = value.lower()
        if v in ("inf", "infinity"):
            return math.inf
        if "/" in value:
            num, den = value.split("/", 1)
            return float(num) / float(den)
        return float(value)
    if typ is int:
        return int(value)
    return value


def read_config(path):
    return parse_config_text(Path(path).read_text())


def config_to_text(cfg: SchemeConfig) -> str:
    return "".join(f"{k} = {getattr(cfg, k)}\n" for k in _FIELD_TYPES)


def config_hash(cfg: SchemeConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]
