"""Cell-centred grids on [0, 1] and mean-zero grid functions.

The discrete integral is the midpoint rule ``spacing * sum(values)``, so every
norm and pairing below carries one factor of ``spacing``.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "ParameterError",
    "ShapeError",
    "project_mean_zero",
    "lm_norm",
    "lm_norm_array",
    "pairing",
    "power_map",
    "signed_power",
    "field_to_csv",
    "field_from_csv",
    "field_to_bytes",
    "field_from_bytes",
    "write_fields",
    "read_fields",
]


class ParameterError(ValueError):
    """A numerical parameter is outside its admissible range."""


class ShapeError(ValueError):
    """Two objects live on incompatible grids."""


@dataclass(frozen=True)
class Grid:
    n_nodes: int

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ParameterError(f"n_nodes must be a positive integer, got {self.n_nodes!r}")
        object.__setattr__(self, "n_nodes", int(self.n_nodes))

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_nodes

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n_nodes) + 0.5) / self.n_nodes

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n_nodes))

    def sample(self, func) -> "Field":
        """Field with values ``func(nodes)``."""
        return Field(self, np.asarray(func(self.nodes), dtype=float))


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable grid function. ``values`` is stored as a read-only copy."""

    grid: Grid
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.shape != (self.grid.n_nodes,):
            raise ShapeError(
                f"expected {self.grid.n_nodes} values, got {vals.shape[0]}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, float(scalar) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Field):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.grid, self.values.tobytes()))

    def mean(self) -> float:
        return float(np.mean(self.values))


def _check_same_grid(f: Field, g: Field) -> None:
    if f.grid != g.grid:
        raise ShapeError(f"grid mismatch: {f.grid.n_nodes} vs {g.grid.n_nodes} nodes")


def project_mean_zero(f: Field) -> Field:
    return Field(f.grid, f.values - np.mean(f.values))


def lm_norm(f: Field, m: float) -> float:
    """Discrete L^m norm ``(h * sum |f_i|^m)^(1/m)``."""
    return lm_norm_array(f.values, f.grid.spacing, m)


def lm_norm_array(values: np.ndarray, spacing: float, m: float, axis: Optional[int] = None):
    """Discrete L^m norm; with ``axis`` given, one norm per slice along it."""
    if m < 1:
        raise ParameterError(f"L^m norm needs m >= 1, got m={m}")
    a = np.abs(np.asarray(values, dtype=float))
    if axis is None:
        scale = a.max() if a.size else 0.0
        if scale == 0.0:
            return 0.0
        # rescale before powering to avoid under/overflow for large m
        return float(scale * (spacing * np.sum((a / scale) ** m)) ** (1.0 / m))
    scale = a.max(axis=axis, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    out = safe * (spacing * np.sum((a / safe) ** m, axis=axis, keepdims=True)) ** (1.0 / m)
    return np.squeeze(np.where(scale > 0, out, 0.0), axis=axis)


def pairing(f: Field, g: Field) -> float:
    """L^2 inner product ``h * sum f_i g_i``."""
    _check_same_grid(f, g)
    return float(f.grid.spacing * np.dot(f.values, g.values))


def signed_power(a, m: float):
    """Elementwise ``sign(a) |a|^m`` with ``0 -> 0``."""
    a = np.asarray(a, dtype=float)
    if m == 1:
        return a.copy()
    out = np.zeros_like(a)
    nz = a != 0
    out[nz] = np.sign(a[nz]) * np.abs(a[nz]) ** m
    return out


def power_map(f: Field, m: float) -> Field:
    if m < 0:
        raise ParameterError(f"power_map needs m >= 0, got m={m}")
    return Field(f.grid, signed_power(f.values, m))


# ---------------------------------------------------------------- serialization

def field_to_csv(f: Field) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "value"])
    for x, v in zip(f.grid.nodes, f.values):
        # repr round-trips float64 exactly
        writer.writerow([repr(float(x)), repr(float(v))])
    return buf.getvalue()


def field_from_csv(text: str) -> Field:
    rows = list(csv.reader(io.StringIO(text)))
    if rows and rows[0][:2] == ["x", "value"]:
        rows = rows[1:]
    values = np.array([float(r[1]) for r in rows if r])
    grid = Grid(len(values))
    xs = np.array([float(r[0]) for r in rows if r])
    if not np.allclose(xs, grid.nodes, rtol=0, atol=1e-12):
        raise ShapeError("CSV node coordinates do not match a uniform cell-centred grid")
    return Field(grid, values)


_HEADER = struct.Struct("<q")


def field_to_bytes(f: Field) -> bytes:
    return _HEADER.pack(f.grid.n_nodes) + f.values.astype("<f8").tobytes()


def _unpack_one(buf: bytes, offset: int) -> tuple[Field, int]:
    (n,) = _HEADER.unpack_from(buf, offset)
    offset += _HEADER.size
    end = offset + 8 * n
    if n < 1 or end > len(buf):
        raise ValueError("truncated field record")
    values = np.frombuffer(buf[offset:end], dtype="<f8").astype(float)
    return Field(Grid(n), values), end


def field_from_bytes(buf: bytes) -> Field:
    f, end = _unpack_one(buf, 0)
    if end != len(buf):
        raise ValueError("trailing bytes after field record")
    return f


def iter_field_records(buf: bytes) -> Iterator[Field]:
    offset = 0
    while offset < len(buf):
        f, offset = _unpack_one(buf, offset)
        yield f


def write_fields(path: str | Path, fields: Iterable[Field]) -> None:
    """Concatenate binary field records into one file."""
    with open(path, "wb") as fh:
        for f in fields:
            fh.write(field_to_bytes(f))


def read_fields(path: str | Path) -> list[Field]:
    return list(iter_field_records(Path(path).read_bytes()))
