"""Pseudo-spectral fields on uniform tensor grids.

Two bases are supported: periodic Fourier (1-D or 3-D) and the even cosine
basis (DCT-II on a cell-centred grid) realising homogeneous Neumann
conditions in 1-D.  Arrays are stored row-major with x fastest, i.e. a 3-D
grid with ``points = (nx, ny, nz)`` holds arrays of shape ``(nz, ny, nx)``.

Hot loops work on raw arrays through :class:`SpectralOps`; the
:class:`SpatialField` wrapper carries the grid for API and file I/O.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import BinaryIO, Iterator

import numpy as np
import scipy.fft as sfft

PERIODIC = "periodic"
NEUMANN = "neumann"
_BASIS_TAGS = {PERIODIC: 0, NEUMANN: 1}
_MAGIC = b"PFLD"
DENSE_LIMIT = 512


class GridMismatchError(ValueError):
    pass


class SingularModeError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GridSpec:
    dims: int
    extents: tuple[float, ...]
    points: tuple[int, ...]
    basis: str = PERIODIC

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "points", tuple(int(p) for p in self.points))
        if self.dims not in (1, 3):
            raise ValueError("dims must be 1 or 3")
        if len(self.extents) != self.dims or len(self.points) != self.dims:
            raise ValueError("extents and points need one entry per dimension")
        if min(self.points) < 4:
            raise ValueError("at least 4 points per dimension are required")
        if self.basis not in _BASIS_TAGS:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.basis == NEUMANN and self.dims != 1:
            raise ValueError("the cosine basis is 1-D only")

    @classmethod
    def periodic(cls, n: int, dims: int = 3, length: float = 1.0) -> "GridSpec":
        return cls(dims, (length,) * dims, (n,) * dims, PERIODIC)

    @classmethod
    def neumann(cls, n: int, length: float) -> "GridSpec":
        return cls(1, (length,), (n,), NEUMANN)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(reversed(self.points))

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.extents) / np.prod(self.points))

    def coordinates(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays [x, y, z] matching ``shape``."""
        coords = []
        for axis_dim in range(self.dims):
            n, L = self.points[axis_dim], self.extents[axis_dim]
            if self.basis == PERIODIC:
                x = np.arange(n) * (L / n)
            else:
                x = (np.arange(n) + 0.5) * (L / n)
            shape = [1] * self.dims
            shape[self.dims - 1 - axis_dim] = n
            coords.append(x.reshape(shape))
        return coords

    def with_points(self, n: int | tuple[int, ...]) -> "GridSpec":
        pts = (n,) * self.dims if np.isscalar(n) else tuple(n)
        return GridSpec(self.dims, self.extents, pts, self.basis)


class SpectralOps:
    """Spectral operators on arrays living on one grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.shape = grid.shape
        self.cell_volume = grid.cell_volume
        if grid.basis == PERIODIC:
            ks = []
            for a, n in enumerate(self.shape):
                L = grid.extents[grid.dims - 1 - a]
                if a == len(self.shape) - 1:
                    k = sfft.rfftfreq(n, d=L / n) * 2 * np.pi
                else:
                    k = sfft.fftfreq(n, d=L / n) * 2 * np.pi
                s = [1] * len(self.shape)
                s[a] = len(k)
                ks.append(k.reshape(s))
            self.k2 = sum(k ** 2 for k in ks)
            # transforms act on the trailing grid axes; leading axes are batches
            self._axes = tuple(range(-len(self.shape), 0))
        else:
            n, L = grid.points[0], grid.extents[0]
            self.k2 = (np.pi * np.arange(n) / L) ** 2
        self.k2.setflags(write=False)
        # small cosine grids: a dense orthogonal DCT matrix beats per-call FFT overhead
        self._dct = None
        if grid.basis == NEUMANN and grid.points[0] <= DENSE_LIMIT:
            self._dct = sfft.dct(np.eye(grid.points[0]), type=2, norm="ortho", axis=0)
            self._dct.setflags(write=False)
        self._resolvents: dict = {}

    # transforms ----------------------------------------------------------
    def forward(self, a: np.ndarray) -> np.ndarray:
        if self.grid.basis == PERIODIC:
            return sfft.rfftn(a, axes=self._axes, norm="forward")
        if self._dct is not None:
            return a @ self._dct.T
        return sfft.dct(a, type=2, norm="ortho")

    def backward(self, c: np.ndarray) -> np.ndarray:
        if self.grid.basis == PERIODIC:
            return sfft.irfftn(c, s=self.shape, axes=self._axes, norm="forward")
        if self._dct is not None:
            return c @ self._dct
        return sfft.idct(c, type=2, norm="ortho")

    # operators -----------------------------------------------------------
    def laplacian(self, a: np.ndarray) -> np.ndarray:
        return self.backward(-self.k2 * self.forward(a))

    def solve(self, rhs: np.ndarray, a: float, kappa: float, shift: float = 0.0) -> np.ndarray:
        """Solve (I - a*kappa*Lap + a*shift) g = rhs."""
        if self._dct is not None:
            key = (a, kappa, shift)
            M = self._resolvents.get(key)
            if M is None:
                M = self._dct.T @ (self._dct / self._diag(a, kappa, shift)[:, None])
                if len(self._resolvents) < 64:
                    self._resolvents[key] = M
            return rhs @ M.T
        return self.backward(self.forward(rhs) / self._diag(a, kappa, shift))

    def _diag(self, a, kappa, shift):
        diag = 1.0 + a * (kappa * self.k2 + shift)
        if np.any(diag == 0.0):
            raise SingularModeError("implicit operator has a zero mode")
        return diag

    def propagate(self, a: np.ndarray, kappa: float, dt: float) -> np.ndarray:
        """exp(dt*kappa*Lap) a, exact per mode."""
        if dt < 0:
            raise ValueError("dt must be non-negative")
        if dt == 0:
            return a.copy()
        return self.backward(np.exp(-dt * kappa * self.k2) * self.forward(a))

    def mode_filter(self, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Multiply spectral coefficients by a per-mode factor array."""
        return self.backward(z * c)

    # inner products ------------------------------------------------------
    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.cell_volume * np.vdot(a, b).real)

    def norms(self, a: np.ndarray) -> np.ndarray:
        """L2 norms of a stack of fields; leading axes are kept."""
        return np.sqrt(self.cell_volume * np.sum(a * a, axis=tuple(range(-self.grid.dims, 0))))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.cell_volume * np.vdot(a, a).real))

    def spectral_energy(self, a: np.ndarray) -> float:
        """Domain-measure-weighted coefficient energy (equals inner(a, a))."""
        c = self.forward(a)
        vol = float(np.prod(self.grid.extents))
        if self.grid.basis == NEUMANN:
            return float(np.sum(c ** 2) * vol / self.grid.points[0])
        w = np.full(c.shape[-1], 2.0)
        w[0] = 1.0
        if self.shape[-1] % 2 == 0:
            w[-1] = 1.0
        return float(vol * np.sum(w * np.abs(c) ** 2))

    # resolution transfer -------------------------------------------------
    def transfer(self, a: np.ndarray, target: GridSpec) -> np.ndarray:
        """Spectral interpolation / truncation to ``target``."""
        g = self.grid
        if target == g:
            return a.copy()
        if target.basis != g.basis or target.extents != g.extents or target.dims != g.dims:
            raise GridMismatchError(f"cannot transfer {g} -> {target}")
        for ns, nt in zip(g.points, target.points):
            if max(ns, nt) % min(ns, nt):
                raise GridMismatchError("point counts must have an integer ratio")
        c = self.forward(a)
        dst = operators(target)
        lead = a.shape[:a.ndim - g.dims]
        if g.basis == NEUMANN:
            ns, nt = g.points[0], target.points[0]
            k = min(ns, nt)
            out = np.zeros(lead + (nt,))
            out[..., :k] = c[..., :k] * np.sqrt(nt / ns)
            return dst.backward(out)
        tshape = target.shape
        out = np.zeros(lead + tshape[:-1] + (tshape[-1] // 2 + 1,), dtype=complex)
        src_idx, dst_idx = [], []
        for a_i, (ns, nt) in enumerate(zip(self.shape, tshape)):
            k = min(ns, nt) // 2  # modes strictly below the smaller Nyquist
            if a_i == len(tshape) - 1:
                s = np.arange(k)
                d = s
            else:
                pos = np.arange(k)
                neg = np.arange(-k + 1, 0)
                s = np.concatenate((pos, neg % ns))
                d = np.concatenate((pos, neg % nt))
            src_idx.append(s)
            dst_idx.append(d)
        out[(Ellipsis,) + np.ix_(*dst_idx)] = c[(Ellipsis,) + np.ix_(*src_idx)]
        return dst.backward(out)


@lru_cache(maxsize=None)
def operators(grid: GridSpec) -> SpectralOps:
    # read-only after construction, so safe to share between workers
    return SpectralOps(grid)


@dataclass
class SpatialField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "SpatialField":
        vals = np.broadcast_to(fn(*grid.coordinates()), grid.shape)
        return cls(grid, np.array(vals, dtype=float))

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> "SpatialField":
        return cls(grid, np.full(grid.shape, float(c)))

    def _check(self, other: "SpatialField"):
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")

    def __add__(self, other: "SpatialField") -> "SpatialField":
        self._check(other)
        return SpatialField(self.grid, self.values + other.values)

    def __sub__(self, other: "SpatialField") -> "SpatialField":
        self._check(other)
        return SpatialField(self.grid, self.values - other.values)

    def __mul__(self, s: float) -> "SpatialField":
        return SpatialField(self.grid, self.values * float(s))

    __rmul__ = __mul__


def laplacian(f: SpatialField) -> SpatialField:
    return SpatialField(f.grid, operators(f.grid).laplacian(f.values))


def implicit_solve(rhs: SpatialField, a: float, kappa: float, shift: float = 0.0) -> SpatialField:
    if a <= 0:
        raise ValueError("a must be positive")
    return SpatialField(rhs.grid, operators(rhs.grid).solve(rhs.values, a, kappa, shift))


def exp_propagate(f: SpatialField, kappa: float, dt: float) -> SpatialField:
    return SpatialField(f.grid, operators(f.grid).propagate(f.values, kappa, dt))


def transfer(f: SpatialField, target: GridSpec) -> SpatialField:
    return SpatialField(target, operators(f.grid).transfer(f.values, target))


def inner(f: SpatialField, g: SpatialField) -> float:
    f._check(g)
    return operators(f.grid).inner(f.values, g.values)


# snapshot files -------------------------------------------------------------

def write_snapshot(fh: BinaryIO, f: SpatialField, time: float = 0.0) -> None:
    """Append one little-endian record: header, time, float64 values."""
    g = f.grid
    fh.write(_MAGIC)
    fh.write(struct.pack("<I", g.dims))
    fh.write(struct.pack(f"<{g.dims}I", *g.points))
    fh.write(struct.pack("<I", _BASIS_TAGS[g.basis]))
    fh.write(struct.pack(f"<{g.dims}d", *g.extents))
    fh.write(struct.pack("<d", time))
    fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshots(fh: BinaryIO) -> Iterator[tuple[float, SpatialField]]:
    tags = {v: k for k, v in _BASIS_TAGS.items()}
    while True:
        magic = fh.read(4)
        if not magic:
            return
        if magic != _MAGIC:
            raise ValueError("not a field snapshot record")
        (dims,) = struct.unpack("<I", fh.read(4))
        points = struct.unpack(f"<{dims}I", fh.read(4 * dims))
        (tag,) = struct.unpack("<I", fh.read(4))
        extents = struct.unpack(f"<{dims}d", fh.read(8 * dims))
        (time,) = struct.unpack("<d", fh.read(8))
        grid = GridSpec(dims, extents, points, tags[tag])
        vals = np.frombuffer(fh.read(8 * grid.size), dtype="<f8").astype(float)
        yield time, SpatialField(grid, vals)


def save_snapshots(path, records) -> None:
    with open(path, "wb") as fh:
        for t, f in records:
            write_snapshot(fh, f, t)


def load_snapshots(path) -> list[tuple[float, SpatialField]]:
    with open(path, "rb") as fh:
        return list(read_snapshots(fh))
