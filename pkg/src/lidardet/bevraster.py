"""BEV rasterization: per-slice max-height maps plus a log-scaled density map.

The grid is row-major with ``row`` indexing x (forward) and ``col``
indexing y (lateral). Height slices hold the maximum absolute z of the
points falling in each cell and slice; empty cells carry the ``z_min``
sentinel. Density is ``min(1, ln(N + 1) / ln 16)`` for the per-cell point
count N over all slices, so 15 points saturate a cell.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SpecError
from .pcio import PointCloud

GRID_MAGIC = b"BEVG"
GRID_VERSION = 1
HEADER_BYTES = 32
_HEADER_FMT = "<4sIIIIfff"  # magic, version, H, W, C, res, x_min, y_min


def _integral(extent: float, step: float, what: str) -> int:
    n = extent / step
    rounded = round(n)
    if rounded < 1 or abs(n - rounded) > 1e-6:
        raise SpecError(f"{what} extent {extent} is not a positive multiple of {step}")
    return int(rounded)


@dataclass(frozen=True)
class RangeSpec:
    """Crop bounds and grid geometry; validated on construction."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    xy_resolution: float
    num_slices: int
    slice_height: float

    def __post_init__(self) -> None:
        if self.xy_resolution <= 0.0:
            raise SpecError(f"xy_resolution must be positive, got {self.xy_resolution}")
        if self.slice_height <= 0.0:
            raise SpecError(f"slice_height must be positive, got {self.slice_height}")
        if self.num_slices < 1:
            raise SpecError(f"num_slices must be >= 1, got {self.num_slices}")
        for lo, hi, ax in ((self.x_min, self.x_max, "x"), (self.y_min, self.y_max, "y"),
                           (self.z_min, self.z_max, "z")):
            if not hi > lo:
                raise SpecError(f"{ax}_max must exceed {ax}_min, got [{lo}, {hi}]")
        _integral(self.x_max - self.x_min, self.xy_resolution, "x")
        _integral(self.y_max - self.y_min, self.xy_resolution, "y")
        if abs(self.num_slices * self.slice_height - (self.z_max - self.z_min)) > 1e-9:
            raise SpecError("num_slices * slice_height must equal the z extent")

    @property
    def n_rows(self) -> int:
        return _integral(self.x_max - self.x_min, self.xy_resolution, "x")

    @property
    def n_cols(self) -> int:
        return _integral(self.y_max - self.y_min, self.xy_resolution, "y")

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """World (x, y) of a cell center; IndexError when out of bounds."""
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise IndexError(f"cell ({row}, {col}) outside {self.n_rows}x{self.n_cols} grid")
        return (self.x_min + (row + 0.5) * self.xy_resolution,
                self.y_min + (col + 0.5) * self.xy_resolution)

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        """Row/col of the cell containing (x, y); not bounds-checked."""
        return (int(math.floor((x - self.x_min) / self.xy_resolution)),
                int(math.floor((y - self.y_min) / self.xy_resolution)))


@dataclass
class BevGrid:
    heights: np.ndarray  # (H, W, S); z_min sentinel where a cell slice is empty
    density: np.ndarray  # (H, W) in [0, 1]
    spec: RangeSpec

    @property
    def channels(self) -> int:
        return self.spec.num_slices + 1


def rasterize(pc: PointCloud, spec: RangeSpec) -> BevGrid:
    """Grid a cloud into height slices and a density map.

    Points outside the spec bounds are ignored rather than rejected; a
    point exactly at ``z_max`` lands in the top slice. The accumulation
    uses sequential reductions, so results are bit-identical for a given
    input ordering (and max/count are order-free anyway).
    """
    H, W, S = spec.n_rows, spec.n_cols, spec.num_slices
    heights = np.full((H, W, S), spec.z_min, dtype=np.float64)
    counts = np.zeros((H, W), dtype=np.int64)

    p = pc.points
    if len(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        keep = ((x >= spec.x_min) & (x < spec.x_max)
                & (y >= spec.y_min) & (y < spec.y_max)
                & (z >= spec.z_min) & (z <= spec.z_max))
        x, y, z = x[keep], y[keep], z[keep]
        rows = np.floor((x - spec.x_min) / spec.xy_resolution).astype(np.int64)
        cols = np.floor((y - spec.y_min) / spec.xy_resolution).astype(np.int64)
        slices = np.floor((z - spec.z_min) / spec.slice_height).astype(np.int64)
        np.clip(slices, 0, S - 1, out=slices)
        np.maximum.at(heights, (rows, cols, slices), z)
        np.add.at(counts, (rows, cols), 1)

    density = np.minimum(1.0, np.log(counts + 1.0) / math.log(16.0))
    return BevGrid(heights, density, spec)


def write_grid(grid: BevGrid, path) -> None:
    """Binary grid blob: 32-byte header then row-major float32 channels.

    Channels are the height slices followed by the density map.
    """
    spec = grid.spec
    header = struct.pack(_HEADER_FMT, GRID_MAGIC, GRID_VERSION,
                         spec.n_rows, spec.n_cols, grid.channels,
                         spec.xy_resolution, spec.x_min, spec.y_min)
    assert len(header) == HEADER_BYTES
    stacked = np.concatenate([grid.heights, grid.density[:, :, None]], axis=2)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(stacked, dtype="<f4").tobytes())


def read_grid(path):
    """Read a grid blob; returns (heights, density, meta dict)."""
    with open(path, "rb") as fh:
        header = fh.read(HEADER_BYTES)
        if len(header) < HEADER_BYTES:
            raise FormatError(f"{path}: truncated grid header")
        magic, version, H, W, C, res, x_min, y_min = struct.unpack(_HEADER_FMT, header)
        if magic != GRID_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != H * W * C:
        raise FormatError(f"{path}: expected {H * W * C} values, got {data.size}")
    stacked = data.astype(np.float64).reshape(H, W, C)
    meta = {"version": version, "rows": H, "cols": W, "channels": C,
            "resolution": float(res), "x_min": float(x_min), "y_min": float(y_min)}
    return stacked[:, :, :-1], stacked[:, :, -1], meta
