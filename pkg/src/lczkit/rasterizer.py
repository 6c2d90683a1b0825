"""Grid an irregular point cloud into a 13-channel statistics stack.

Channel set (fixed order): five elevation statistics, four intensity
statistics, and four return-count statistics per cell. Elevation channels
are expressed relative to the scene's 2nd z-percentile (a cheap ground
proxy) so the empty-cell fill value 0 reads as "at ground level".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .io import PointCloud, save_model

log = logging.getLogger(__name__)

CHANNEL_NAMES = (
    "z_min", "z_max", "z_mean", "z_std", "z_range",
    "i_mean", "i_std", "i_min", "i_max",
    "point_count", "mean_return_number", "multi_return_fraction", "last_return_fraction",
)
N_CHANNELS = len(CHANNEL_NAMES)
STD_FLOOR = 1e-6
GROUND_PERCENTILE = 2.0


@dataclass
class GridSpec:
    origin_x: float = 0.0
    origin_y: float = 0.0
    cell_size: float = 0.3
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if self.cell_size <= 0:
            raise UsageError("cell_size must be > 0")
        if self.width < 1 or self.height < 1:
            raise UsageError("grid must be at least 1x1")

    @property
    def extent_x(self) -> float:
        return self.width * self.cell_size

    @property
    def extent_y(self) -> float:
        return self.height * self.cell_size


@dataclass
class RasterStack:
    spec: GridSpec
    channels: np.ndarray  # shape (N_CHANNELS, height, width); row 0 at origin_y
    channel_names: tuple = CHANNEL_NAMES
    n_outside: int = 0  # points outside the grid extent, ignored

    def __post_init__(self):
        if self.channels.shape != (N_CHANNELS, self.spec.height, self.spec.width):
            raise UsageError(
                f"expected channel array of shape {(N_CHANNELS, self.spec.height, self.spec.width)}, "
                f"got {self.channels.shape}"
            )

    def channel(self, name: str) -> np.ndarray:
        return self.channels[CHANNEL_NAMES.index(name)]


@dataclass
class NormStats:
    mean: np.ndarray  # (N_CHANNELS,)
    std: np.ndarray   # (N_CHANNELS,), clamped to >= STD_FLOOR

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise UsageError("mean/std shape mismatch")


def rasterize(cloud: PointCloud, spec: GridSpec, ground_reference: bool = True) -> RasterStack:
    """Bin points to cells and compute per-cell statistics.

    Deterministic and permutation-invariant: points are sorted by
    (cell, x, y, z, intensity) before accumulation so summation order is
    fixed. Out-of-extent points are counted on the result and skipped.
    """
    h, w = spec.height, spec.width
    channels = np.zeros((N_CHANNELS, h, w))
    if len(cloud) == 0:
        return RasterStack(spec, channels)

    z = cloud.z.astype(float)
    if ground_reference:
        z = z - np.percentile(cloud.z, GROUND_PERCENTILE)
    col = np.floor((cloud.x - spec.origin_x) / spec.cell_size).astype(np.int64)
    row = np.floor((cloud.y - spec.origin_y) / spec.cell_size).astype(np.int64)
    inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    n_outside = int(len(cloud) - inside.sum())
    if n_outside:
        log.warning("rasterize: %d point(s) outside grid extent ignored", n_outside)
    if not inside.any():
        return RasterStack(spec, channels, n_outside=n_outside)

    cell = row[inside] * w + col[inside]
    x, y = cloud.x[inside], cloud.y[inside]
    zz = z[inside]
    inten = cloud.intensity[inside].astype(float)
    rn = cloud.return_number[inside].astype(float)
    nr = cloud.num_returns[inside].astype(float)

    order = np.lexsort((inten, zz, y, x, cell))
    cell, zz, inten, rn, nr = cell[order], zz[order], inten[order], rn[order], nr[order]
    starts = np.flatnonzero(np.r_[True, cell[1:] != cell[:-1]])
    cells = cell[starts]
    counts = np.diff(np.r_[starts, len(cell)])

    def seg_sum(a):
        return np.add.reduceat(a, starts)

    def seg_min(a):
        return np.minimum.reduceat(a, starts)

    def seg_max(a):
        return np.maximum.reduceat(a, starts)

    def seg_std(a, mean):
        dev = a - np.repeat(mean, counts)
        return np.sqrt(seg_sum(dev * dev) / counts)

    z_mean = seg_sum(zz) / counts
    i_mean = seg_sum(inten) / counts
    rows, cols = cells // w, cells % w
    stats = {
        "z_min": seg_min(zz),
        "z_max": seg_max(zz),
        "z_mean": z_mean,
        "z_std": seg_std(zz, z_mean),
        "z_range": seg_max(zz) - seg_min(zz),
        "i_mean": i_mean,
        "i_std": seg_std(inten, i_mean),
        "i_min": seg_min(inten),
        "i_max": seg_max(inten),
        "point_count": counts.astype(float),
        "mean_return_number": seg_sum(rn) / counts,
        "multi_return_fraction": seg_sum((nr > 1).astype(float)) / counts,
        "last_return_fraction": seg_sum((rn == nr).astype(float)) / counts,
    }
    for ci, name in enumerate(CHANNEL_NAMES):
        channels[ci, rows, cols] = stats[name]
    return RasterStack(spec, channels, n_outside=n_outside)


def compute_norm_stats(stacks) -> NormStats:
    """Per-channel mean/std over all cells of all stacks (population std)."""
    stacks = list(stacks)
    if not stacks:
        raise UsageError("compute_norm_stats needs at least one stack")
    flat = np.concatenate([s.channels.reshape(N_CHANNELS, -1) for s in stacks], axis=1)
    mean = flat.mean(axis=1)
    std = np.maximum(flat.std(axis=1), STD_FLOOR)
    return NormStats(mean, std)


def normalize(stack: RasterStack, stats: NormStats) -> RasterStack:
    if len(stats.mean) != stack.channels.shape[0]:
        raise UsageError("norm stats channel count mismatch")
    scaled = (stack.channels - stats.mean[:, None, None]) / stats.std[:, None, None]
    return RasterStack(stack.spec, scaled, stack.channel_names, stack.n_outside)


def denormalize(stack: RasterStack, stats: NormStats) -> RasterStack:
    if len(stats.mean) != stack.channels.shape[0]:
        raise UsageError("norm stats channel count mismatch")
    raw = stack.channels * stats.std[:, None, None] + stats.mean[:, None, None]
    return RasterStack(stack.spec, raw, stack.channel_names, stack.n_outside)


def denormalize_array(channels: np.ndarray, stats: NormStats) -> np.ndarray:
    """Denormalize a bare (C, H, W) array, e.g. a decoder output."""
    return channels * stats.std[:, None, None] + stats.mean[:, None, None]


def stack_tensors(stack: RasterStack):
    """Named tensors for the LCZM container."""
    tensors = [(f"channel/{name}", stack.channels[i]) for i, name in enumerate(CHANNEL_NAMES)]
    grid = np.array(
        [stack.spec.origin_x, stack.spec.origin_y, stack.spec.cell_size,
         stack.spec.width, stack.spec.height]
    )
    tensors.append(("grid/spec", grid))
    return tensors


def save_stack(stack: RasterStack, path) -> None:
    save_model(stack_tensors(stack), path)


def stack_from_tensors(tensors) -> RasterStack:
    by_name = dict(tensors)
    if "grid/spec" not in by_name:
        raise UsageError("missing grid/spec tensor")
    gx, gy, cs, w, h = (float(v) for v in by_name["grid/spec"])
    spec = GridSpec(gx, gy, cs, int(w), int(h))
    channels = np.zeros((N_CHANNELS, spec.height, spec.width))
    for i, name in enumerate(CHANNEL_NAMES):
        key = f"channel/{name}"
        if key not in by_name:
            raise UsageError(f"missing channel tensor {key}")
        channels[i] = np.asarray(by_name[key], dtype=float)
    return RasterStack(spec, channels)


def load_stack(path) -> RasterStack:
    from .io import load_model

    return stack_from_tensors(load_model(path))


def norm_stats_tensors(stats: NormStats):
    return [("norm/mean", stats.mean), ("norm/std", stats.std)]


def norm_stats_from_tensors(tensors) -> NormStats:
    by_name = dict(tensors)
    return NormStats(np.asarray(by_name["norm/mean"], dtype=float),
                     np.asarray(by_name["norm/std"], dtype=float))
