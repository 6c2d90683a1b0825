"""Rule-based labeling of raster stacks into vegetation / building /
background, plus vegetation-fraction bookkeeping.

Canopy scatters laser pulses, so vegetation keys on elevation roughness
(z_std) together with the multi-return fraction; buildings on elevated,
smooth surfaces. Precedence is vegetation > building > background.
Thresholds carry physical units, so segmentation expects DE-normalized
channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .rasterizer import RasterStack

BACKGROUND, BUILDING, VEGETATION = 0, 1, 2
_PGM_LEVELS = {BACKGROUND: 0, BUILDING: 128, VEGETATION: 255}
LABEL_NAMES = {BACKGROUND: "background", BUILDING: "building", VEGETATION: "vegetation"}


@dataclass
class LabelRules:
    veg_zstd_min: float = 0.5       # meters
    veg_multiret_min: float = 0.3   # fraction
    bld_height_min: float = 3.0     # meters
    bld_zstd_max: float = 0.4       # meters

    def __post_init__(self):
        for name in ("veg_zstd_min", "veg_multiret_min", "bld_height_min", "bld_zstd_max"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        if self.bld_zstd_max >= self.veg_zstd_min:
            raise UsageError("bld_zstd_max must be < veg_zstd_min (disjointness guard)")


@dataclass
class SegmentationMap:
    labels: np.ndarray  # (H, W) of {BACKGROUND, BUILDING, VEGETATION}

    @property
    def shape(self):
        return self.labels.shape


def segment(stack: RasterStack, rules: LabelRules) -> SegmentationMap:
    """Label each cell of a de-normalized stack."""
    z_std = stack.channel("z_std")
    z_mean = stack.channel("z_mean")
    multiret = stack.channel("multi_return_fraction")
    veg = (z_std >= rules.veg_zstd_min) & (multiret >= rules.veg_multiret_min)
    bld = (z_mean >= rules.bld_height_min) & (z_std <= rules.bld_zstd_max) & ~veg
    labels = np.full(z_std.shape, BACKGROUND, dtype=np.uint8)
    labels[bld] = BUILDING
    labels[veg] = VEGETATION
    return SegmentationMap(labels)


def vegetation_fraction(seg: SegmentationMap) -> float:
    return float(np.count_nonzero(seg.labels == VEGETATION) / seg.labels.size)


def label_counts(seg: SegmentationMap) -> dict:
    return {name: int(np.count_nonzero(seg.labels == code))
            for code, name in LABEL_NAMES.items()}


def aggregate_fractions(tuples):
    """Average v' per distinct delta_t; returns [(delta_t, mean_v)] sorted
    by delta_t."""
    tuples = list(tuples)
    if not tuples:
        raise UsageError("aggregate_fractions: empty input")
    sums, counts = {}, {}
    for dt, v in tuples:
        dt = float(dt)
        sums[dt] = sums.get(dt, 0.0) + float(v)
        counts[dt] = counts.get(dt, 0) + 1
    return [(dt, sums[dt] / counts[dt]) for dt in sorted(sums)]


def export_pgm(seg: SegmentationMap, stream) -> None:
    """Binary PGM (P5): background 0, building 128, vegetation 255."""
    h, w = seg.labels.shape
    gray = np.zeros((h, w), dtype=np.uint8)
    for code, level in _PGM_LEVELS.items():
        gray[seg.labels == code] = level
    stream.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
    stream.write(gray[::-1].tobytes())  # row 0 is southernmost; PGM wants top-first


def export_counts_csv(seg: SegmentationMap, stream) -> None:
    counts = label_counts(seg)
    stream.write("label,cells\n")
    for name in ("background", "building", "vegetation"):
        stream.write(f"{name},{counts[name]}\n")
