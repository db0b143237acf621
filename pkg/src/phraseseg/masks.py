"""Run-length-encoded binary masks and the geometry kernels built on them.

The RLE convention is the de-facto dataset interchange one: the pixel grid is
scanned in column-major order and runs alternate background/foreground,
starting with a background run that may have length zero. All values are
immutable after construction and every operation is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import UndefinedMetricError


@dataclass(frozen=True)
class RleMask:
    """A binary mask on a fixed ``height x width`` grid, stored as run lengths.

    ``counts`` always sums to ``height * width``. Construction normalizes the
    runs to canonical form (no zero-length runs except a possible leading
    background run), so equal masks compare equal structurally.
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"mask grid must be non-empty, got {self.height}x{self.width}")
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise ValueError("counts must contain at least one run")
        if any(c < 0 for c in counts):
            raise ValueError("run lengths must be non-negative")
        total = sum(counts)
        if total != self.height * self.width:
            raise ValueError(
                f"run lengths sum to {total}, expected {self.height * self.width}"
            )
        if not _is_canonical(counts):
            counts = _canonicalize(counts)
        object.__setattr__(self, "counts", counts)

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def decode(self) -> np.ndarray:
        """Dense boolean grid, shape ``(height, width)``. Cached; do not mutate."""
        dense = self.__dict__.get("_dense")
        if dense is None:
            values = np.zeros(len(self.counts), dtype=bool)
            values[1::2] = True
            flat = np.repeat(values, np.asarray(self.counts, dtype=np.int64))
            dense = flat.reshape((self.height, self.width), order="F")
            dense.setflags(write=False)
            object.__setattr__(self, "_dense", dense)
        return dense

    @classmethod
    def empty(cls, height: int, width: int) -> "RleMask":
        return cls(height, width, (height * width,))

    @classmethod
    def full(cls, height: int, width: int) -> "RleMask":
        return cls(height, width, (0, height * width))


def _is_canonical(counts) -> bool:
    if any(c == 0 for c in counts[1:]):
        return False
    return counts[0] > 0 or len(counts) > 1


def _canonicalize(counts) -> tuple[int, ...]:
    # Merge zero-length runs while preserving background/foreground parity.
    merged = [0]
    value = 0
    for i, c in enumerate(counts):
        run_value = i % 2
        if run_value == value:
            merged[-1] += c
        elif c > 0:
            merged.append(c)
            value = run_value
    return tuple(merged)


def rle_encode(grid) -> RleMask:
    """Encode a rectangular binary grid, scanning columns first."""
    arr = np.asarray(grid)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    flat = arr.astype(bool).ravel(order="F")
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat.size]))
    counts = (ends - starts).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(arr.shape[0], arr.shape[1], tuple(counts))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Exact inverse of :func:`rle_encode`; returns a writable boolean grid."""
    return mask.decode().copy()


def _check_same_grid(a: RleMask, b: RleMask):
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"mask grids differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def intersection_area(a: RleMask, b: RleMask) -> int:
    _check_same_grid(a, b)
    if a.area == 0 or b.area == 0:
        return 0
    return int(np.count_nonzero(a.decode() & b.decode()))


def mask_iou(a: RleMask, b: RleMask) -> float:
    """Intersection over union; two empty masks have IoU 0 by convention."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def mask_iom(a: RleMask, b: RleMask) -> float:
    """Intersection over the smaller area, used to spot whole-vs-part nesting.

    Undefined (raises) when both masks are empty; 0 when exactly one is.
    """
    _check_same_grid(a, b)
    if a.area == 0 and b.area == 0:
        raise UndefinedMetricError("IoM is undefined for two empty masks")
    if a.area == 0 or b.area == 0:
        return 0.0
    return intersection_area(a, b) / min(a.area, b.area)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, ``(x, y)`` top-left and ``(w, h)`` extent."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError("box extent must be non-negative")

    @property
    def area(self) -> int:
        return self.w * self.h


def bbox_of(mask: RleMask) -> BBox:
    """Tight bounding box of a non-empty mask."""
    if mask.area == 0:
        raise ValueError("empty mask has no bounding box")
    rows, cols = np.nonzero(mask.decode())
    y0, y1 = int(rows.min()), int(rows.max())
    x0, x1 = int(cols.min()), int(cols.max())
    return BBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def bbox_iou(a: BBox, b: BBox) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class FrameMaskSeq:
    """Per-frame masks of one tracked identity. An absent frame is an empty mask."""

    height: int
    width: int
    frames: Mapping[int, RleMask]

    def __post_init__(self):
        frames = dict(self.frames)
        for idx, mask in frames.items():
            if not isinstance(idx, int) or idx < 0:
                raise ValueError(f"frame index must be a non-negative int, got {idx!r}")
            if (mask.height, mask.width) != (self.height, self.width):
                raise ValueError(
                    f"frame {idx} mask is {mask.height}x{mask.width}, "
                    f"sequence grid is {self.height}x{self.width}"
                )
        object.__setattr__(self, "frames", frames)

    def mask_at(self, frame: int) -> Optional[RleMask]:
        return self.frames.get(frame)

    @property
    def volume(self) -> int:
        return sum(m.area for m in self.frames.values())

    @property
    def is_empty(self) -> bool:
        return self.volume == 0


def volume_iou(a: FrameMaskSeq, b: FrameMaskSeq) -> float:
    """Total intersection volume over total union volume across all frames."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("masklet grids differ")
    if a.is_empty and b.is_empty:
        raise UndefinedMetricError("volume IoU is undefined for two empty masklets")
    inter = 0
    union = 0
    for t in set(a.frames) | set(b.frames):
        ma, mb = a.mask_at(t), b.mask_at(t)
        area_a = ma.area if ma is not None else 0
        area_b = mb.area if mb is not None else 0
        i = intersection_area(ma, mb) if ma is not None and mb is not None else 0
        inter += i
        union += area_a + area_b - i
    return inter / union
