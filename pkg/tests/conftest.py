from __future__ import annotations

import numpy as np
import pytest

from phraseseg import DataPoint, Detection, FrameMaskSeq, GtInstance, RleMask, rle_encode


def mask_from_rows(*rows: str) -> RleMask:
    """Build a mask from ascii art rows; any non '.'/' ' character is foreground."""
    grid = np.array([[ch not in ". " for ch in row] for row in rows])
    return rle_encode(grid)


def mask_from_pixels(height, width, pixels) -> RleMask:
    grid = np.zeros((height, width), dtype=bool)
    for r, c in pixels:
        grid[r, c] = True
    return rle_encode(grid)


def rect_mask(height, width, x, y, w, h) -> RleMask:
    grid = np.zeros((height, width), dtype=bool)
    grid[y : y + h, x : x + w] = True
    return rle_encode(grid)


def random_mask(rng, height, width, p=0.4) -> RleMask:
    return rle_encode(rng.random((height, width)) < p)


def det(mask, score=1.0, group=False) -> Detection:
    return Detection(mask=mask, score=score, group=group)


def datapoint(gt_masks, preds=(), media="m", phrase="thing", extra_annotations=()):
    """One datapoint from plain mask lists; annotations beyond the first come
    from ``extra_annotations``."""
    annotations = [tuple(GtInstance(mask=m) for m in gt_masks)]
    for ann in extra_annotations:
        annotations.append(tuple(GtInstance(mask=m) for m in ann))
    return DataPoint(
        media_id=media,
        phrase=phrase,
        annotations=tuple(annotations),
        predictions=tuple(preds),
    )


def seq(height, width, frames) -> FrameMaskSeq:
    return FrameMaskSeq(height, width, dict(frames))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
