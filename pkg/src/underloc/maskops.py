"""Binary mask merging, homography warping, and pixel IoU.

Masks are compared in the database frame: the query mask is pulled through
the homography by inverse mapping with nearest-neighbor lookup, which keeps
everything binary and bit-exact. Content mapping outside the database frame
is dropped; an empty union gives IoU 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataio import BinaryMask
from .geometry import Homography

# Overlay colors (RGB): database-only, query-only, intersection.
OVERLAY_DATABASE_ONLY = (60, 100, 230)
OVERLAY_QUERY_ONLY = (240, 150, 40)
OVERLAY_INTERSECTION = (60, 200, 90)


@dataclass
class WarpedOverlay:
    """Database mask, query mask warped into the database frame, and their IoU."""

    database_mask: BinaryMask
    warped_query_mask: BinaryMask
    iou: float

    def __post_init__(self):
        if (
            self.database_mask.width_px != self.warped_query_mask.width_px
            or self.database_mask.height_px != self.warped_query_mask.height_px
        ):
            raise ValueError("overlay masks must share dimensions")


def merge_masks(
    instances: Sequence[BinaryMask],
    dims: Optional[tuple[int, int]] = None,
) -> BinaryMask:
    """Pixelwise OR of instance masks.

    `dims` = (width, height) is required for an empty list and otherwise must
    agree with the instances.
    """
    if not instances:
        if dims is None:
            raise ValueError("empty instance list needs explicit dims")
        w, h = dims
        return BinaryMask(width_px=w, height_px=h, bits=np.zeros((h, w), dtype=bool))
    w, h = instances[0].width_px, instances[0].height_px
    if dims is not None and dims != (w, h):
        raise ValueError(f"declared dims {dims} != instance dims {(w, h)}")
    merged = np.zeros((h, w), dtype=bool)
    for m in instances:
        if (m.width_px, m.height_px) != (w, h):
            raise ValueError(
                f"instance dims {(m.width_px, m.height_px)} != {(w, h)}"
            )
        merged |= m.bits
    return BinaryMask(width_px=w, height_px=h, bits=merged)


def warp_mask(
    mask: BinaryMask,
    h: Homography,
    target_dims: tuple[int, int],
) -> BinaryMask:
    """Warp a query-frame mask into the database frame by inverse mapping.

    For each database pixel center (x+0.5, y+0.5) the query mask is sampled
    at pi(H * center) with nearest-neighbor lookup (H maps database to query
    coordinates); samples landing outside the query mask are false.
    """
    target_w, target_h = target_dims
    ys, xs = np.mgrid[0:target_h, 0:target_w]
    centers = np.column_stack([xs.ravel() + 0.5, ys.ravel() + 0.5])
    mapped = h.apply(centers)
    sx = np.floor(mapped[:, 0]).astype(np.int64)
    sy = np.floor(mapped[:, 1]).astype(np.int64)
    valid = (
        np.isfinite(mapped).all(axis=1)
        & (sx >= 0)
        & (sx < mask.width_px)
        & (sy >= 0)
        & (sy < mask.height_px)
    )
    out = np.zeros(target_h * target_w, dtype=bool)
    out[valid] = mask.bits[sy[valid], sx[valid]]
    return BinaryMask(width_px=target_w, height_px=target_h, bits=out.reshape(target_h, target_w))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a AND b| / |a OR b|; 0 when the union is empty."""
    if (a.width_px, a.height_px) != (b.width_px, b.height_px):
        raise ValueError(
            f"mask dims differ: {(a.width_px, a.height_px)} vs {(b.width_px, b.height_px)}"
        )
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 0.0
    return int(np.logical_and(a.bits, b.bits).sum()) / union


def make_overlay(
    database_mask: BinaryMask,
    query_mask: BinaryMask,
    h: Homography,
) -> WarpedOverlay:
    """Warp the query mask into the database frame and score the overlap."""
    warped = warp_mask(query_mask, h, (database_mask.width_px, database_mask.height_px))
    return WarpedOverlay(
        database_mask=database_mask,
        warped_query_mask=warped,
        iou=mask_iou(database_mask, warped),
    )


def write_overlay(overlay: WarpedOverlay, path: str | Path) -> None:
    """Qualitative PPM: database-only, query-only, and intersection pixels in
    three fixed colors on black."""
    db = overlay.database_mask.bits
    q = overlay.warped_query_mask.bits
    h, w = db.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    rgb[db & ~q] = OVERLAY_DATABASE_ONLY
    rgb[q & ~db] = OVERLAY_QUERY_ONLY
    rgb[db & q] = OVERLAY_INTERSECTION
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
