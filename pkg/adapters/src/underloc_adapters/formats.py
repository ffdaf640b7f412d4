"""Writers for the engine's binary interchange formats.

Implemented against the wire contracts (all little-endian):
  descriptors:      magic "ULD1", u32 count, u32 dimension, then per record
                    u32 id length, UTF-8 id, dimension x float32
  keypoints:        magic "ULK1", u32 image count, u32 descriptor width,
                    u8 kind (0 float32, 1 binary-packed), then per image the
                    id, u32 point count, points as float32 (x, y) pairs, then
                    the descriptor payload
  correspondences:  magic "ULC1", u32 record count, then per record query id,
                    database id, u32 n, n x float32 (qx, qy, dx, dy)
  masks:            plain P5 PGM, maxval 255, pixel > 0 means true

Writes are atomic (temp file + rename) so a crashed export never leaves a
half-written artifact behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _id_bytes(image_id: str) -> bytes:
    raw = image_id.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_descriptor_file(path: str | Path, records: Sequence[tuple[str, np.ndarray]]) -> None:
    """records: (image_id, vector) pairs; all vectors must share dimension."""
    if not records:
        raise ValueError("descriptor export needs at least one record")
    dim = len(records[0][1])
    chunks = [b"ULD1", struct.pack("<II", len(records), dim)]
    for image_id, vector in records:
        vector = np.asarray(vector, dtype="<f4")
        if vector.shape != (dim,):
            raise ValueError(
                f"image '{image_id}': descriptor dimension {vector.shape} != ({dim},)"
            )
        chunks.append(_id_bytes(image_id))
        chunks.append(vector.tobytes())
    _atomic_write(Path(path), b"".join(chunks))


def write_keypoint_file(
    path: str | Path,
    records: Sequence[tuple[str, np.ndarray, np.ndarray]],
    *,
    width: int,
    binary: bool = False,
) -> None:
    """records: (image_id, points (n, 2), descriptors) triples.

    Float descriptors are (n, width) float32; binary ones are packed
    (n, ceil(width/8)) uint8 with width counting bits.
    """
    kind = 1 if binary else 0
    chunks = [b"ULK1", struct.pack("<IIB", len(records), width, kind)]
    for image_id, points, descriptors in records:
        points = np.asarray(points, dtype="<f4").reshape(-1, 2)
        expected_cols = (width + 7) // 8 if binary else width
        dtype = np.uint8 if binary else "<f4"
        descriptors = np.asarray(descriptors, dtype=dtype).reshape(len(points), -1 if len(points) else expected_cols)
        if len(points) and descriptors.shape[1] != expected_cols:
            raise ValueError(
                f"image '{image_id}': descriptor payload width {descriptors.shape[1]} "
                f"!= expected {expected_cols}"
            )
        chunks.append(_id_bytes(image_id))
        chunks.append(struct.pack("<I", len(points)))
        chunks.append(points.tobytes())
        chunks.append(descriptors.tobytes())
    _atomic_write(Path(path), b"".join(chunks))


def write_correspondence_file(
    path: str | Path,
    records: Sequence[tuple[str, str, np.ndarray, np.ndarray]],
) -> None:
    """records: (query_id, database_id, query points (n, 2), database points (n, 2))."""
    chunks = [b"ULC1", struct.pack("<I", len(records))]
    for query_id, database_id, points_q, points_d in records:
        points_q = np.asarray(points_q, dtype="<f4").reshape(-1, 2)
        points_d = np.asarray(points_d, dtype="<f4").reshape(-1, 2)
        if points_q.shape != points_d.shape:
            raise ValueError(f"pair ({query_id}, {database_id}): point counts differ")
        chunks.append(_id_bytes(query_id))
        chunks.append(_id_bytes(database_id))
        chunks.append(struct.pack("<I", len(points_q)))
        chunks.append(np.hstack([points_q, points_d]).astype("<f4").tobytes())
    _atomic_write(Path(path), b"".join(chunks))


def write_mask_pgm(path: str | Path, bits: np.ndarray) -> None:
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(Path(path), header + np.where(bits, 255, 0).astype(np.uint8).tobytes())


def resize_to_fit(width: int, height: int) -> tuple[int, int]:
    """The engine's resize rule: fit within 640x480, aspect preserved,
    round half up, clamp to >= 1, no upscaling."""
    scale = min(640 / width, 480 / height, 1.0)
    if scale >= 1.0:
        return width, height
    return (
        max(1, int(np.floor(width * scale + 0.5))),
        max(1, int(np.floor(height * scale + 0.5))),
    )
