"""Local refinement stage: keypoint correspondences for candidate pairs and
inlier-count reranking.

Includes a built-in classical feature stack (Harris corners with normalized
patch descriptors, plus a pooled global descriptor) so the engine runs
end-to-end without any external model. Externally produced correspondences
can be ingested from "ULC1" files instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .dataio import (
    DESCRIPTOR_KIND_BINARY,
    DESCRIPTOR_KIND_FLOAT,
    KeypointSet,
    ParseError,
)
from .retrieval import CandidateSet

CORRESPONDENCE_MAGIC = b"ULC1"

# Built-in extractor defaults; all overridable per call.
HARRIS_K = 0.04
HARRIS_WINDOW = 3
NMS_RADIUS = 4
MAX_KEYPOINTS = 512
PATCH_SIZE = 16
BORDER_MARGIN = 8
GLOBAL_GRID = 16
RATIO_THRESHOLD = 0.8

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1)


@dataclass
class CorrespondenceSet:
    """One-to-one keypoint pairs between a query and a database image.

    Coordinates are kept in float64; the "ULC1" wire format stores float32.
    """

    query_image_id: str
    database_image_id: str
    points_query: np.ndarray  # (n, 2) float64
    points_database: np.ndarray  # (n, 2) float64

    def __post_init__(self):
        self.points_query = np.ascontiguousarray(self.points_query, dtype=np.float64).reshape(-1, 2)
        self.points_database = np.ascontiguousarray(
            self.points_database, dtype=np.float64
        ).reshape(-1, 2)
        if self.points_query.shape != self.points_database.shape:
            raise ValueError("query/database point counts differ")

    def __len__(self) -> int:
        return self.points_query.shape[0]


@dataclass(frozen=True)
class RerankedMatch:
    """Best candidate for one query after inlier-count reranking."""

    query_index: int
    database_index: int
    inlier_count: int
    global_distance: float


def _to_float_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a nonempty 2-D grayscale raster")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def extract_features(
    image: np.ndarray,
    image_id: str = "",
    *,
    max_keypoints: int = MAX_KEYPOINTS,
    k: float = HARRIS_K,
    nms_radius: int = NMS_RADIUS,
    border: int = BORDER_MARGIN,
    patch_size: int = PATCH_SIZE,
) -> KeypointSet:
    """Harris corners with zero-mean, unit-norm patch descriptors.

    Corner response uses Sobel gradients and a 3x3 structure-tensor window;
    non-max suppression keeps local maxima within `nms_radius` (Chebyshev),
    responses below 1% of the strongest are dropped, and the top
    `max_keypoints` by response survive. Points closer than `border` px to
    the image edge are discarded so the patch always fits. Keypoint
    coordinates are pixel centers (index + 0.5).
    """
    img = _to_float_image(image)
    h, w = img.shape
    half = patch_size // 2

    ix = ndimage.sobel(img, axis=1, mode="reflect")
    iy = ndimage.sobel(img, axis=0, mode="reflect")
    sxx = ndimage.uniform_filter(ix * ix, size=HARRIS_WINDOW, mode="reflect")
    syy = ndimage.uniform_filter(iy * iy, size=HARRIS_WINDOW, mode="reflect")
    sxy = ndimage.uniform_filter(ix * iy, size=HARRIS_WINDOW, mode="reflect")
    response = (sxx * syy - sxy * sxy) - k * (sxx + syy) ** 2

    local_max = ndimage.maximum_filter(response, size=2 * nms_radius + 1, mode="constant")
    peak = response.max(initial=0.0)
    threshold = max(0.01 * peak, 1e-12)
    rows, cols = np.nonzero((response >= local_max) & (response > threshold))
    inside = (
        (rows >= border)
        & (rows <= h - border)
        & (cols >= border)
        & (cols <= w - border)
        & (rows + half <= h)
        & (cols + half <= w)
        & (rows - half >= 0)
        & (cols - half >= 0)
    )
    rows, cols = rows[inside], cols[inside]
    if rows.size == 0:
        return KeypointSet(
            image_id=image_id,
            points=np.empty((0, 2), dtype=np.float32),
            descriptors=np.empty((0, patch_size * patch_size), dtype=np.float32),
            kind=DESCRIPTOR_KIND_FLOAT,
            width=patch_size * patch_size,
        )

    order = np.lexsort((cols, rows, -response[rows, cols]))[:max_keypoints]
    rows, cols = rows[order], cols[order]

    points = []
    descriptors = []
    for r, c in zip(rows, cols):
        patch = img[r - half : r + half, c - half : c + half].ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-12:
            continue
        points.append((c + 0.5, r + 0.5))
        descriptors.append(patch / norm)
    return KeypointSet(
        image_id=image_id,
        points=np.array(points, dtype=np.float32).reshape(-1, 2),
        descriptors=np.array(descriptors, dtype=np.float32).reshape(-1, patch_size * patch_size),
        kind=DESCRIPTOR_KIND_FLOAT,
        width=patch_size * patch_size,
    )


def extract_global(image: np.ndarray, *, grid: int = GLOBAL_GRID) -> np.ndarray:
    """Pooled global descriptor: box-average to grid x grid, flatten,
    zero-mean, L2-normalize. An all-constant image maps to the zero vector;
    the result is invariant to positive affine intensity transforms."""
    img = _to_float_image(image)
    h, w = img.shape
    row_edges = (np.arange(grid + 1) * h) // grid
    col_edges = (np.arange(grid + 1) * w) // grid
    # Integral image makes the box means exact for any input size.
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = img.cumsum(axis=0).cumsum(axis=1)
    r0, r1 = row_edges[:-1], row_edges[1:]
    c0, c1 = col_edges[:-1], col_edges[1:]
    sums = (
        integral[np.ix_(r1, c1)]
        - integral[np.ix_(r0, c1)]
        - integral[np.ix_(r1, c0)]
        + integral[np.ix_(r0, c0)]
    )
    areas = np.outer(r1 - r0, c1 - c0).astype(np.float64)
    cells = (sums / areas).ravel()
    cells = cells - cells.mean()
    norm = np.linalg.norm(cells)
    if norm < 1e-12:
        return np.zeros(grid * grid, dtype=np.float32)
    return (cells / norm).astype(np.float32)


def _descriptor_distances(a: KeypointSet, b: KeypointSet) -> np.ndarray:
    if a.kind != b.kind or a.width != b.width:
        raise ValueError(
            f"descriptor kind/width mismatch: {a.kind}/{a.width} vs {b.kind}/{b.width}"
        )
    if a.kind == DESCRIPTOR_KIND_FLOAT:
        da = a.descriptors.astype(np.float64)
        db = b.descriptors.astype(np.float64)
        sq = (
            np.sum(da * da, axis=1)[:, None]
            + np.sum(db * db, axis=1)[None, :]
            - 2.0 * (da @ db.T)
        )
        return np.sqrt(np.maximum(sq, 0.0))
    xor = a.descriptors[:, None, :] ^ b.descriptors[None, :, :]
    return _POPCOUNT[xor].sum(axis=2).astype(np.float64)


def _ratio_pass(dist_row: np.ndarray, ratio: float) -> tuple[int, bool]:
    """Nearest index plus whether the Lowe ratio test accepts it."""
    nn = int(np.argmin(dist_row))
    if dist_row.shape[0] == 1:
        return nn, True
    d1 = dist_row[nn]
    rest = np.delete(dist_row, nn)
    d2 = rest.min()
    return nn, bool(d1 < ratio * d2)


def match_keypoints(
    query: KeypointSet,
    database: KeypointSet,
    *,
    ratio: float = RATIO_THRESHOLD,
) -> CorrespondenceSet:
    """Mutual-nearest-neighbor matching with a Lowe ratio test on both sides.

    Distance is Euclidean for float descriptors, Hamming for binary-packed.
    Matched pairs are the built-in matcher's inliers.
    """
    empty = CorrespondenceSet(
        query_image_id=query.image_id,
        database_image_id=database.image_id,
        points_query=np.empty((0, 2), dtype=np.float32),
        points_database=np.empty((0, 2), dtype=np.float32),
    )
    if len(query) == 0 or len(database) == 0:
        if query.kind != database.kind or (len(query) and len(database) and query.width != database.width):
            raise ValueError("descriptor kind mismatch")
        return empty
    dist = _descriptor_distances(query, database)

    nn_q = dist.argmin(axis=1)
    nn_d = dist.argmin(axis=0)
    pairs_q, pairs_d = [], []
    for i in range(len(query)):
        j = int(nn_q[i])
        if int(nn_d[j]) != i:
            continue
        _, ok_q = _ratio_pass(dist[i, :], ratio)
        _, ok_d = _ratio_pass(dist[:, j], ratio)
        if ok_q and ok_d:
            pairs_q.append(query.points[i])
            pairs_d.append(database.points[j])
    if not pairs_q:
        return empty
    return CorrespondenceSet(
        query_image_id=query.image_id,
        database_image_id=database.image_id,
        points_query=np.array(pairs_q, dtype=np.float32),
        points_database=np.array(pairs_d, dtype=np.float32),
    )


def rerank(
    candidates: CandidateSet,
    correspondences: Sequence[CorrespondenceSet],
) -> RerankedMatch:
    """Pick the candidate with the most correspondence inliers.

    Ties break by smaller global distance, then smaller database index. An
    all-zero query still returns a best match so downstream filtering can
    reject it.
    """
    if len(correspondences) != len(candidates):
        raise ValueError(
            f"{len(candidates)} candidates but {len(correspondences)} correspondence sets"
        )
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    best: Optional[tuple] = None
    for (db_index, distance), corr in zip(candidates.entries, correspondences):
        key = (-len(corr), distance, db_index)
        if best is None or key < best[0]:
            best = (key, db_index, len(corr), distance)
    return RerankedMatch(
        query_index=candidates.query_index,
        database_index=best[1],
        inlier_count=best[2],
        global_distance=best[3],
    )


def matcher_from_table(
    table: dict[tuple[str, str], CorrespondenceSet],
):
    """Matcher backed by precomputed correspondences (e.g. a "ULC1" export).

    Pairs absent from the table match empty, so external producers only need
    to cover the pairs they actually matched.
    """

    def matcher(query: KeypointSet, database: KeypointSet) -> CorrespondenceSet:
        key = (query.image_id, database.image_id)
        if key in table:
            return table[key]
        return CorrespondenceSet(
            query_image_id=query.image_id,
            database_image_id=database.image_id,
            points_query=np.empty((0, 2)),
            points_database=np.empty((0, 2)),
        )

    return matcher


# ---------------------------------------------------------------------------
# Correspondence file ("ULC1")
# ---------------------------------------------------------------------------


def write_correspondences(path: str | Path, sets: Sequence[CorrespondenceSet]) -> None:
    with Path(path).open("wb") as fh:
        fh.write(CORRESPONDENCE_MAGIC)
        fh.write(struct.pack("<I", len(sets)))
        for cs in sets:
            for image_id in (cs.query_image_id, cs.database_image_id):
                raw = image_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(struct.pack("<I", len(cs)))
            interleaved = np.hstack([cs.points_query, cs.points_database]).astype("<f4")
            fh.write(interleaved.tobytes())


def load_correspondences(path: str | Path) -> dict[tuple[str, str], CorrespondenceSet]:
    """Load "ULC1" records keyed by (query_image_id, database_image_id)."""
    path = Path(path)
    out: dict[tuple[str, str], CorrespondenceSet] = {}
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != CORRESPONDENCE_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {CORRESPONDENCE_MAGIC!r}")

        def read_exact(n: int, what: str) -> bytes:
            buf = fh.read(n)
            if len(buf) != n:
                raise ParseError(f"{path}: truncated while reading {what}")
            return buf

        (count,) = struct.unpack("<I", read_exact(4, "record count"))
        for _ in range(count):
            ids = []
            for _ in range(2):
                (length,) = struct.unpack("<I", read_exact(4, "id length"))
                ids.append(read_exact(length, "id").decode("utf-8"))
            (n,) = struct.unpack("<I", read_exact(4, "pair count"))
            flat = np.frombuffer(read_exact(16 * n, "pairs"), dtype="<f4").reshape(n, 4)
            key = (ids[0], ids[1])
            if key in out:
                raise ParseError(f"{path}: duplicate record for pair {key}")
            out[key] = CorrespondenceSet(
                query_image_id=ids[0],
                database_image_id=ids[1],
                points_query=flat[:, :2].copy(),
                points_database=flat[:, 2:].copy(),
            )
    return out
