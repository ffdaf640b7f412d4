"""Homography estimation and geometric filtering for best-match pairs.

The homography maps database coordinates to query coordinates
(p_q ~ H * p_d with perspective division). Estimation is normalized DLT
inside RANSAC with a final refit on the consensus set; the registration
error is the mean of the forward and inverse RMSE transfer errors over all
correspondences, and pairs whose error exceeds the pixel threshold are
rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .matching import CorrespondenceSet

DEFAULT_CHI_PX = 10.0
RANSAC_INLIER_THRESHOLD_PX = 3.0
RANSAC_CONFIDENCE = 0.995
RANSAC_MAX_ITERATIONS = 2000
DEFAULT_SEED = 42

STATUS_ACCEPTED = "accepted"
STATUS_REJECTED_ERROR = "rejected_error_above_threshold"
STATUS_REJECTED_INSUFFICIENT = "rejected_insufficient_matches"
STATUS_REJECTED_DEGENERATE = "rejected_degenerate"


class EstimationError(Exception):
    """Base class for homography estimation failures."""


class InsufficientMatchesError(EstimationError):
    """Fewer than 4 correspondences."""


class DegenerateGeometryError(EstimationError):
    """Every minimal sample was collinear or rank-deficient."""


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 projective map, normalized so h[2][2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=np.float64)
        if h.shape != (3, 3):
            raise ValueError(f"expected 3x3 matrix, got {h.shape}")
        if abs(h[2, 2]) < 1e-12:
            raise ValueError("h[2][2] too small to normalize")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-12:
            raise ValueError("homography is singular")
        object.__setattr__(self, "h", h)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 2) points with perspective division; rows with |w| < 1e-12
        come back as +/-inf."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        hom = np.hstack([pts, np.ones((pts.shape[0], 1))])
        mapped = hom @ self.h.T
        w = mapped[:, 2]
        safe = np.abs(w) >= 1e-12
        out = np.full((pts.shape[0], 2), np.inf)
        out[safe] = mapped[safe, :2] / w[safe, np.newaxis]
        return out

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley isotropic normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / max(dist, 1e-12)
    t = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    normalized = pts * scale - scale * centroid
    return normalized, t


def _dlt(src: np.ndarray, dst: np.ndarray) -> Optional[np.ndarray]:
    """Least-squares homography with dst ~ H src, Hartley-normalized both sides.

    Returns None for rank-deficient (collinear) configurations.
    """
    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)
    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = src_n[:, 0], src_n[:, 1]
    u, v = dst_n[:, 0], dst_n[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, s, vt = np.linalg.svd(a)
    # A unique solution needs rank 8; s[7] ~ 0 means a collinear/degenerate
    # configuration (s[8], when present, is the residual of the fit itself).
    if s[7] < 1e-10 * max(s[0], 1.0):
        return None
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    if abs(h[2, 2]) < 1e-12 or abs(np.linalg.det(h / h[2, 2])) <= 1e-12:
        return None
    return h / h[2, 2]


def _symmetric_transfer_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-pair sqrt of summed forward+backward squared transfer distances."""
    fwd = Homography(h).apply(src) - dst
    bwd = Homography(h).inverse().apply(dst) - src
    return np.sqrt((fwd**2).sum(axis=1) + (bwd**2).sum(axis=1))


@dataclass(frozen=True)
class HomographyEstimate:
    homography: Homography
    consensus: np.ndarray  # bool mask over input pairs
    iterations: int


def estimate_homography(
    c: CorrespondenceSet,
    *,
    seed: int = DEFAULT_SEED,
    inlier_threshold: float = RANSAC_INLIER_THRESHOLD_PX,
    confidence: float = RANSAC_CONFIDENCE,
    max_iterations: int = RANSAC_MAX_ITERATIONS,
) -> HomographyEstimate:
    """RANSAC + normalized DLT, refit on the consensus set.

    Maps database coordinates onto query coordinates. Raises
    InsufficientMatchesError below 4 pairs and DegenerateGeometryError when
    no minimal sample spans a valid homography.
    """
    n = len(c)
    if n < 4:
        raise InsufficientMatchesError(f"need >= 4 correspondences, got {n}")
    src = c.points_database.astype(np.float64)
    dst = c.points_query.astype(np.float64)

    rng = np.random.default_rng(seed)
    best_h: Optional[np.ndarray] = None
    best_inliers: Optional[np.ndarray] = None
    best_count = 0
    needed = max_iterations
    it = 0
    while it < min(max_iterations, needed):
        it += 1
        sample = rng.choice(n, size=4, replace=False) if n > 4 else np.arange(4)
        h = _dlt(src[sample], dst[sample])
        if h is None:
            if n == 4:
                break  # only one minimal sample exists
            continue
        err = _symmetric_transfer_error(h, src, dst)
        inliers = err <= inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_h, best_inliers, best_count = h, inliers, count
            w = count / n
            if w >= 1.0:
                break
            denom = math.log(max(1.0 - w**4, 1e-300))
            needed = min(max_iterations, math.ceil(math.log(1.0 - confidence) / denom))
    if best_h is None:
        raise DegenerateGeometryError("all minimal samples were collinear or rank-deficient")

    if best_count >= 4:
        refit = _dlt(src[best_inliers], dst[best_inliers])
        if refit is not None:
            err = _symmetric_transfer_error(refit, src, dst)
            refit_inliers = err <= inlier_threshold
            if int(refit_inliers.sum()) >= best_count:
                best_h, best_inliers = refit, refit_inliers
    return HomographyEstimate(
        homography=Homography(best_h), consensus=best_inliers, iterations=it
    )


def reprojection_error(
    h: Homography,
    c: CorrespondenceSet,
    *,
    subset: Optional[np.ndarray] = None,
) -> float:
    """Mean of forward and inverse RMSE transfer errors over the pairs.

    Forward: ||p_q - pi(H p_d)||; inverse: ||pi(H^-1 p_q) - p_d||. Computed
    over ALL pairs unless `subset` restricts them (inlier-only mode). A pair
    whose homogeneous w collapses below 1e-12 makes the result +inf.
    """
    p_q = c.points_query.astype(np.float64)
    p_d = c.points_database.astype(np.float64)
    if subset is not None:
        p_q, p_d = p_q[subset], p_d[subset]
    if p_q.shape[0] == 0:
        raise ValueError("need at least one correspondence")
    fwd = h.apply(p_d) - p_q
    bwd = h.inverse().apply(p_q) - p_d
    if not np.all(np.isfinite(fwd)) or not np.all(np.isfinite(bwd)):
        return float("inf")
    rmse_fwd = math.sqrt(float((fwd**2).sum(axis=1).mean()))
    rmse_bwd = math.sqrt(float((bwd**2).sum(axis=1).mean()))
    return 0.5 * (rmse_fwd + rmse_bwd)


@dataclass
class RegistrationResult:
    """Outcome of registering one query/database pair."""

    query_image_id: str
    database_image_id: str
    homography: Optional[Homography]
    reprojection_error_px: Optional[float]
    inlier_count: int
    status: str

    def to_json_obj(self) -> dict:
        h = None if self.homography is None else [float(v) for v in self.homography.h.ravel()]
        err = self.reprojection_error_px
        if err is not None and not math.isfinite(err):
            err = None if math.isnan(err) else "inf"
        return {
            "query_image_id": self.query_image_id,
            "database_image_id": self.database_image_id,
            "homography": h,
            "reprojection_error_px": err,
            "inlier_count": self.inlier_count,
            "status": self.status,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "RegistrationResult":
        h = obj.get("homography")
        err = obj.get("reprojection_error_px")
        if err == "inf":
            err = float("inf")
        return cls(
            query_image_id=obj["query_image_id"],
            database_image_id=obj["database_image_id"],
            homography=None if h is None else Homography(np.array(h).reshape(3, 3)),
            reprojection_error_px=err,
            inlier_count=int(obj["inlier_count"]),
            status=obj["status"],
        )


def filter_by_threshold(
    results: Sequence[RegistrationResult], chi: float = DEFAULT_CHI_PX
) -> list[RegistrationResult]:
    """Accept pairs with reprojection error <= chi (inclusive); update statuses.

    Results already rejected upstream (insufficient matches, degenerate) are
    left untouched. Returns the accepted subset.
    """
    if chi <= 0:
        raise ValueError(f"chi must be > 0, got {chi}")
    accepted = []
    for res in results:
        if res.status in (STATUS_REJECTED_INSUFFICIENT, STATUS_REJECTED_DEGENERATE):
            continue
        err = res.reprojection_error_px
        if err is not None and err <= chi and res.homography is not None:
            res.status = STATUS_ACCEPTED
            accepted.append(res)
        else:
            res.status = STATUS_REJECTED_ERROR
    return accepted


def derive_pair_seed(seed: int, query_image_id: str, database_image_id: str) -> int:
    """Stable per-pair RANSAC seed so parallel execution order never matters."""
    digest = hashlib.blake2b(
        f"{seed}\x1f{query_image_id}\x1f{database_image_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def write_registrations(path: str | Path, results: Sequence[RegistrationResult]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for res in results:
            fh.write(json.dumps(res.to_json_obj(), sort_keys=True) + "\n")


def load_registrations(path: str | Path) -> list[RegistrationResult]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(RegistrationResult.from_json_obj(json.loads(line)))
    return out
