"""Synthetic seafloor surveys with exact geometric ground truth.

A survey renders views as similarity-transform crops (translation + optional
rotation and mild scale) of a procedural world texture, so the planar
homography assumption holds exactly and every pairwise homography is known in
closed form. Scattered ellipse "organisms" are baked into the texture and
double as ground-truth mask blobs. Revisit passes reuse the base trajectory
and apply photometric perturbations only, emulating appearance change
between survey years.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import matching
from .dataio import (
    LOCAL_XY,
    BinaryMask,
    DescriptorSet,
    GeoPosition,
    ImageRecord,
    KeypointSet,
    write_descriptors,
    write_keypoints,
    write_manifest,
    write_mask,
    write_pgm,
)
from .geometry import Homography

PATTERN_LAWNMOWER = "lawnmower"
PATTERN_TRANSECT = "transect"


@dataclass(frozen=True)
class Perturbation:
    """Photometric changes applied to revisit passes."""

    brightness_gain: float = 1.0
    additive_noise_sigma: float = 0.0
    haze_strength: float = 0.0

    @property
    def is_identity(self) -> bool:
        return (
            self.brightness_gain == 1.0
            and self.additive_noise_sigma == 0.0
            and self.haze_strength == 0.0
        )


@dataclass
class SyntheticView:
    record: ImageRecord
    pass_index: int
    center_world_px: tuple[float, float]
    yaw_rad: float
    scale: float
    world_to_view: np.ndarray  # 3x3
    image: np.ndarray  # (h, w) uint8
    mask: BinaryMask


@dataclass
class SyntheticSurvey:
    seed: int
    pattern: str
    meters_per_pixel: float
    view_width: int
    view_height: int
    localization_radius_m: float
    world: np.ndarray
    views: list[SyntheticView] = field(default_factory=list)

    def pass_views(self, pass_index: int) -> list[SyntheticView]:
        return [v for v in self.views if v.pass_index == pass_index]

    @property
    def n_passes(self) -> int:
        return max(v.pass_index for v in self.views) + 1

    def view_by_id(self, image_id: str) -> SyntheticView:
        for v in self.views:
            if v.record.image_id == image_id:
                return v
        raise KeyError(image_id)

    def true_homography(self, query_id: str, database_id: str) -> Homography:
        """Exact map from database-view pixels to query-view pixels."""
        q = self.view_by_id(query_id)
        d = self.view_by_id(database_id)
        return Homography(q.world_to_view @ np.linalg.inv(d.world_to_view))

    def overlap_fraction(self, id_a: str, id_b: str) -> float:
        """Footprint intersection area over view area (axis-aligned
        approximation; exact for unrotated unit-scale views)."""
        a, b = self.view_by_id(id_a), self.view_by_id(id_b)
        half_w_a = 0.5 * self.view_width * a.scale
        half_h_a = 0.5 * self.view_height * a.scale
        half_w_b = 0.5 * self.view_width * b.scale
        half_h_b = 0.5 * self.view_height * b.scale
        dx = abs(a.center_world_px[0] - b.center_world_px[0])
        dy = abs(a.center_world_px[1] - b.center_world_px[1])
        ix = max(0.0, half_w_a + half_w_b - dx)
        iy = max(0.0, half_h_a + half_h_b - dy)
        inter = min(ix, 2 * half_w_a) * min(iy, 2 * half_h_a)
        return inter / (4 * half_w_a * half_h_a)


def _value_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1]."""
    out = np.zeros((height, width))
    amplitude = 1.0
    total = 0.0
    for cell in (64, 32, 16, 8, 4):
        grid = rng.random((height // cell + 2, width // cell + 2))
        rows = np.arange(height) / cell
        cols = np.arange(width) / cell
        coords = np.meshgrid(rows, cols, indexing="ij")
        out += amplitude * ndimage.map_coordinates(grid, coords, order=1, mode="nearest")
        total += amplitude
        amplitude *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / max(hi - lo, 1e-12)


def _world_to_view_matrix(
    center: tuple[float, float], yaw: float, scale: float, view_w: int, view_h: int
) -> np.ndarray:
    c, s = math.cos(-yaw), math.sin(-yaw)
    a = np.array([[c, -s], [s, c]]) / scale
    t = np.array([view_w / 2.0, view_h / 2.0]) - a @ np.asarray(center)
    m = np.eye(3)
    m[:2, :2] = a
    m[:2, 2] = t
    return m


def _trajectory(
    pattern: str, n_views: int, step_x: int, step_y: int
) -> list[tuple[int, int]]:
    """Serpentine grid (lawnmower) or a single line (transect), in world px
    offsets from the trajectory origin."""
    if pattern == PATTERN_TRANSECT:
        return [(i * step_x, 0) for i in range(n_views)]
    if pattern != PATTERN_LAWNMOWER:
        raise ValueError(f"unknown pattern '{pattern}'")
    n_cols = math.ceil(math.sqrt(n_views))
    centers = []
    row = 0
    while len(centers) < n_views:
        cols = range(n_cols) if row % 2 == 0 else range(n_cols - 1, -1, -1)
        for col in cols:
            if len(centers) == n_views:
                break
            centers.append((col * step_x, row * step_y))
        row += 1
    return centers


def generate_survey(
    seed: int,
    pattern: str = PATTERN_LAWNMOWER,
    n_views: int = 20,
    overlap_fraction: float = 0.5,
    perturbation: Perturbation = Perturbation(),
    *,
    n_passes: int = 2,
    view_size: tuple[int, int] = (160, 120),
    meters_per_pixel: float = 0.02,
    yaw_jitter_deg: float = 0.0,
    scale_jitter: float = 0.0,
    n_organisms: Optional[int] = None,
    localization_radius_m: Optional[float] = None,
) -> SyntheticSurvey:
    """Deterministic synthetic survey; same seed, same bytes.

    Pass 0 is the base trajectory; every later pass revisits the exact same
    poses with the photometric perturbation applied, so cross-pass twins are
    pixel-identical when the perturbation is zero. Between-view spacing is
    view_size * (1 - overlap_fraction), rounded to whole pixels so that
    axis-aligned true homographies are integer translations.
    """
    if n_views < 2:
        raise ValueError(f"n_views must be >= 2, got {n_views}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    if n_passes < 1:
        raise ValueError(f"n_passes must be >= 1, got {n_passes}")

    view_w, view_h = view_size
    step_x = max(1, round(view_w * (1.0 - overlap_fraction)))
    step_y = max(1, round(view_h * (1.0 - overlap_fraction)))
    offsets = _trajectory(pattern, n_views, step_x, step_y)

    # Margin covers the rotated, scaled view footprint.
    max_scale = 1.0 + abs(scale_jitter)
    margin = math.ceil(0.5 * math.hypot(view_w, view_h) * max_scale) + 4
    extent_x = max(dx for dx, _ in offsets)
    extent_y = max(dy for _, dy in offsets)
    world_w = extent_x + 2 * margin + 1
    world_h = extent_y + 2 * margin + 1

    rng = np.random.default_rng(seed)
    world = 0.2 + 0.6 * _value_noise(rng, world_h, world_w)

    # Gravel speckle: guarantees corner-rich texture in every view.
    n_dots = max(64, world_w * world_h // 300)
    dot_x = rng.uniform(1, world_w - 1, n_dots)
    dot_y = rng.uniform(1, world_h - 1, n_dots)
    dot_r = rng.uniform(1.0, 2.5, n_dots)
    dot_delta = rng.choice([-1.0, 1.0], n_dots) * rng.uniform(0.15, 0.3, n_dots)
    for cx, cy, r, delta in zip(dot_x, dot_y, dot_r, dot_delta):
        x0, x1 = max(0, int(cx - r - 1)), min(world_w, int(cx + r + 2))
        y0, y1 = max(0, int(cy - r - 1)), min(world_h, int(cy + r + 2))
        py, px = np.mgrid[y0:y1, x0:x1]
        inside = (px + 0.5 - cx) ** 2 + (py + 0.5 - cy) ** 2 <= r * r
        world[y0:y1, x0:x1][inside] += delta

    if n_organisms is None:
        n_organisms = max(12, 2 * n_views)
    organisms = []
    for _ in range(n_organisms):
        cx = rng.uniform(margin * 0.5, world_w - margin * 0.5)
        cy = rng.uniform(margin * 0.5, world_h - margin * 0.5)
        a = rng.uniform(8.0, 18.0)
        b = rng.uniform(8.0, 18.0)
        phi = rng.uniform(0.0, math.pi)
        delta = rng.choice([-1.0, 1.0]) * rng.uniform(0.18, 0.32)
        organisms.append((cx, cy, a, b, phi, delta))
    yy, xx = np.mgrid[0:world_h, 0:world_w]
    world_centers_x = xx + 0.5
    world_centers_y = yy + 0.5
    for cx, cy, a, b, phi, delta in organisms:
        dx = world_centers_x - cx
        dy = world_centers_y - cy
        u = (dx * math.cos(phi) + dy * math.sin(phi)) / a
        v = (-dx * math.sin(phi) + dy * math.cos(phi)) / b
        world += delta * (u * u + v * v <= 1.0)
    world = np.clip(world, 0.0, 1.0)

    def inside_any_organism(px: np.ndarray, py: np.ndarray) -> np.ndarray:
        hit = np.zeros(px.shape, dtype=bool)
        for cx, cy, a, b, phi, _ in organisms:
            dx = px - cx
            dy = py - cy
            u = (dx * math.cos(phi) + dy * math.sin(phi)) / a
            v = (-dx * math.sin(phi) + dy * math.cos(phi)) / b
            hit |= u * u + v * v <= 1.0
        return hit

    # Per-view geometry is drawn once and shared by every pass.
    yaws = np.deg2rad(rng.uniform(-yaw_jitter_deg, yaw_jitter_deg, size=n_views))
    scales = 1.0 + rng.uniform(-scale_jitter, scale_jitter, size=n_views)
    if yaw_jitter_deg == 0.0:
        yaws = np.zeros(n_views)
    if scale_jitter == 0.0:
        scales = np.ones(n_views)

    spacing_m = min(step_x, step_y) * meters_per_pixel
    if localization_radius_m is None:
        localization_radius_m = 0.45 * spacing_m

    survey = SyntheticSurvey(
        seed=seed,
        pattern=pattern,
        meters_per_pixel=meters_per_pixel,
        view_width=view_w,
        view_height=view_h,
        localization_radius_m=localization_radius_m,
        world=world,
    )

    vy, vx = np.mgrid[0:view_h, 0:view_w]
    view_centers = np.column_stack([vx.ravel() + 0.5, vy.ravel() + 0.5])
    view_centers_h = np.hstack([view_centers, np.ones((view_centers.shape[0], 1))])

    for pass_index in range(n_passes):
        perturb = pass_index > 0 and not perturbation.is_identity
        for i, (ox, oy) in enumerate(offsets):
            center = (margin + ox + 0.5, margin + oy + 0.5)
            w2v = _world_to_view_matrix(center, float(yaws[i]), float(scales[i]), view_w, view_h)
            v2w = np.linalg.inv(w2v)
            world_pts = view_centers_h @ v2w.T
            wx = world_pts[:, 0] / world_pts[:, 2]
            wy = world_pts[:, 1] / world_pts[:, 2]
            img = ndimage.map_coordinates(
                world, [wy - 0.5, wx - 0.5], order=1, mode="nearest"
            ).reshape(view_h, view_w)
            if perturb:
                img = img * perturbation.brightness_gain
                if perturbation.haze_strength > 0:
                    img = img * (1.0 - perturbation.haze_strength) + 0.6 * perturbation.haze_strength
                if perturbation.additive_noise_sigma > 0:
                    img = img + rng.normal(0.0, perturbation.additive_noise_sigma, img.shape)
            img_u8 = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
            mask_bits = inside_any_organism(wx, wy).reshape(view_h, view_w)
            image_id = f"p{pass_index}_{i:04d}"
            record = ImageRecord(
                image_id=image_id,
                sequence_id=f"pass{pass_index}",
                timestamp=pass_index * 1.0e4 + 2.0 * i,
                position=GeoPosition(
                    x=center[0] * meters_per_pixel, y=center[1] * meters_per_pixel
                ),
                width_px=view_w,
                height_px=view_h,
                mask_path=f"masks/{image_id}.pgm",
            )
            survey.views.append(
                SyntheticView(
                    record=record,
                    pass_index=pass_index,
                    center_world_px=center,
                    yaw_rad=float(yaws[i]),
                    scale=float(scales[i]),
                    world_to_view=w2v,
                    image=img_u8,
                    mask=BinaryMask(width_px=view_w, height_px=view_h, bits=mask_bits),
                )
            )
    return survey


def write_dataset(
    survey: SyntheticSurvey,
    out_dir: str | Path,
    *,
    max_keypoints: int = matching.MAX_KEYPOINTS,
) -> dict[int, Path]:
    """Write one sub-dataset per pass in the interchange formats, plus a
    sidecar with the exact cross-pass homographies and overlap fractions.

    Pass 0 takes the database role, later passes the query role. Built-in
    global descriptors and keypoints are extracted from the written pixels so
    each sub-dataset is immediately runnable. Returns manifest path per pass.
    """
    out_dir = Path(out_dir)
    manifests: dict[int, Path] = {}
    for pass_index in range(survey.n_passes):
        views = survey.pass_views(pass_index)
        pass_dir = out_dir / f"pass{pass_index}"
        (pass_dir / "images").mkdir(parents=True, exist_ok=True)
        (pass_dir / "masks").mkdir(parents=True, exist_ok=True)
        ids = []
        descriptor_rows = []
        keypoint_sets: list[KeypointSet] = []
        for view in views:
            image_id = view.record.image_id
            ids.append(image_id)
            write_pgm(view.image, pass_dir / "images" / f"{image_id}.pgm")
            write_mask(view.mask, pass_dir / "masks" / f"{image_id}.pgm")
            descriptor_rows.append(matching.extract_global(view.image))
            keypoint_sets.append(
                matching.extract_features(view.image, image_id, max_keypoints=max_keypoints)
            )
        write_descriptors(
            pass_dir / "descriptors.uld1",
            DescriptorSet(image_ids=ids, values=np.vstack(descriptor_rows)),
        )
        write_keypoints(pass_dir / "keypoints.ulk1", keypoint_sets)
        manifest_path = pass_dir / "manifest.jsonl"
        write_manifest(
            manifest_path,
            name=f"synth-{survey.pattern}-seed{survey.seed}-pass{pass_index}",
            role="database" if pass_index == 0 else "query",
            localization_radius_m=survey.localization_radius_m,
            convention=LOCAL_XY,
            records=[v.record for v in views],
            descriptor_file="descriptors.uld1",
            keypoint_file="keypoints.ulk1",
        )
        manifests[pass_index] = manifest_path

    pairs = []
    base = survey.pass_views(0)
    for pass_index in range(1, survey.n_passes):
        for q in survey.pass_views(pass_index):
            for d in base:
                overlap = survey.overlap_fraction(q.record.image_id, d.record.image_id)
                if overlap <= 0.0:
                    continue
                h = survey.true_homography(q.record.image_id, d.record.image_id)
                pairs.append(
                    {
                        "query_id": q.record.image_id,
                        "database_id": d.record.image_id,
                        "overlap": overlap,
                        "h": [float(v) for v in h.h.ravel()],
                    }
                )
    (out_dir / "true_homographies.json").write_text(
        json.dumps(pairs, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return manifests
