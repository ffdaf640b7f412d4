"""Export jobs: run a model over an image directory and serialize the result.

Adapters are strict producers. They never compute metrics or geometry; they
read images, run the selected backend, and write the interchange files plus
a metadata sidecar recording what produced them. Unreadable images are
skipped and logged, never fatal.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, formats, models

IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class ExportJob:
    image_dir: Path
    model: str
    output: Path
    resize: bool = False
    pairs: Optional[list[tuple[str, str]]] = None
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.image_dir = Path(self.image_dir)
        self.output = Path(self.output)
        if not self.image_dir.is_dir():
            raise FileNotFoundError(f"image directory not found: {self.image_dir}")


def _log_skip(job: ExportJob, path: Path, reason: Exception) -> None:
    job.skipped.append(path.name)
    print(f"skipping unreadable image {path.name}: {reason}", file=sys.stderr)


def list_images(image_dir: Path) -> list[Path]:
    paths = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )
    if not paths:
        raise FileNotFoundError(f"no images in {image_dir}")
    return paths


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError("not a P5 PGM")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def _box_resize(pixels: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    h, w = pixels.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = pixels.astype(np.float64).cumsum(axis=0).cumsum(axis=1)
    row_edges = (np.arange(new_h + 1) * h) // new_h
    col_edges = (np.arange(new_w + 1) * w) // new_w
    r0, r1 = row_edges[:-1], row_edges[1:]
    c0, c1 = col_edges[:-1], col_edges[1:]
    sums = (
        integral[np.ix_(r1, c1)] - integral[np.ix_(r0, c1)]
        - integral[np.ix_(r1, c0)] + integral[np.ix_(r0, c0)]
    )
    return (sums / np.outer(r1 - r0, c1 - c0)).astype(np.float64)


def load_image(path: Path, resize: bool) -> np.ndarray:
    """Grayscale float32 in [0, 1], optionally fit within 640x480."""
    if path.suffix.lower() == ".pgm":
        pixels = _read_pgm(path).astype(np.float64)
    else:
        from PIL import Image

        with Image.open(path) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.float64)
    if resize:
        h, w = pixels.shape
        new_w, new_h = formats.resize_to_fit(w, h)
        if (new_w, new_h) != (w, h):
            pixels = _box_resize(pixels, new_w, new_h)
    return (pixels / 255.0).astype(np.float32)


def _write_sidecar(output: Path, job: ExportJob, kind: str, ids: list[str]) -> None:
    sidecar = {
        "kind": kind,
        "model": job.model,
        "adapter_version": __version__,
        "resize": job.resize,
        "image_count": len(ids),
        "image_ids": ids,
        "skipped": job.skipped,
    }
    Path(str(output) + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _readable_images(job: ExportJob) -> list[tuple[str, np.ndarray]]:
    out = []
    for path in list_images(job.image_dir):
        try:
            out.append((path.stem, load_image(path, job.resize)))
        except Exception as exc:  # unreadable image: skip, log, continue
            _log_skip(job, path, exc)
    return out


def export_global(job: ExportJob) -> Path:
    """One descriptor per readable image, ids are file stems."""
    model = models.load_model("global-descriptor", job.model)
    images = _readable_images(job)
    records = [(image_id, model.describe(image)) for image_id, image in images]
    if not records:
        raise FileNotFoundError(f"no readable images in {job.image_dir}")
    formats.write_descriptor_file(job.output, records)
    _write_sidecar(job.output, job, "global-descriptor", [r[0] for r in records])
    return job.output


def export_local(job: ExportJob) -> Path:
    """Keypoints and local descriptors per image; zero-keypoint records are valid."""
    model = models.load_model("local-features", job.model)
    images = _readable_images(job)
    if not images:
        raise FileNotFoundError(f"no readable images in {job.image_dir}")
    records = []
    for image_id, image in images:
        points, descriptors = model.detect(image)
        records.append((image_id, points, descriptors))
    formats.write_keypoint_file(job.output, records, width=model.WIDTH)
    _write_sidecar(job.output, job, "local-features", [r[0] for r in records])
    return job.output


def export_correspondences(job: ExportJob) -> Path:
    """Matched point pairs for the requested (query, database) id pairs;
    defaults to consecutive images in sorted order."""
    model = models.load_model("correspondences", job.model)
    images = dict(_readable_images(job))
    if not images:
        raise FileNotFoundError(f"no readable images in {job.image_dir}")
    pairs = job.pairs
    if pairs is None:
        ids = list(images)
        pairs = list(zip(ids, ids[1:]))
    records = []
    for query_id, database_id in pairs:
        for image_id in (query_id, database_id):
            if image_id not in images:
                raise KeyError(f"pair references unknown image id '{image_id}'")
        pts_q, pts_d = model.match(images[query_id], images[database_id])
        records.append((query_id, database_id, pts_q, pts_d))
    formats.write_correspondence_file(job.output, records)
    _write_sidecar(job.output, job, "correspondences",
                   [f"{q}__{d}" for q, d, _, _ in records])
    return job.output


def export_masks(job: ExportJob) -> Path:
    """One PGM per image with all detected instances merged (pixelwise OR)."""
    model = models.load_model("masks", job.model)
    images = _readable_images(job)
    if not images:
        raise FileNotFoundError(f"no readable images in {job.image_dir}")
    job.output.mkdir(parents=True, exist_ok=True)
    ids = []
    for image_id, image in images:
        merged = np.zeros(image.shape, dtype=bool)
        for instance in model.instances(image):
            merged |= instance
        formats.write_mask_pgm(job.output / f"{image_id}.pgm", merged)
        ids.append(image_id)
    _write_sidecar(job.output / "masks", job, "masks", ids)
    return job.output
