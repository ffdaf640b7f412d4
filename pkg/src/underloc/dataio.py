"""Dataset model and interchange file formats.

Datasets are described by a JSON-Lines manifest (header line + one line per
image) and reference binary sidecar files for global descriptors ("ULD1"),
keypoints ("ULK1"), and per-image binary masks (plain P5 PGM). All binary
formats are little-endian and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

GEODETIC = "geodetic"
LOCAL_XY = "local_xy"

DESCRIPTOR_MAGIC = b"ULD1"
KEYPOINT_MAGIC = b"ULK1"

DESCRIPTOR_KIND_FLOAT = "float32"
DESCRIPTOR_KIND_BINARY = "binary"

# Every image is downscaled to fit this box before feature extraction.
RESIZE_BOX = (640, 480)


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class ParseError(DatasetError):
    """Malformed file: bad header, bad field, truncated payload."""


class ConsistencyError(DatasetError):
    """Well-formed file that violates a dataset invariant (dangling id,
    dimension mismatch, duplicate id, mixed coordinate conventions)."""


@dataclass(frozen=True)
class GeoPosition:
    """Either a geodetic fix (latitude/longitude[/depth]) or a point in a
    declared local metric frame (x/y). Exactly one of the two."""

    latitude: Optional[float] = None
    longitude: Optional[float] = None
    depth: Optional[float] = None
    x: Optional[float] = None
    y: Optional[float] = None

    def __post_init__(self):
        geodetic = self.latitude is not None or self.longitude is not None
        local = self.x is not None or self.y is not None
        if geodetic == local:
            raise ConsistencyError(
                "position must be geodetic (lat/lon) or local (x/y), not both or neither"
            )
        if geodetic:
            if self.latitude is None or self.longitude is None:
                raise ParseError("geodetic position needs both latitude and longitude")
            if not -90.0 <= self.latitude <= 90.0:
                raise ConsistencyError(f"latitude {self.latitude} outside [-90, 90]")
            if not -180.0 <= self.longitude <= 180.0:
                raise ConsistencyError(f"longitude {self.longitude} outside [-180, 180]")
            if self.depth is not None and self.depth < 0:
                raise ConsistencyError(f"depth {self.depth} must be >= 0")
        else:
            if self.x is None or self.y is None:
                raise ParseError("local position needs both x and y")

    @property
    def convention(self) -> str:
        return GEODETIC if self.latitude is not None else LOCAL_XY


@dataclass(frozen=True)
class ImageRecord:
    """One survey image: identity, capture time, geoposition, dimensions."""

    image_id: str
    sequence_id: str
    timestamp: float
    position: GeoPosition
    width_px: int
    height_px: int
    mask_path: Optional[str] = None

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ConsistencyError(
                f"image '{self.image_id}': dimensions {self.width_px}x{self.height_px} invalid"
            )


@dataclass
class DescriptorSet:
    """Global descriptors for a dataset side, one row per image."""

    image_ids: list[str]
    values: np.ndarray  # (n, d) float32

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or len(self.image_ids) != self.values.shape[0]:
            raise ConsistencyError("descriptor count does not match id count")
        if not np.all(np.isfinite(self.values)):
            bad = int(np.argwhere(~np.isfinite(self.values).all(axis=1))[0][0])
            raise ConsistencyError(f"non-finite descriptor for image '{self.image_ids[bad]}'")

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def vector(self, image_id: str) -> np.ndarray:
        return self.values[self.image_ids.index(image_id)]


@dataclass
class KeypointSet:
    """Keypoints and local descriptors for one image.

    `descriptors` is (n, width) float32 for kind "float32" or
    (n, ceil(width/8)) uint8 for kind "binary" (width = bit count).
    """

    image_id: str
    points: np.ndarray  # (n, 2) float32, (x, y) pixel coordinates
    descriptors: np.ndarray
    kind: str = DESCRIPTOR_KIND_FLOAT
    width: int = 0

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 2)
        if self.kind == DESCRIPTOR_KIND_FLOAT:
            self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.float32)
            if self.width == 0:
                self.width = self.descriptors.shape[1] if self.descriptors.size else 0
        elif self.kind == DESCRIPTOR_KIND_BINARY:
            self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.uint8)
        else:
            raise ParseError(f"unknown descriptor kind '{self.kind}'")
        if self.descriptors.ndim != 2:
            self.descriptors = self.descriptors.reshape(self.points.shape[0], -1)
        if self.points.shape[0] != self.descriptors.shape[0]:
            raise ConsistencyError(
                f"image '{self.image_id}': {self.points.shape[0]} points vs "
                f"{self.descriptors.shape[0]} descriptors"
            )

    def __len__(self) -> int:
        return self.points.shape[0]

    def validate_bounds(self, width_px: int, height_px: int) -> None:
        if len(self) == 0:
            return
        x, y = self.points[:, 0], self.points[:, 1]
        if np.any(x < 0) or np.any(x >= width_px) or np.any(y < 0) or np.any(y >= height_px):
            raise ConsistencyError(
                f"image '{self.image_id}': keypoint outside {width_px}x{height_px} bounds"
            )


@dataclass
class BinaryMask:
    """Row-major boolean grid tied to a (resized) image's dimensions."""

    width_px: int
    height_px: int
    bits: np.ndarray  # (height, width) bool

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        if self.bits.shape != (self.height_px, self.width_px):
            raise ConsistencyError(
                f"mask bits shape {self.bits.shape} != ({self.height_px}, {self.width_px})"
            )

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width_px == other.width_px
            and self.height_px == other.height_px
            and bool(np.array_equal(self.bits, other.bits))
        )


@dataclass
class DatasetManifest:
    """Fully validated dataset: header metadata plus image records in manifest
    order, with referenced descriptor/keypoint files loaded and cross-checked.

    Manifest order is the canonical index order for every matrix built from
    the dataset.
    """

    name: str
    role: str
    localization_radius_m: float
    convention: str
    records: list[ImageRecord]
    descriptor_file: Optional[str] = None
    keypoint_file: Optional[str] = None
    root: Path = field(default_factory=Path)
    descriptors: Optional[DescriptorSet] = None
    keypoints: Optional[dict[str, KeypointSet]] = None

    def __len__(self) -> int:
        return len(self.records)

    def index_of(self, image_id: str) -> int:
        return self._index[image_id]

    def __post_init__(self):
        self._index = {r.image_id: i for i, r in enumerate(self.records)}

    def positions(self) -> list[GeoPosition]:
        return [r.position for r in self.records]


# ---------------------------------------------------------------------------
# Manifest (JSON-Lines)
# ---------------------------------------------------------------------------

_HEADER_KEYS = {
    "name",
    "role",
    "localization_radius_m",
    "coordinate_convention",
    "descriptor_file",
    "keypoint_file",
}


def _record_from_json(obj: dict, convention: str, line_no: int) -> ImageRecord:
    try:
        image_id = str(obj["image_id"])
        sequence_id = str(obj["sequence_id"])
        timestamp = float(obj["timestamp"])
        width_px = int(obj["width_px"])
        height_px = int(obj["height_px"])
    except KeyError as exc:
        raise ParseError(f"manifest line {line_no}: missing field {exc}") from exc

    has_geo = "lat" in obj or "lon" in obj
    has_local = "x" in obj or "y" in obj
    if convention == GEODETIC and has_local or convention == LOCAL_XY and has_geo:
        raise ConsistencyError(
            f"manifest line {line_no} (image '{obj.get('image_id')}'): position fields do not "
            f"match declared convention '{convention}'"
        )
    if convention == GEODETIC:
        position = GeoPosition(
            latitude=float(obj["lat"]),
            longitude=float(obj["lon"]),
            depth=float(obj["depth"]) if obj.get("depth") is not None else None,
        )
    else:
        position = GeoPosition(x=float(obj["x"]), y=float(obj["y"]))
    return ImageRecord(
        image_id=image_id,
        sequence_id=sequence_id,
        timestamp=timestamp,
        position=position,
        width_px=width_px,
        height_px=height_px,
        mask_path=obj.get("mask_path"),
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest plus its referenced files.

    Raises ParseError for malformed input and ConsistencyError for invariant
    violations; both name the offending record.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    nonblank = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not nonblank:
        raise ParseError(f"{path}: empty manifest")

    def parse_line(line_no: int, line: str) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} line {line_no}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"{path} line {line_no}: expected a JSON object")
        return obj

    header = parse_line(*nonblank[0])
    missing = _HEADER_KEYS - header.keys()
    if missing:
        raise ParseError(f"{path}: header missing fields {sorted(missing)}")
    role = str(header["role"])
    if role not in ("query", "database"):
        raise ParseError(f"{path}: role '{role}' must be 'query' or 'database'")
    convention = str(header["coordinate_convention"])
    if convention not in (GEODETIC, LOCAL_XY):
        raise ParseError(f"{path}: unknown coordinate convention '{convention}'")
    radius = float(header["localization_radius_m"])
    if radius <= 0:
        raise ConsistencyError(f"{path}: localization_radius_m {radius} must be > 0")

    records: list[ImageRecord] = []
    seen: set[str] = set()
    for line_no, line in nonblank[1:]:
        rec = _record_from_json(parse_line(line_no, line), convention, line_no)
        if rec.image_id in seen:
            raise ConsistencyError(f"{path} line {line_no}: duplicate image_id '{rec.image_id}'")
        seen.add(rec.image_id)
        records.append(rec)

    manifest = DatasetManifest(
        name=str(header["name"]),
        role=role,
        localization_radius_m=radius,
        convention=convention,
        records=records,
        descriptor_file=header.get("descriptor_file"),
        keypoint_file=header.get("keypoint_file"),
        root=path.parent,
    )

    if manifest.descriptor_file is not None:
        dpath = manifest.root / manifest.descriptor_file
        if not dpath.is_file():
            raise ConsistencyError(f"{path}: descriptor file not found: {dpath}")
        manifest.descriptors = load_descriptors(dpath)
        for image_id in manifest.descriptors.image_ids:
            if image_id not in seen:
                raise ConsistencyError(
                    f"{dpath}: descriptor for unknown image '{image_id}'"
                )
    if manifest.keypoint_file is not None:
        kpath = manifest.root / manifest.keypoint_file
        if not kpath.is_file():
            raise ConsistencyError(f"{path}: keypoint file not found: {kpath}")
        manifest.keypoints = load_keypoints(kpath)
        for image_id, kps in manifest.keypoints.items():
            if image_id not in seen:
                raise ConsistencyError(f"{kpath}: keypoints for unknown image '{image_id}'")
            rec = manifest.records[manifest.index_of(image_id)]
            kps.validate_bounds(rec.width_px, rec.height_px)
    for rec in records:
        if rec.mask_path is not None:
            mpath = manifest.root / rec.mask_path
            if not mpath.is_file():
                raise ConsistencyError(
                    f"{path}: image '{rec.image_id}': mask file not found: {mpath}"
                )
    return manifest


def write_manifest(
    path: str | Path,
    *,
    name: str,
    role: str,
    localization_radius_m: float,
    convention: str,
    records: list[ImageRecord],
    descriptor_file: Optional[str] = None,
    keypoint_file: Optional[str] = None,
) -> None:
    """Write a manifest in canonical form (header line, then one record per line)."""
    path = Path(path)
    header = {
        "name": name,
        "role": role,
        "localization_radius_m": localization_radius_m,
        "coordinate_convention": convention,
        "descriptor_file": descriptor_file,
        "keypoint_file": keypoint_file,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            obj: dict = {
                "image_id": rec.image_id,
                "sequence_id": rec.sequence_id,
                "timestamp": rec.timestamp,
                "width_px": rec.width_px,
                "height_px": rec.height_px,
            }
            if rec.position.convention == GEODETIC:
                obj["lat"] = rec.position.latitude
                obj["lon"] = rec.position.longitude
                if rec.position.depth is not None:
                    obj["depth"] = rec.position.depth
            else:
                obj["x"] = rec.position.x
                obj["y"] = rec.position.y
            if rec.mask_path is not None:
                obj["mask_path"] = rec.mask_path
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Resize policy
# ---------------------------------------------------------------------------


def resize_policy(width: int, height: int) -> tuple[int, int]:
    """Fit (width, height) inside 640x480 preserving aspect ratio.

    scale = min(640/w, 480/h, 1), dimensions rounded half-up and clamped to
    >= 1. Inputs already inside the box are returned unchanged; idempotent.
    """
    if width < 1 or height < 1:
        raise ValueError(f"dimensions must be >= 1, got {width}x{height}")
    box_w, box_h = RESIZE_BOX
    scale = min(box_w / width, box_h / height, 1.0)
    if scale >= 1.0:
        return width, height
    new_w = max(1, math.floor(width * scale + 0.5))
    new_h = max(1, math.floor(height * scale + 0.5))
    return new_w, new_h


# ---------------------------------------------------------------------------
# Descriptor file ("ULD1")
# ---------------------------------------------------------------------------


def _read_exact(fh, n: int, path: Path, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(f"{path}: truncated while reading {what}")
    return buf


def _read_id(fh, path: Path) -> str:
    (length,) = struct.unpack("<I", _read_exact(fh, 4, path, "id length"))
    if length > 4096:
        raise ParseError(f"{path}: implausible id length {length}")
    return _read_exact(fh, length, path, "id string").decode("utf-8")


def _write_id(fh, image_id: str) -> None:
    raw = image_id.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def write_descriptors(path: str | Path, descriptors: DescriptorSet) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<II", len(descriptors), descriptors.dimension))
        for image_id, row in zip(descriptors.image_ids, descriptors.values):
            _write_id(fh, image_id)
            fh.write(row.astype("<f4").tobytes())


def load_descriptors(path: str | Path) -> DescriptorSet:
    path = Path(path)
    with path.open("rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != DESCRIPTOR_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {DESCRIPTOR_MAGIC!r}")
        count, dim = struct.unpack("<II", _read_exact(fh, 8, path, "header"))
        ids: list[str] = []
        values = np.empty((count, dim), dtype=np.float32)
        for i in range(count):
            ids.append(_read_id(fh, path))
            buf = _read_exact(fh, 4 * dim, path, f"descriptor for '{ids[-1]}'")
            values[i] = np.frombuffer(buf, dtype="<f4")
        if fh.read(1):
            raise ParseError(f"{path}: trailing bytes after {count} records")
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ConsistencyError(f"{path}: duplicate descriptor id '{dup}'")
    return DescriptorSet(image_ids=ids, values=values)


# ---------------------------------------------------------------------------
# Keypoint file ("ULK1")
# ---------------------------------------------------------------------------

_KIND_CODES = {DESCRIPTOR_KIND_FLOAT: 0, DESCRIPTOR_KIND_BINARY: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def write_keypoints(path: str | Path, sets: list[KeypointSet]) -> None:
    path = Path(path)
    if sets:
        kind = sets[0].kind
        width = sets[0].width
        for ks in sets:
            if ks.kind != kind or ks.width != width:
                raise ConsistencyError(
                    f"image '{ks.image_id}': descriptor kind/width differs within file"
                )
    else:
        kind, width = DESCRIPTOR_KIND_FLOAT, 0
    with path.open("wb") as fh:
        fh.write(KEYPOINT_MAGIC)
        fh.write(struct.pack("<IIB", len(sets), width, _KIND_CODES[kind]))
        for ks in sets:
            _write_id(fh, ks.image_id)
            fh.write(struct.pack("<I", len(ks)))
            fh.write(ks.points.astype("<f4").tobytes())
            if kind == DESCRIPTOR_KIND_FLOAT:
                fh.write(ks.descriptors.astype("<f4").tobytes())
            else:
                fh.write(ks.descriptors.astype(np.uint8).tobytes())


def load_keypoints(path: str | Path) -> dict[str, KeypointSet]:
    path = Path(path)
    out: dict[str, KeypointSet] = {}
    with path.open("rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != KEYPOINT_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {KEYPOINT_MAGIC!r}")
        count, width, kind_code = struct.unpack("<IIB", _read_exact(fh, 9, path, "header"))
        if kind_code not in _KIND_NAMES:
            raise ParseError(f"{path}: unknown descriptor kind code {kind_code}")
        kind = _KIND_NAMES[kind_code]
        bytes_per_desc = 4 * width if kind == DESCRIPTOR_KIND_FLOAT else (width + 7) // 8
        for _ in range(count):
            image_id = _read_id(fh, path)
            if image_id in out:
                raise ConsistencyError(f"{path}: duplicate keypoint record for '{image_id}'")
            (n,) = struct.unpack("<I", _read_exact(fh, 4, path, f"point count for '{image_id}'"))
            pts = np.frombuffer(
                _read_exact(fh, 8 * n, path, f"points for '{image_id}'"), dtype="<f4"
            ).reshape(n, 2)
            raw = _read_exact(fh, bytes_per_desc * n, path, f"descriptors for '{image_id}'")
            if kind == DESCRIPTOR_KIND_FLOAT:
                desc = np.frombuffer(raw, dtype="<f4").reshape(n, width)
            else:
                desc = np.frombuffer(raw, dtype=np.uint8).reshape(n, bytes_per_desc)
            out[image_id] = KeypointSet(
                image_id=image_id, points=pts.copy(), descriptors=desc.copy(),
                kind=kind, width=width,
            )
        if fh.read(1):
            raise ParseError(f"{path}: trailing bytes after {count} records")
    return out


# ---------------------------------------------------------------------------
# Mask file (plain P5 PGM, maxval 255, pixel > 0 => true)
# ---------------------------------------------------------------------------


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    write_pgm(np.where(mask.bits, 255, 0).astype(np.uint8), path)


def load_mask(path: str | Path) -> BinaryMask:
    pixels = load_pgm(path)
    h, w = pixels.shape
    return BinaryMask(width_px=w, height_px=h, bits=pixels > 0)


def write_pgm(pixels: np.ndarray, path: str | Path) -> None:
    """Write a uint8 grayscale raster as binary PGM (P5, maxval 255)."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def load_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5); tolerates comment lines and any token spacing."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a P5 PGM")
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise ParseError(f"{path}: bad PGM header token {data[start:pos]!r}") from None
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ParseError(f"{path}: maxval {maxval} unsupported, expected 255")
    expected = w * h
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ParseError(f"{path}: expected {expected} pixel bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()
