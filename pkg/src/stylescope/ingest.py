"""Corpus ingestion: canonical crops, file formats, spatio-temporal binning, sampling.

Corpus format: a newline-delimited JSON metadata file (one record per line)
plus a binary embedding blob of little-endian float32 rows with an 8-byte
header (record count u32, dimension u32).
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError
from .schema import AttributeSchema, CityTable, PersonRecord, validate_record

EMBED_MAGIC_LEN = 8  # u32 count + u32 dim, little-endian
WEEK_SECONDS = 604800
DEFAULT_EPOCH = "2013-06-01T00:00:00Z"

EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class CropGeometry:
    """Head-and-torso framing constants, in face-box units."""

    width_scale: float = 3.0
    height_scale: float = 4.5
    top_margin: float = 0.5


@dataclass(frozen=True)
class DetectionInput:
    face_box: tuple[float, float, float, float]
    body_box: tuple[float, float, float, float]
    torso_visible: bool

    def __post_init__(self):
        for name, box in (("face_box", self.face_box), ("body_box", self.body_box)):
            if box[2] <= 0 or box[3] <= 0:
                raise DataError(f"{name}: width and height must be positive")


@dataclass(frozen=True)
class BinKey:
    city: str | None
    week_index: int
    month_index: int


def canonical_crop(d: DetectionInput, geometry: CropGeometry = CropGeometry()):
    """Fixed-geometry crop around the face, or None when the person is discarded.

    The crop is centered horizontally on the face, extends top_margin*face_h
    above the face top, and spans width_scale*face_w by height_scale*face_h.
    Discards when the torso is not visible or the crop leaves the body box.
    """
    if not d.torso_visible:
        return None
    fx, fy, fw, fh = d.face_box
    bx, by, bw, bh = d.body_box
    cw = geometry.width_scale * fw
    ch = geometry.height_scale * fh
    cx = fx + fw / 2.0 - cw / 2.0
    cy = fy - geometry.top_margin * fh
    if cx < bx or cy < by or cx + cw > bx + bw or cy + ch > by + bh:
        return None
    return (cx, cy, cw, ch)


def parse_epoch(value: str | int | float) -> int:
    if isinstance(value, (int, float)):
        return int(value)
    text = value.strip().replace("Z", "+00:00")
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


def assign_bins(record: PersonRecord, cities: CityTable, epoch: int) -> BinKey:
    """Nearest city within the table radius (ties by table order) plus week/month bins."""
    if record.timestamp < epoch:
        raise DataError(f"timestamp before epoch: {record.record_id}")
    best_city = None
    best_dist = math.inf
    for name, lat, lon in cities.entries:
        dist = haversine_km(record.latitude, record.longitude, lat, lon)
        if dist <= cities.radius_km and dist < best_dist:
            best_city = name
            best_dist = dist
    week = (record.timestamp - epoch) // WEEK_SECONDS
    dt = datetime.fromtimestamp(record.timestamp, tz=timezone.utc)
    ep = datetime.fromtimestamp(epoch, tz=timezone.utc)
    month = (dt.year - ep.year) * 12 + (dt.month - ep.month)
    return BinKey(city=best_city, week_index=int(week), month_index=int(month))


# ---------------------------------------------------------------------------
# Corpus files


def write_embeddings(vectors: Iterable[np.ndarray], dim: int, path) -> int:
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", 0, dim))
        for vec in vectors:
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise DataError(f"embedding dimension: got {arr.shape}, expected ({dim},)")
            fh.write(arr.tobytes())
            count += 1
        fh.seek(0)
        fh.write(struct.pack("<II", count, dim))
    return count


def read_embedding_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        header = fh.read(EMBED_MAGIC_LEN)
    if len(header) != EMBED_MAGIC_LEN:
        raise DataError(f"embedding blob {path}: truncated header")
    count, dim = struct.unpack("<II", header)
    return count, dim


def record_to_json(record: PersonRecord, schema: AttributeSchema) -> str:
    doc: dict = {
        "id": record.record_id,
        "lat": record.latitude,
        "lon": record.longitude,
        "ts": record.timestamp,
    }
    if record.country is not None:
        doc["country"] = record.country
    doc["scores"] = {
        name: [float(x) for x in record.scores[name]]
        for name in schema.names
        if name in record.scores
    }
    return json.dumps(doc, ensure_ascii=False, separators=(", ", ": "))


def _record_from_doc(doc: Mapping, embedding: np.ndarray) -> PersonRecord:
    return PersonRecord.create(
        record_id=doc["id"],
        latitude=doc["lat"],
        longitude=doc["lon"],
        timestamp=doc["ts"],
        embedding=embedding,
        scores={k: np.asarray(v, dtype=np.float64) for k, v in doc.get("scores", {}).items()},
        country=doc.get("country"),
    )


def read_corpus(
    meta_path,
    emb_path,
    schema: AttributeSchema,
    *,
    expected_dim: int | None = None,
    lenient: bool = False,
    errors_out: list | None = None,
) -> Iterator[PersonRecord]:
    """Stream validated PersonRecords in file order (constant memory).

    Malformed metadata lines raise DataError with the line number; under
    ``lenient`` they are skipped (and appended to ``errors_out`` if given),
    with the paired embedding row consumed to keep the streams aligned.
    """
    count, dim = read_embedding_header(emb_path)
    if expected_dim is not None and dim != expected_dim:
        raise DataError(f"embedding blob {emb_path}: dimension {dim} != expected {expected_dim}")
    row_bytes = 4 * dim
    with open(meta_path, "r", encoding="utf-8") as meta, open(emb_path, "rb") as blob:
        blob.seek(EMBED_MAGIC_LEN)
        rows_read = 0
        for lineno, line in enumerate(meta, start=1):
            line = line.strip()
            if not line:
                continue
            raw = blob.read(row_bytes)
            if len(raw) != row_bytes:
                raise DataError(f"embedding blob {emb_path}: ends before metadata line {lineno}")
            rows_read += 1
            try:
                doc = json.loads(line)
                embedding = np.frombuffer(raw, dtype="<f4")
                record = validate_record(_record_from_doc(doc, embedding), schema, dim)
            except (DataError, KeyError, TypeError, ValueError) as exc:
                if lenient:
                    if errors_out is not None:
                        errors_out.append((lineno, str(exc)))
                    continue
                raise DataError(f"metadata line {lineno}: {exc}") from exc
            yield record
        if rows_read != count:
            raise DataError(
                f"embedding blob {emb_path}: header count {count} != {rows_read} metadata records"
            )


def write_corpus(records: Iterable[PersonRecord], schema: AttributeSchema,
                 meta_path, emb_path, dim: int) -> int:
    n = 0
    with open(meta_path, "w", encoding="utf-8") as meta, open(emb_path, "wb") as blob:
        blob.write(struct.pack("<II", 0, dim))
        for record in records:
            arr = np.asarray(record.embedding, dtype="<f4")
            if arr.shape != (dim,):
                raise DataError(f"embedding dimension: got {arr.shape}, expected ({dim},)")
            meta.write(record_to_json(record, schema) + "\n")
            blob.write(arr.tobytes())
            n += 1
        blob.seek(0)
        blob.write(struct.pack("<II", n, dim))
    return n


def iter_metadata(meta_path, *, lenient: bool = False) -> Iterator[tuple[int, dict]]:
    """Yield (lineno, parsed doc) from a metadata file without touching embeddings."""
    with open(meta_path, "r", encoding="utf-8") as meta:
        for lineno, line in enumerate(meta, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except ValueError as exc:
                if lenient:
                    continue
                raise DataError(f"metadata line {lineno}: {exc}") from exc


# ---------------------------------------------------------------------------
# Sampling


def _bin_rng(seed: int, bin_id) -> np.random.Generator:
    # Per-bin stream independent of iteration order and worker layout.
    digest = hashlib.sha256(repr(bin_id).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *words]))


def balanced_subsample(groups: Mapping, cap: int, seed: int) -> list:
    """Per-bin cap: keep everything in small bins, sample uniformly in large ones.

    ``groups`` maps a bin id (e.g. (city, week)) to a sequence of items.  The
    draw for each bin depends only on (seed, bin id).
    """
    if cap < 1:
        raise DataError(f"subsample cap must be >= 1, got {cap}")
    out = []
    for bin_id in sorted(groups.keys(), key=repr):
        items = groups[bin_id]
        if len(items) <= cap:
            out.extend(items)
            continue
        rng = _bin_rng(seed, bin_id)
        idx = rng.choice(len(items), size=cap, replace=False)
        idx.sort()
        out.extend(items[i] for i in idx)
    return out


def stratified_sampler(pool: Mapping[str, Sequence], batch: int, seed: int) -> list:
    """Draw a batch by picking a class uniformly, then an example of that class uniformly."""
    classes = sorted(pool.keys())
    if not classes:
        raise DataError("stratified sampler: empty pool")
    for cls in classes:
        if len(pool[cls]) == 0:
            raise DataError(f"stratified sampler: class {cls!r} has no examples")
    rng = np.random.default_rng(seed)
    class_idx = rng.integers(0, len(classes), size=batch)
    out = []
    for ci in class_idx:
        examples = pool[classes[ci]]
        out.append(examples[rng.integers(0, len(examples))])
    return out
