"""Domain types: attribute schema, person records, city table, labeled examples.

All types are immutable after construction and safe to share across workers.
"""
from __future__ import annotations

import math
import types
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

SCORE_SUM_TOL = 1e-6

# Built-in attribute schema: 12 attributes, 46 classes total.  Binary
# attributes list their classes as [No, Yes].
DEFAULT_SCHEMA_CONFIG: dict[str, tuple[str, ...]] = {
    "wearing_jacket": ("No", "Yes"),
    "collar_presence": ("No", "Yes"),
    "wearing_scarf": ("No", "Yes"),
    "wearing_necktie": ("No", "Yes"),
    "wearing_hat": ("No", "Yes"),
    "wearing_glasses": ("No", "Yes"),
    "multiple_layers": ("No", "Yes"),
    "major_color": (
        "Black", "White", "2+ colors", "Blue", "Gray", "Red", "Pink",
        "Green", "Yellow", "Brown", "Purple", "Orange", "Cyan",
    ),
    "clothing_category": (
        "Shirt", "Outerwear", "T-shirt", "Dress", "Tank top", "Suit", "Sweater",
    ),
    "sleeve_length": ("Long sleeve", "Short sleeve", "No sleeve"),
    "neckline_shape": ("Round", "Folded", "V-shape"),
    "clothing_pattern": ("Solid", "Graphics", "Striped", "Floral", "Plaid", "Spotted"),
}

# Default world-city table: (name, lat, lon).  City centers are approximate;
# no two entries lie within 10 km of each other.
DEFAULT_CITIES: tuple[tuple[str, float, float], ...] = (
    ("Austin", 30.2672, -97.7431),
    ("Bangkok", 13.7563, 100.5018),
    ("Beijing", 39.9042, 116.4074),
    ("Berlin", 52.5200, 13.4050),
    ("Bogotá", 4.7110, -74.0721),
    ("Budapest", 47.4979, 19.0402),
    ("Buenos Aires", -34.6037, -58.3816),
    ("Cairo", 30.0444, 31.2357),
    ("Chicago", 41.8781, -87.6298),
    ("Delhi", 28.7041, 77.1025),
    ("Dhaka", 23.8103, 90.4125),
    ("Guangzhou", 23.1291, 113.2644),
    ("Istanbul", 41.0082, 28.9784),
    ("Jakarta", -6.2088, 106.8456),
    ("Johannesburg", -26.2041, 28.0473),
    ("Karachi", 24.8607, 67.0011),
    ("Kiev", 50.4501, 30.5234),
    ("Kolkata", 22.5726, 88.3639),
    ("Lagos", 6.5244, 3.3792),
    ("London", 51.5074, -0.1278),
    ("Los Angeles", 34.0522, -118.2437),
    ("Madrid", 40.4168, -3.7038),
    ("Manila", 14.5995, 120.9842),
    ("Mexico City", 19.4326, -99.1332),
    ("Milan", 45.4642, 9.1900),
    ("Moscow", 55.7558, 37.6173),
    ("Mumbai", 19.0760, 72.8777),
    ("Nairobi", -1.2921, 36.8219),
    ("New York City", 40.7128, -74.0060),
    ("Osaka", 34.6937, 135.5023),
    ("Paris", 48.8566, 2.3522),
    ("Rio de Janeiro", -22.9068, -43.1729),
    ("Rome", 41.9028, 12.4964),
    ("São Paulo", -23.5505, -46.6333),
    ("Seattle", 47.6062, -122.3321),
    ("Seoul", 37.5665, 126.9780),
    ("Shanghai", 31.2304, 121.4737),
    ("Singapore", 1.3521, 103.8198),
    ("Sofia", 42.6977, 23.3219),
    ("Sydney", -33.8688, 151.2093),
    ("Tianjin", 39.3434, 117.3616),
    ("Tokyo", 35.6762, 139.6503),
    ("Toronto", 43.6532, -79.3832),
    ("Vancouver", 49.2827, -123.1207),
)

DEFAULT_CITY_RADIUS_KM = 5.0


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute -> ordered class labels contract for score vectors."""

    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        seen = set()
        for name, classes in self.attributes:
            if not name:
                raise DataError("schema: empty attribute name")
            if name in seen:
                raise DataError(f"schema: duplicate attribute name {name!r}")
            seen.add(name)
            if len(classes) == 0:
                raise DataError(f"schema: attribute {name!r} has an empty class list")
            if len(set(classes)) != len(classes):
                raise DataError(f"schema: duplicate class label under attribute {name!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    def classes(self, attribute: str) -> tuple[str, ...]:
        for name, classes in self.attributes:
            if name == attribute:
                return classes
        raise DataError(f"schema: unknown attribute {attribute!r}")

    def class_index(self, attribute: str, class_label: str) -> int:
        classes = self.classes(attribute)
        try:
            return classes.index(class_label)
        except ValueError:
            raise DataError(
                f"schema: unknown class {class_label!r} for attribute {attribute!r}"
            ) from None

    def has_attribute(self, attribute: str) -> bool:
        return attribute in self.names

    def n_classes_total(self) -> int:
        return sum(len(c) for _, c in self.attributes)


def load_schema(config: Mapping[str, Sequence[str]] | None = None) -> AttributeSchema:
    """Build a validated schema from a key-value document (default: Table-style built-in)."""
    if config is None:
        config = DEFAULT_SCHEMA_CONFIG
    attrs = tuple((str(name), tuple(str(c) for c in classes)) for name, classes in config.items())
    return AttributeSchema(attrs)


def serialize_schema(schema: AttributeSchema) -> str:
    lines = ["# stylescope attribute schema"]
    for name, classes in schema.attributes:
        lines.append(f"{name} = " + " | ".join(classes))
    return "\n".join(lines) + "\n"


def parse_schema(text: str) -> AttributeSchema:
    config: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"schema file line {lineno}: expected 'name = C1 | C2 | ...'")
        name, _, rhs = line.partition("=")
        name = name.strip()
        classes = tuple(c.strip() for c in rhs.split("|"))
        if name in config:
            raise DataError(f"schema file line {lineno}: duplicate attribute {name!r}")
        if any(not c for c in classes):
            raise DataError(f"schema file line {lineno}: empty class label")
        config[name] = classes
    return load_schema(config)


@dataclass(frozen=True)
class CityTable:
    entries: tuple[tuple[str, float, float], ...]
    radius_km: float = DEFAULT_CITY_RADIUS_KM

    def __post_init__(self):
        names = [name for name, _, _ in self.entries]
        if len(set(names)) != len(names):
            raise DataError("city table: duplicate city names")
        if self.radius_km <= 0:
            raise DataError("city table: radius_km must be positive")
        for name, lat, lon in self.entries:
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                raise DataError(f"city table: {name!r} has out-of-range coordinates")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.entries)

    def latitude(self, city: str) -> float:
        for name, lat, _ in self.entries:
            if name == city:
                return lat
        raise DataError(f"city table: unknown city {city!r}")


def default_city_table() -> CityTable:
    return CityTable(DEFAULT_CITIES, DEFAULT_CITY_RADIUS_KM)


def serialize_city_table(table: CityTable) -> str:
    lines = ["# stylescope city table", f"radius_km = {table.radius_km!r}"]
    for name, lat, lon in table.entries:
        lines.append(f"{name} = {lat!r}, {lon!r}")
    return "\n".join(lines) + "\n"


def parse_city_table(text: str) -> CityTable:
    entries: list[tuple[str, float, float]] = []
    radius = DEFAULT_CITY_RADIUS_KM
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"city file line {lineno}: expected 'Name = lat, lon'")
        name, _, rhs = line.partition("=")
        name = name.strip()
        if name == "radius_km":
            radius = float(rhs.strip())
            continue
        parts = rhs.split(",")
        if len(parts) != 2:
            raise DataError(f"city file line {lineno}: expected two coordinates")
        entries.append((name, float(parts[0]), float(parts[1])))
    return CityTable(tuple(entries), radius)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PersonRecord:
    """One detected person: geo/time metadata, embedding, per-attribute scores."""

    record_id: str
    latitude: float
    longitude: float
    timestamp: int
    country: str | None
    embedding: np.ndarray
    scores: Mapping[str, np.ndarray]

    @staticmethod
    def create(record_id, latitude, longitude, timestamp, embedding,
               scores: Mapping[str, Iterable[float]], country: str | None = None) -> "PersonRecord":
        emb = _frozen_array(embedding, np.float32)
        frozen_scores = {k: _frozen_array(v, np.float64) for k, v in scores.items()}
        return PersonRecord(
            record_id=str(record_id),
            latitude=float(latitude),
            longitude=float(longitude),
            timestamp=int(timestamp),
            country=country,
            embedding=emb,
            scores=types.MappingProxyType(frozen_scores),
        )


def validate_record(record: PersonRecord, schema: AttributeSchema, expected_dim: int) -> PersonRecord:
    """Check all record invariants; raise DataError naming the violated field."""
    if not record.record_id:
        raise DataError("record id: empty")
    if not (-90.0 <= record.latitude <= 90.0):
        raise DataError(f"latitude range: {record.latitude} outside [-90, 90] ({record.record_id})")
    if not (-180.0 <= record.longitude <= 180.0):
        raise DataError(f"longitude range: {record.longitude} outside [-180, 180] ({record.record_id})")
    if record.embedding.ndim != 1 or record.embedding.shape[0] != expected_dim:
        raise DataError(
            f"embedding dimension: got {record.embedding.shape}, expected ({expected_dim},) ({record.record_id})"
        )
    if not np.all(np.isfinite(record.embedding)):
        raise DataError(f"embedding values: non-finite entries ({record.record_id})")
    for attribute, vec in record.scores.items():
        classes = schema.classes(attribute)
        if vec.shape != (len(classes),):
            raise DataError(
                f"score length: {attribute} has {vec.shape[0]} entries, schema wants {len(classes)} ({record.record_id})"
            )
        if not np.all(np.isfinite(vec)) or np.any(vec < 0):
            raise DataError(f"score values: {attribute} has negative or non-finite entries ({record.record_id})")
        total = float(vec.sum())
        if not math.isclose(total, 1.0, abs_tol=SCORE_SUM_TOL):
            raise DataError(f"score normalization: {attribute} sums to {total!r} ({record.record_id})")
    return record


@dataclass(frozen=True)
class LabeledExample:
    record_id: str
    attribute_name: str
    class_label: str

    def check(self, schema: AttributeSchema) -> "LabeledExample":
        schema.class_index(self.attribute_name, self.class_label)
        return self
