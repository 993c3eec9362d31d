import numpy as np
import pytest

from stylescope.errors import DataError
from stylescope.schema import (
    AttributeSchema,
    PersonRecord,
    default_city_table,
    load_schema,
    parse_city_table,
    parse_schema,
    serialize_city_table,
    serialize_schema,
    validate_record,
)

EXPECTED_CLASS_COUNTS = {
    "wearing_jacket": 2,
    "collar_presence": 2,
    "wearing_scarf": 2,
    "wearing_necktie": 2,
    "wearing_hat": 2,
    "wearing_glasses": 2,
    "multiple_layers": 2,
    "major_color": 13,
    "clothing_category": 7,
    "sleeve_length": 3,
    "neckline_shape": 3,
    "clothing_pattern": 6,
}


def test_default_schema_shape(schema):
    assert len(schema.attributes) == 12
    assert schema.n_classes_total() == 46
    for name, classes in schema.attributes:
        assert len(classes) == EXPECTED_CLASS_COUNTS[name]


def test_default_schema_necktie_classes(schema):
    assert schema.classes("wearing_necktie") == ("No", "Yes")


def test_default_schema_major_color(schema):
    colors = schema.classes("major_color")
    assert len(colors) == 13
    for label in ("Black", "White", "2+ colors"):
        assert label in colors


def test_duplicate_attribute_rejected():
    with pytest.raises(DataError, match="duplicate attribute"):
        AttributeSchema((("a", ("x", "y")), ("a", ("p", "q"))))


def test_duplicate_class_rejected():
    with pytest.raises(DataError, match="duplicate class"):
        load_schema({"a": ("x", "x")})


def test_empty_class_list_rejected():
    with pytest.raises(DataError, match="empty class list"):
        load_schema({"a": ()})


def test_schema_round_trip(schema):
    text = serialize_schema(schema)
    assert parse_schema(text) == schema


def test_schema_round_trip_custom():
    custom = load_schema({"headwear": ("none", "cap", "scarf"), "shiny": ("No", "Yes")})
    assert parse_schema(serialize_schema(custom)) == custom


def test_city_table_has_44_cities(cities):
    assert len(cities.entries) == 44
    assert cities.radius_km == 5.0
    assert "New York City" in cities.names
    assert "São Paulo" in cities.names


def test_city_table_no_close_pairs(cities):
    from stylescope.ingest import haversine_km

    for i, (n1, la1, lo1) in enumerate(cities.entries):
        for n2, la2, lo2 in cities.entries[i + 1:]:
            assert haversine_km(la1, lo1, la2, lo2) > 10.0, (n1, n2)


def test_city_table_round_trip(cities):
    assert parse_city_table(serialize_city_table(cities)) == cities


def make_record(schema, dim=8, **overrides):
    scores = {
        "wearing_scarf": np.array([0.9, 0.1]),
        "sleeve_length": np.array([0.5, 0.3, 0.2]),
    }
    kwargs = dict(
        record_id="r1", latitude=40.0, longitude=-70.0, timestamp=1400000000,
        embedding=np.ones(dim, dtype=np.float32), scores=scores, country="US",
    )
    kwargs.update(overrides)
    return PersonRecord.create(**kwargs)


def test_validate_record_accepts_wellformed(schema):
    record = make_record(schema)
    assert validate_record(record, schema, 8) is record


def test_validate_record_score_sum(schema):
    bad = make_record(schema, scores={"wearing_scarf": np.array([0.7, 0.1])})
    with pytest.raises(DataError, match="score normalization"):
        validate_record(bad, schema, 8)


def test_validate_record_latitude(schema):
    bad = make_record(schema, latitude=95.0)
    with pytest.raises(DataError, match="latitude range"):
        validate_record(bad, schema, 8)


def test_validate_record_dimension(schema):
    with pytest.raises(DataError, match="embedding dimension"):
        validate_record(make_record(schema), schema, 16)


def test_validate_record_score_length(schema):
    bad = make_record(schema, scores={"sleeve_length": np.array([0.5, 0.5])})
    with pytest.raises(DataError, match="score length"):
        validate_record(bad, schema, 8)


def test_records_are_immutable(schema):
    record = make_record(schema)
    with pytest.raises(ValueError):
        record.embedding[0] = 5.0
    with pytest.raises(ValueError):
        record.scores["wearing_scarf"][0] = 0.5
    with pytest.raises(TypeError):
        record.scores["new"] = np.array([1.0])
