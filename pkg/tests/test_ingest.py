import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stylescope.errors import DataError
from stylescope.ingest import (
    BinKey,
    DetectionInput,
    assign_bins,
    balanced_subsample,
    canonical_crop,
    haversine_km,
    parse_epoch,
    read_corpus,
    read_embedding_header,
    stratified_sampler,
    write_corpus,
)
from stylescope.schema import CityTable, PersonRecord

EPOCH = parse_epoch("2013-06-01T00:00:00Z")


# ---------------------------------------------------------------------------
# canonical_crop


def test_crop_direct_arithmetic():
    d = DetectionInput(face_box=(100, 100, 50, 50), body_box=(0, 0, 400, 400),
                       torso_visible=True)
    assert canonical_crop(d) == (50, 75, 150, 225)


def test_crop_discard_outside_body():
    d = DetectionInput(face_box=(10, 10, 50, 50), body_box=(0, 0, 100, 100),
                       torso_visible=True)
    assert canonical_crop(d) is None


def test_crop_discard_no_torso():
    d = DetectionInput(face_box=(100, 100, 50, 50), body_box=(0, 0, 400, 400),
                       torso_visible=False)
    assert canonical_crop(d) is None


def test_crop_rejects_degenerate_boxes():
    with pytest.raises(DataError):
        DetectionInput(face_box=(0, 0, 0, 10), body_box=(0, 0, 10, 10), torso_visible=True)


@given(
    fx=st.floats(0, 500), fy=st.floats(0, 500),
    fw=st.floats(1, 100), fh=st.floats(1, 100),
    scale=st.floats(0.1, 10),
)
@settings(max_examples=200)
def test_crop_scale_equivariance(fx, fy, fw, fh, scale):
    body = (fx - 300, fy - 300, 1000.0, 1000.0)
    d1 = DetectionInput((fx, fy, fw, fh), body, True)
    d2 = DetectionInput(
        tuple(v * scale for v in d1.face_box),
        tuple(v * scale for v in d1.body_box),
        True,
    )
    c1 = canonical_crop(d1)
    c2 = canonical_crop(d2)
    assert (c1 is None) == (c2 is None)
    if c1 is not None:
        for a, b in zip(c1, c2):
            assert b == pytest.approx(a * scale, rel=1e-9, abs=1e-6)


# ---------------------------------------------------------------------------
# bin assignment


def _record_at(lat, lon, ts, rid="r"):
    return PersonRecord.create(rid, lat, lon, ts, np.ones(4, np.float32), {})


def test_assign_bins_exact_city_center(cities):
    record = _record_at(40.7128, -74.0060, EPOCH + 100)
    key = assign_bins(record, cities, EPOCH)
    assert key.city == "New York City"
    assert key.week_index == 0
    assert key.month_index == 0


def test_assign_bins_no_city_within_radius(cities):
    # mid-Atlantic point, far from every table city
    record = _record_at(30.0, -40.0, EPOCH)
    assert assign_bins(record, cities, EPOCH).city is None


def test_assign_bins_six_km_out():
    table = CityTable((("Solo", 0.0, 0.0),), radius_km=5.0)
    # ~6 km north of the center
    record = _record_at(0.054, 0.0, EPOCH)
    assert haversine_km(0.054, 0.0, 0.0, 0.0) > 5.0
    assert assign_bins(record, table, EPOCH).city is None


def test_assign_bins_week_floor(cities):
    record = _record_at(0.0, 0.0, EPOCH + 8 * 86400)
    assert assign_bins(record, cities, EPOCH).week_index == 1


def test_assign_bins_month_index(cities):
    # 2013-08-15 is two calendar months after the 2013-06 epoch
    ts = parse_epoch("2013-08-15T12:00:00Z")
    assert assign_bins(_record_at(0, 0, ts), cities, EPOCH).month_index == 2


def test_assign_bins_before_epoch(cities):
    with pytest.raises(DataError, match="before epoch"):
        assign_bins(_record_at(0, 0, EPOCH - 1), cities, EPOCH)


def test_assign_bins_nearest_city_tiebreak():
    table = CityTable((("First", 0.0, 0.0), ("Second", 0.0, 0.02)), radius_km=5.0)
    # closer to Second
    key = assign_bins(_record_at(0.0, 0.018, EPOCH), table, EPOCH)
    assert key.city == "Second"


@given(ts1=st.integers(EPOCH, EPOCH + 10**8), delta=st.integers(0, 10**7))
@settings(max_examples=100)
def test_week_index_monotone(cities, ts1, delta):
    k1 = assign_bins(_record_at(0, 0, ts1), cities, EPOCH)
    k2 = assign_bins(_record_at(0, 0, ts1 + delta), cities, EPOCH)
    assert k2.week_index >= k1.week_index >= 0


# ---------------------------------------------------------------------------
# corpus round trip


def _toy_records(schema, n=3, dim=6):
    rng = np.random.default_rng(7)
    out = []
    for i in range(n):
        scores = {
            "wearing_scarf": np.array([0.25, 0.75]),
            "neckline_shape": np.array([0.2, 0.5, 0.3]),
        }
        out.append(PersonRecord.create(
            f"rec{i:04d}", 40.0 + i * 0.001, -74.0, EPOCH + i * 3600,
            rng.normal(size=dim).astype(np.float32), scores,
            country="US" if i % 2 == 0 else None,
        ))
    return out


def test_corpus_round_trip_byte_identical(tmp_path, schema):
    records = _toy_records(schema)
    meta1, emb1 = tmp_path / "a.jsonl", tmp_path / "a.f32"
    write_corpus(records, schema, meta1, emb1, dim=6)

    loaded = list(read_corpus(meta1, emb1, schema, expected_dim=6))
    assert len(loaded) == 3
    assert [r.record_id for r in loaded] == [r.record_id for r in records]

    meta2, emb2 = tmp_path / "b.jsonl", tmp_path / "b.f32"
    write_corpus(loaded, schema, meta2, emb2, dim=6)
    assert meta1.read_bytes() == meta2.read_bytes()
    assert emb1.read_bytes() == emb2.read_bytes()


def test_corpus_empty(tmp_path, schema):
    meta, emb = tmp_path / "e.jsonl", tmp_path / "e.f32"
    write_corpus([], schema, meta, emb, dim=6)
    assert list(read_corpus(meta, emb, schema)) == []
    assert read_embedding_header(emb) == (0, 6)


def test_corpus_wrong_dim_header(tmp_path, schema):
    records = _toy_records(schema)
    meta, emb = tmp_path / "c.jsonl", tmp_path / "c.f32"
    write_corpus(records, schema, meta, emb, dim=6)
    with pytest.raises(DataError, match="dimension"):
        list(read_corpus(meta, emb, schema, expected_dim=16))


def test_corpus_malformed_line_strict_and_lenient(tmp_path, schema):
    records = _toy_records(schema)
    meta, emb = tmp_path / "d.jsonl", tmp_path / "d.f32"
    write_corpus(records, schema, meta, emb, dim=6)
    lines = meta.read_text().splitlines()
    lines[1] = "{not json"
    meta.write_text("\n".join(lines) + "\n")

    with pytest.raises(DataError, match="line 2"):
        list(read_corpus(meta, emb, schema))

    errors = []
    kept = list(read_corpus(meta, emb, schema, lenient=True, errors_out=errors))
    assert [r.record_id for r in kept] == ["rec0000", "rec0002"]
    assert errors and errors[0][0] == 2
    # lenient mode keeps the embedding stream aligned with surviving lines
    assert np.allclose(kept[1].embedding, records[2].embedding)


def test_corpus_blob_truncated(tmp_path, schema):
    records = _toy_records(schema)
    meta, emb = tmp_path / "t.jsonl", tmp_path / "t.f32"
    write_corpus(records, schema, meta, emb, dim=6)
    blob = emb.read_bytes()
    emb.write_bytes(blob[:-8])
    with pytest.raises(DataError, match="ends before"):
        list(read_corpus(meta, emb, schema))


# ---------------------------------------------------------------------------
# balanced subsample


def test_subsample_small_bin_kept_whole():
    groups = {("c", 0): list(range(3000))}
    out = balanced_subsample(groups, cap=4000, seed=1)
    assert out == list(range(3000))


def test_subsample_caps_large_bin():
    groups = {("c", 0): list(range(10000))}
    out = balanced_subsample(groups, cap=4000, seed=1)
    assert len(out) == 4000
    assert len(set(out)) == 4000
    assert set(out) <= set(range(10000))


def test_subsample_deterministic():
    groups = {("a", 1): list(range(500)), ("b", 2): list(range(800))}
    assert balanced_subsample(groups, 100, seed=9) == balanced_subsample(groups, 100, seed=9)
    assert balanced_subsample(groups, 100, seed=9) != balanced_subsample(groups, 100, seed=10)


def test_subsample_independent_of_dict_order():
    g1 = {("a", 1): list(range(300)), ("b", 2): list(range(300, 700))}
    g2 = {("b", 2): list(range(300, 700)), ("a", 1): list(range(300))}
    assert balanced_subsample(g1, 50, seed=3) == balanced_subsample(g2, 50, seed=3)


@given(
    sizes=st.lists(st.integers(0, 40), min_size=1, max_size=6),
    cap=st.integers(1, 30),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=100)
def test_subsample_properties(sizes, cap, seed):
    groups = {}
    base = 0
    for i, size in enumerate(sizes):
        groups[("city", i)] = list(range(base, base + size))
        base += size
    out = balanced_subsample(groups, cap, seed)
    assert len(set(out)) == len(out)
    universe = set(range(base))
    assert set(out) <= universe
    for i, size in enumerate(sizes):
        members = set(groups[("city", i)])
        assert len(members & set(out)) == min(size, cap)


# ---------------------------------------------------------------------------
# stratified sampler


def pool_index(pool):
    return {cls: set(items) for cls, items in pool.items()}


def test_stratified_scarf_pool_marginal():
    # class-size imbalance must not leak into the class marginal
    pool = {"Yes": list(range(1452)), "No": list(range(1452, 1452 + 23979))}
    batch = stratified_sampler(pool, 10000, seed=4)
    yes = sum(1 for x in batch if x < 1452) / len(batch)
    assert abs(yes - 0.5) < 0.02


def test_stratified_single_class():
    pool = {"only": ["a", "b"]}
    batch = stratified_sampler(pool, 50, seed=0)
    assert set(batch) <= {"a", "b"}
    assert len(batch) == 50


def test_stratified_empty_class_rejected():
    with pytest.raises(DataError, match="no examples"):
        stratified_sampler({"a": [1], "b": []}, 10, seed=0)


def test_stratified_deterministic():
    pool = {"a": list(range(5)), "b": list(range(5, 20))}
    assert stratified_sampler(pool, 100, seed=11) == stratified_sampler(pool, 100, seed=11)


def test_stratified_uniform_marginal_chi_square():
    pool = {
        "w": list(range(10)),
        "x": list(range(10, 5000)),
        "y": list(range(5000, 5003)),
        "z": list(range(5003, 6000)),
    }
    lookup = pool_index(pool)
    batch = stratified_sampler(pool, 100000, seed=21)
    counts = {cls: 0 for cls in pool}
    for item in batch:
        for cls, members in lookup.items():
            if item in members:
                counts[cls] += 1
                break
    observed = [counts[c] for c in sorted(counts)]
    result = stats.chisquare(observed)
    assert result.pvalue > 0.01
