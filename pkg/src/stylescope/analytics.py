"""Spatio-temporal statistics: weekly attribute series with confidence
intervals, cross-city correlation, country aggregates, cluster entropy
rankings, and per-city distinctiveness lift.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibration import CalibrationModel, calibrated_probability
from .clustering import ClusterAssignment
from .errors import DataError
from .ingest import BinKey
from .schema import AttributeSchema, CityTable, PersonRecord

Z_95 = 1.96
DEFAULT_MIN_BIN = 50
DEFAULT_MIN_PHOTOS = 1000


@dataclass(frozen=True)
class TrendSeries:
    attribute: str
    class_label: str
    region: str
    weeks: np.ndarray       # (n,), int
    means: np.ndarray       # (n,), in [0, 1]
    ci_low: np.ndarray
    ci_high: np.ndarray
    counts: np.ndarray      # (n,), int

    def as_mapping(self) -> dict[int, float]:
        return {int(w): float(m) for w, m in zip(self.weeks, self.means)}


def weekly_series(
    records: Sequence[PersonRecord],
    bins: Sequence[BinKey],
    attribute: str,
    class_label: str,
    model: CalibrationModel,
    schema: AttributeSchema,
    *,
    city: str | None = None,
    country: str | None = None,
    min_n: int = DEFAULT_MIN_BIN,
) -> TrendSeries:
    """Per-week mean calibrated probability with a normal-approximation 95% CI.

    Weeks with fewer than ``min_n`` scored records are omitted.
    """
    if not model.has(attribute, class_label):
        raise DataError(f"weekly_series: model has no calibrator for ({attribute}, {class_label})")
    by_week: dict[int, list[float]] = defaultdict(list)
    for record, key in zip(records, bins):
        if city is not None and key.city != city:
            continue
        if country is not None and record.country != country:
            continue
        p = calibrated_probability(record, attribute, class_label, model, schema)
        if p is None:
            continue
        by_week[key.week_index].append(p)
    if not by_week:
        raise DataError("weekly_series: empty selection after filtering")

    weeks, means, lows, highs, counts = [], [], [], [], []
    for week in sorted(by_week):
        vals = np.asarray(by_week[week])
        n = len(vals)
        if n < min_n:
            continue
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if n > 1 else 0.0
        half = Z_95 * sd / math.sqrt(n)
        weeks.append(week)
        means.append(mean)
        lows.append(max(0.0, mean - half))
        highs.append(min(1.0, mean + half))
        counts.append(n)
    region = f"city={city}" if city else (f"country={country}" if country else "all")
    return TrendSeries(
        attribute=attribute, class_label=class_label, region=region,
        weeks=np.asarray(weeks, dtype=np.int64), means=np.asarray(means),
        ci_low=np.asarray(lows), ci_high=np.asarray(highs),
        counts=np.asarray(counts, dtype=np.int64),
    )


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson r; NaN when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if denom == 0.0:
        return float("nan")
    return float(np.dot(xc, yc) / denom)


@dataclass(frozen=True)
class CityCorrelation:
    cities: tuple[str, ...]   # ordered by latitude, descending
    matrix: np.ndarray        # (n, n); NaN marks insufficient overlap
    min_overlap: int


def city_correlation(
    series_by_city: Mapping[str, TrendSeries],
    table: CityTable,
    *,
    min_overlap: int = 3,
) -> CityCorrelation:
    """Pairwise Pearson correlation of weekly means over overlapping weeks."""
    if len(series_by_city) < 2:
        raise DataError("city_correlation: need at least 2 cities")
    cities = sorted(series_by_city.keys(), key=lambda c: -table.latitude(c))
    maps = {c: series_by_city[c].as_mapping() for c in cities}
    n = len(cities)
    matrix = np.full((n, n), np.nan)
    any_pair = False
    for i in range(n):
        matrix[i, i] = 1.0
        for j in range(i + 1, n):
            common = sorted(set(maps[cities[i]]) & set(maps[cities[j]]))
            if len(common) < min_overlap:
                continue
            a = np.array([maps[cities[i]][w] for w in common])
            b = np.array([maps[cities[j]][w] for w in common])
            r = pearson(a, b)
            matrix[i, j] = matrix[j, i] = r
            if not math.isnan(r):
                any_pair = True
    if not any_pair:
        raise DataError(f"city_correlation: no city pair shares {min_overlap} weeks")
    return CityCorrelation(cities=tuple(cities), matrix=matrix, min_overlap=min_overlap)


def read_external_series(path) -> dict[int, float]:
    """Parse a (week, value) tab- or whitespace-separated external series file."""
    out: dict[int, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace("\t", " ").split()
            if len(parts) < 2:
                raise DataError(f"external series line {lineno}: expected 'week value'")
            out[int(parts[0])] = float(parts[1])
    return out


def series_correlation(series: TrendSeries, external: Mapping[int, float],
                       *, min_overlap: int = 3) -> float:
    """Pearson r between a trend series and an external weekly series."""
    own = series.as_mapping()
    common = sorted(set(own) & set(external))
    if len(common) < min_overlap:
        raise DataError(f"series_correlation: only {len(common)} overlapping weeks")
    a = np.array([own[w] for w in common])
    b = np.array([external[w] for w in common])
    return pearson(a, b)


def country_aggregate(
    records: Sequence[PersonRecord],
    attribute: str,
    class_label: str,
    model: CalibrationModel,
    schema: AttributeSchema,
    *,
    min_photos: int = DEFAULT_MIN_PHOTOS,
) -> tuple[dict[str, tuple[float, int]], dict[str, int]]:
    """Per-country calibrated mean; countries under the photo floor listed separately."""
    sums: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    saw_country = False
    for record in records:
        if record.country is None:
            continue
        saw_country = True
        p = calibrated_probability(record, attribute, class_label, model, schema)
        if p is None:
            continue
        sums[record.country] += p
        counts[record.country] += 1
    if not saw_country:
        raise DataError("country_aggregate: no records carry country codes")
    included = {
        c: (sums[c] / counts[c], counts[c])
        for c in sorted(counts)
        if counts[c] >= min_photos
    }
    excluded = {c: counts[c] for c in sorted(counts) if counts[c] < min_photos}
    return included, excluded


def entropy(counts) -> float:
    """Shannon entropy (natural log) of a count histogram; 0*ln0 = 0."""
    arr = np.asarray(list(counts) if not isinstance(counts, np.ndarray) else counts,
                     dtype=np.float64)
    if np.any(arr < 0):
        raise DataError("entropy: negative counts")
    total = float(arr.sum())
    if total <= 0:
        raise DataError("entropy: all-zero histogram")
    p = arr[arr > 0] / total
    return float(-(p * np.log(p)).sum())


@dataclass(frozen=True)
class ClusterHistogram:
    cluster_id: int
    cells: tuple            # cell keys, sorted
    counts: np.ndarray
    total: int


@dataclass(frozen=True)
class ClusterRanking:
    mode: str               # "cities" | "city-month"
    order: str              # "asc" | "desc"
    entries: tuple[tuple[int, float], ...]   # (cluster_id, score)
    histograms: dict        # cluster_id -> ClusterHistogram


def cluster_histograms(
    assignments: Sequence[ClusterAssignment],
    bins: Mapping[str, BinKey],
    mode: str = "cities",
) -> dict[int, ClusterHistogram]:
    """Per-cluster occurrence counts over cities or (city, month) cells.

    Assignments whose record has no city are excluded.
    """
    if mode not in ("cities", "city-month"):
        raise DataError(f"cluster_histograms: unknown mode {mode!r}")
    cells: dict[int, Counter] = defaultdict(Counter)
    for a in assignments:
        key = bins.get(a.record_id)
        if key is None or key.city is None:
            continue
        cell = key.city if mode == "cities" else (key.city, key.month_index)
        cells[a.cluster_id][cell] += 1
    out = {}
    for cid in sorted(cells):
        counter = cells[cid]
        keys = sorted(counter.keys())
        counts = np.array([counter[k] for k in keys], dtype=np.int64)
        out[cid] = ClusterHistogram(cluster_id=cid, cells=tuple(keys),
                                    counts=counts, total=int(counts.sum()))
    return out


def rank_clusters(
    assignments: Sequence[ClusterAssignment],
    bins: Mapping[str, BinKey],
    mode: str = "cities",
    order: str = "asc",
) -> ClusterRanking:
    """Clusters ordered by occurrence entropy (ascending = most distinctive first)."""
    if order not in ("asc", "desc"):
        raise DataError(f"rank_clusters: unknown order {order!r}")
    histograms = cluster_histograms(assignments, bins, mode)
    if not histograms:
        raise DataError("rank_clusters: no assigned records with a city")
    scored = [(cid, entropy(h.counts)) for cid, h in histograms.items()]
    reverse = order == "desc"
    scored.sort(key=lambda cs: (-cs[1], -cs[0]) if reverse else (cs[1], cs[0]))
    return ClusterRanking(mode=mode, order=order, entries=tuple(scored),
                          histograms=histograms)


def distinctiveness(
    assignments: Sequence[ClusterAssignment],
    bins: Mapping[str, BinKey],
    city: str,
    alpha: float = 1.0,
) -> tuple[tuple[int, float], ...]:
    """Per-cluster lift of within-city share over global share, with additive
    smoothing; descending lift (ties by cluster id)."""
    if alpha <= 0:
        raise DataError("distinctiveness: smoothing alpha must be positive")
    city_counts: Counter = Counter()
    global_counts: Counter = Counter()
    for a in assignments:
        key = bins.get(a.record_id)
        if key is None or key.city is None:
            continue
        global_counts[a.cluster_id] += 1
        if key.city == city:
            city_counts[a.cluster_id] += 1
    n_city = sum(city_counts.values())
    n_total = sum(global_counts.values())
    if n_city == 0:
        raise DataError(f"distinctiveness: unknown city {city!r} (no assigned records)")
    k = len(global_counts)
    lifts = []
    for cid in sorted(global_counts):
        share_city = (city_counts.get(cid, 0) + alpha) / (n_city + alpha * k)
        share_global = (global_counts[cid] + alpha) / (n_total + alpha * k)
        lifts.append((cid, share_city / share_global))
    lifts.sort(key=lambda cl: (-cl[1], cl[0]))
    return tuple(lifts)
