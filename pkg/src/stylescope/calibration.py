"""Score calibration: weighted isotonic regression (PAVA), reliability curves,
calibrated prevalence estimates, and a Platt-scaling baseline.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, NumericError
from .schema import AttributeSchema, LabeledExample, PersonRecord

RENORM_TOL = 1e-12


def pava(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares non-decreasing fit via pool-adjacent-violators.

    Returns the fitted value for each input position (inputs already ordered
    by score).  O(n) stack-based merging.
    """
    n = len(y)
    if n == 0:
        raise DataError("pava: empty input")
    # parallel stacks: block mean, block weight, block length
    means = np.empty(n)
    weights = np.empty(n)
    sizes = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        means[top] = y[i]
        weights[top] = w[i]
        sizes[top] = 1
        while top > 0 and means[top - 1] > means[top]:
            total = weights[top - 1] + weights[top]
            means[top - 1] = (means[top - 1] * weights[top - 1] + means[top] * weights[top]) / total
            weights[top - 1] = total
            sizes[top - 1] += sizes[top]
            top -= 1
    return np.repeat(means[:top + 1], sizes[:top + 1])


@dataclass(frozen=True)
class IsotonicFunction:
    """Monotone step function as breakpoints (score_i, calibrated_i).

    Prediction interpolates linearly between breakpoints and clamps to the
    end values outside the fitted score range.
    """

    scores: np.ndarray      # strictly increasing
    values: np.ndarray      # non-decreasing, in [0, 1]

    def __post_init__(self):
        if len(self.scores) != len(self.values) or len(self.scores) == 0:
            raise DataError("isotonic function: breakpoint arrays empty or mismatched")
        if np.any(np.diff(self.scores) <= 0):
            raise DataError("isotonic function: breakpoint scores must be strictly increasing")
        if np.any(np.diff(self.values) < 0):
            raise DataError("isotonic function: values must be non-decreasing")

    def predict(self, s):
        return np.interp(np.asarray(s, dtype=np.float64), self.scores, self.values)


@dataclass(frozen=True)
class PlattFunction:
    """Logistic map p = sigmoid(a*s + b)."""

    a: float
    b: float

    def predict(self, s):
        z = self.a * np.asarray(s, dtype=np.float64) + self.b
        return 1.0 / (1.0 + np.exp(-z))


def fit_isotonic(scores, outcomes, weights=None) -> IsotonicFunction:
    """Fit the weighted isotonic (non-decreasing) regression of outcomes on scores.

    Points sharing a score are merged (weighted mean outcome) before pooling
    so that breakpoint scores stay strictly increasing.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=np.float64)
    if s.shape != y.shape or s.shape != w.shape:
        raise DataError("fit_isotonic: scores, outcomes, weights must share a shape")
    if len(s) < 2:
        raise DataError("fit_isotonic: need at least 2 pairs")
    if np.any(w <= 0):
        raise DataError("fit_isotonic: weights must be positive")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
        raise NumericError("fit_isotonic: non-finite input")

    order = np.argsort(s, kind="stable")
    s, y, w = s[order], y[order], w[order]

    # merge duplicate scores
    uniq, start = np.unique(s, return_index=True)
    if len(uniq) != len(s):
        sums = np.add.reduceat(y * w, start)
        wsum = np.add.reduceat(w, start)
        s, y, w = uniq, sums / wsum, wsum

    if len(s) == 1:
        return IsotonicFunction(scores=s, values=np.clip(y, 0.0, 1.0))

    fitted = pava(y, w)
    # one breakpoint per block, at the block's weighted mean score
    block_start = np.concatenate(([0], np.nonzero(np.diff(fitted) != 0)[0] + 1))
    bp_scores = np.add.reduceat(s * w, block_start) / np.add.reduceat(w, block_start)
    bp_values = fitted[block_start]
    return IsotonicFunction(scores=bp_scores, values=np.clip(bp_values, 0.0, 1.0))


def fit_platt(scores, outcomes, max_iter: int = 100, tol: float = 1e-10) -> PlattFunction:
    """Two-parameter logistic calibration with Platt's smoothed targets, by Newton."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    n_pos = float(y.sum())
    n_neg = float(len(y) - n_pos)
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, math.log((n_pos + 1.0) / (n_neg + 1.0))
    for _ in range(max_iter):
        z = a * s + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = p - t
        grad = np.array([np.dot(g, s), g.sum()])
        r = p * (1.0 - p) + 1e-12
        h11 = np.dot(r, s * s)
        h12 = np.dot(r, s)
        h22 = r.sum()
        det = h11 * h22 - h12 * h12
        if det <= 0:
            break
        da = (h22 * grad[0] - h12 * grad[1]) / det
        db = (h11 * grad[1] - h12 * grad[0]) / det
        a, b = a - da, b - db
        if abs(da) < tol and abs(db) < tol:
            break
    return PlattFunction(a=a, b=b)


@dataclass(frozen=True)
class CalibrationModel:
    """One monotone calibrator per (attribute, class), one-vs-rest."""

    method: str
    functions: Mapping[tuple[str, str], IsotonicFunction | PlattFunction]

    def has(self, attribute: str, class_label: str) -> bool:
        return (attribute, class_label) in self.functions

    def attributes(self) -> tuple[str, ...]:
        return tuple(sorted({a for a, _ in self.functions}))

    def calibrate_vector(self, attribute: str, raw: np.ndarray,
                         classes: Sequence[str]) -> np.ndarray:
        cal = np.empty(len(classes))
        for j, cls in enumerate(classes):
            fn = self.functions.get((attribute, cls))
            if fn is None:
                raise DataError(f"calibration model: no calibrator for ({attribute}, {cls})")
            cal[j] = float(fn.predict(raw[j]))
        total = cal.sum()
        if total < RENORM_TOL:
            return np.full(len(classes), 1.0 / len(classes))
        return cal / total


def _constant_function(value: float) -> IsotonicFunction:
    v = float(np.clip(value, 0.0, 1.0))
    return IsotonicFunction(scores=np.array([0.0, 1.0]), values=np.array([v, v]))


def fit_calibration(
    examples: Sequence[LabeledExample],
    scores_by_record: Mapping[str, Mapping[str, np.ndarray]],
    schema: AttributeSchema,
    method: str = "isotonic",
) -> CalibrationModel:
    """Fit one-vs-rest calibrators on labeled validation examples.

    A class with no positives (or no negatives) gets the constant base-rate
    function, with a warning.
    """
    if method not in ("isotonic", "platt"):
        raise DataError(f"unknown calibration method {method!r}")
    by_attr: dict[str, list[LabeledExample]] = {}
    for ex in examples:
        by_attr.setdefault(ex.attribute_name, []).append(ex)

    functions: dict[tuple[str, str], IsotonicFunction | PlattFunction] = {}
    for attribute, attr_examples in sorted(by_attr.items()):
        classes = schema.classes(attribute)
        rows = []
        labels = []
        for ex in attr_examples:
            rec_scores = scores_by_record.get(ex.record_id)
            if rec_scores is None or attribute not in rec_scores:
                continue
            rows.append(np.asarray(rec_scores[attribute], dtype=np.float64))
            labels.append(ex.class_label)
        if not rows:
            raise DataError(f"fit_calibration: no scored examples for attribute {attribute!r}")
        score_mat = np.vstack(rows)
        label_arr = np.array(labels)
        for j, cls in enumerate(classes):
            outcome = (label_arr == cls).astype(np.float64)
            base = float(outcome.mean())
            if outcome.sum() == 0 or outcome.sum() == len(outcome):
                warnings.warn(
                    f"calibration: ({attribute}, {cls}) is one-sided in the validation data; "
                    f"using constant base rate {base:.4f}",
                    stacklevel=2,
                )
                functions[(attribute, cls)] = _constant_function(base)
                continue
            if method == "platt":
                functions[(attribute, cls)] = fit_platt(score_mat[:, j], outcome)
            else:
                functions[(attribute, cls)] = fit_isotonic(score_mat[:, j], outcome)
    return CalibrationModel(method=method, functions=functions)


@dataclass(frozen=True)
class ReliabilityCurve:
    bin_edges: np.ndarray
    mean_predicted: np.ndarray
    fraction_positive: np.ndarray
    counts: np.ndarray


def reliability(scores, outcomes, bins: int = 10) -> ReliabilityCurve:
    """Equal-width reliability bins over [0, 1]; empty bins omitted."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if np.any(s < 0) or np.any(s > 1):
        raise DataError("reliability: scores must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum((s * bins).astype(np.int64), bins - 1)
    mean_pred, frac_pos, counts = [], [], []
    for b in range(bins):
        mask = idx == b
        n = int(mask.sum())
        if n == 0:
            continue
        mean_pred.append(float(s[mask].mean()))
        frac_pos.append(float(y[mask].mean()))
        counts.append(n)
    return ReliabilityCurve(
        bin_edges=edges,
        mean_predicted=np.array(mean_pred),
        fraction_positive=np.array(frac_pos),
        counts=np.array(counts, dtype=np.int64),
    )


def calibrated_probability(record: PersonRecord, attribute: str, class_label: str,
                           model: CalibrationModel, schema: AttributeSchema) -> float | None:
    """Calibrated, renormalized probability of one class for one record (None if unscored)."""
    raw = record.scores.get(attribute)
    if raw is None:
        return None
    classes = schema.classes(attribute)
    vec = model.calibrate_vector(attribute, raw, classes)
    return float(vec[schema.class_index(attribute, class_label)])


def calibrated_mean(records: Iterable[PersonRecord], attribute: str, class_label: str,
                    model: CalibrationModel, schema: AttributeSchema) -> float:
    """Mean calibrated probability over records carrying the attribute."""
    total = 0.0
    n = 0
    for record in records:
        p = calibrated_probability(record, attribute, class_label, model, schema)
        if p is None:
            continue
        total += p
        n += 1
    if n == 0:
        raise DataError(f"calibrated_mean: no records carry attribute {attribute!r}")
    return total / n


# ---------------------------------------------------------------------------
# Model file format: structured text, breakpoints per class.


def serialize_model(model: CalibrationModel) -> str:
    lines = ["# stylescope calibration model v1", f"method = {model.method}"]
    for (attribute, cls) in sorted(model.functions.keys()):
        fn = model.functions[(attribute, cls)]
        lines.append(f"[{attribute} / {cls}]")
        if isinstance(fn, PlattFunction):
            lines.append(f"platt {fn.a!r} {fn.b!r}")
        else:
            for s, v in zip(fn.scores, fn.values):
                lines.append(f"{float(s)!r} {float(v)!r}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> CalibrationModel:
    method = "isotonic"
    functions: dict[tuple[str, str], IsotonicFunction | PlattFunction] = {}
    key: tuple[str, str] | None = None
    xs: list[float] = []
    ys: list[float] = []

    def flush():
        if key is not None and xs:
            functions[key] = IsotonicFunction(np.array(xs), np.array(ys))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("method"):
            method = line.partition("=")[2].strip()
            continue
        if line.startswith("[") and line.endswith("]"):
            flush()
            inner = line[1:-1]
            attribute, _, cls = inner.partition(" / ")
            if not attribute or not cls:
                raise DataError(f"model line {lineno}: malformed section header")
            key = (attribute.strip(), cls.strip())
            xs, ys = [], []
            continue
        if key is None:
            raise DataError(f"model line {lineno}: data before any section header")
        parts = line.split()
        if parts[0] == "platt":
            functions[key] = PlattFunction(a=float(parts[1]), b=float(parts[2]))
            key = None
            xs, ys = [], []
            continue
        if len(parts) != 2:
            raise DataError(f"model line {lineno}: expected 'score value'")
        xs.append(float(parts[0]))
        ys.append(float(parts[1]))
    flush()
    return CalibrationModel(method=method, functions=functions)


def save_model(model: CalibrationModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> CalibrationModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
