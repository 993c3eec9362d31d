"""Crowd-vote aggregation: sentinel-based worker gating and 3-of-5 consensus."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DataError
from .schema import AttributeSchema, LabeledExample

FAULTY_LABEL = "faulty detection"

BAN_MIN_FAILURES = 5
BAN_RATE = 0.20

DEFAULT_QUORUM = 5
DEFAULT_THRESHOLD = 3


@dataclass(frozen=True)
class Vote:
    worker_id: str
    record_id: str
    attribute_name: str
    class_label: str
    is_sentinel: bool = False
    sentinel_truth: str | None = None
    seq: int = 0  # submission order; file line number when read from disk

    def __post_init__(self):
        if self.is_sentinel != (self.sentinel_truth is not None):
            raise DataError("vote: sentinel_truth must be present iff is_sentinel")


@dataclass(frozen=True)
class WorkerStats:
    worker_id: str
    sentinels_seen: int
    sentinels_failed: int

    def __post_init__(self):
        if not (0 <= self.sentinels_failed <= self.sentinels_seen):
            raise DataError("worker stats: failed count outside [0, seen]")


@dataclass(frozen=True)
class ConsensusResult:
    record_id: str
    attribute_name: str
    accepted: bool
    label: str | None = None
    reason: str | None = None


def gate_worker(stats: WorkerStats) -> bool:
    """True when the worker is allowed; banned needs >=5 failures AND rate strictly >20%."""
    if stats.sentinels_seen == 0:
        return True
    rate = stats.sentinels_failed / stats.sentinels_seen
    banned = stats.sentinels_failed >= BAN_MIN_FAILURES and rate > BAN_RATE
    return not banned


def worker_stats(votes: Iterable[Vote]) -> dict[str, WorkerStats]:
    seen: dict[str, int] = defaultdict(int)
    failed: dict[str, int] = defaultdict(int)
    for vote in votes:
        if not vote.is_sentinel:
            continue
        seen[vote.worker_id] += 1
        if vote.class_label != vote.sentinel_truth:
            failed[vote.worker_id] += 1
    return {
        worker: WorkerStats(worker, seen[worker], failed[worker])
        for worker in seen
    }


def consense(votes: Sequence[Vote], quorum: int = DEFAULT_QUORUM,
             threshold: int = DEFAULT_THRESHOLD) -> ConsensusResult:
    """Accept a label when >= threshold of the earliest `quorum` votes agree on it.

    The "faulty detection" flag counts as a label for agreement purposes.
    """
    if not votes:
        raise DataError("consense: no votes given")
    key = (votes[0].record_id, votes[0].attribute_name)
    for vote in votes:
        if (vote.record_id, vote.attribute_name) != key:
            raise DataError("consense: votes span multiple (record, attribute) tasks")
        if vote.is_sentinel:
            raise DataError("consense: sentinel votes are excluded from consensus")
    if len(votes) < quorum:
        return ConsensusResult(key[0], key[1], accepted=False, reason="under-quorum")
    window = sorted(votes, key=lambda v: v.seq)[:quorum]
    counts: dict[str, int] = defaultdict(int)
    for vote in window:
        counts[vote.class_label] += 1
    # Ties impossible at 3-of-5; break by label for other quorum settings.
    label, top = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if top >= threshold:
        return ConsensusResult(key[0], key[1], accepted=True, label=label)
    return ConsensusResult(key[0], key[1], accepted=False, reason="no-agreement")


@dataclass(frozen=True)
class AuditReport:
    banned_workers: tuple[str, ...]
    per_attribute: dict
    totals: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "banned_workers": list(self.banned_workers),
                "per_attribute": self.per_attribute,
                "totals": self.totals,
            },
            indent=2, sort_keys=True, ensure_ascii=False,
        ) + "\n"


def build_dataset(votes: Sequence[Vote], schema: AttributeSchema | None = None,
                  quorum: int = DEFAULT_QUORUM, threshold: int = DEFAULT_THRESHOLD,
                  ) -> tuple[list[LabeledExample], AuditReport]:
    """Gate workers on sentinels, drop their votes retroactively, then run consensus."""
    stats = worker_stats(votes)
    banned = tuple(sorted(w for w, s in stats.items() if not gate_worker(s)))
    banned_set = set(banned)

    tasks: dict[tuple[str, str], list[Vote]] = defaultdict(list)
    for vote in votes:
        if vote.is_sentinel or vote.worker_id in banned_set:
            continue
        tasks[(vote.record_id, vote.attribute_name)].append(vote)

    examples: list[LabeledExample] = []
    per_attribute: dict[str, dict[str, int]] = defaultdict(
        lambda: {"accepted": 0, "rejected": 0, "under_quorum": 0, "faulty": 0}
    )
    for key in sorted(tasks.keys()):
        result = consense(tasks[key], quorum=quorum, threshold=threshold)
        bucket = per_attribute[key[1]]
        if result.accepted:
            if result.label == FAULTY_LABEL:
                bucket["faulty"] += 1
            else:
                bucket["accepted"] += 1
                example = LabeledExample(result.record_id, result.attribute_name, result.label)
                if schema is not None:
                    example.check(schema)
                examples.append(example)
        elif result.reason == "under-quorum":
            bucket["under_quorum"] += 1
        else:
            bucket["rejected"] += 1

    totals = {"accepted": 0, "rejected": 0, "under_quorum": 0, "faulty": 0}
    for bucket in per_attribute.values():
        for k in totals:
            totals[k] += bucket[k]
    report = AuditReport(banned, dict(sorted(per_attribute.items())), totals)
    return examples, report


# ---------------------------------------------------------------------------
# File formats: votes and labels are tab-separated, one row per line.


def write_votes(votes: Iterable[Vote], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# worker_id\trecord_id\tattribute\tlabel\tis_sentinel\tsentinel_truth\n")
        for vote in votes:
            truth = vote.sentinel_truth if vote.sentinel_truth is not None else ""
            fh.write(
                f"{vote.worker_id}\t{vote.record_id}\t{vote.attribute_name}\t"
                f"{vote.class_label}\t{int(vote.is_sentinel)}\t{truth}\n"
            )


def read_votes(path) -> list[Vote]:
    votes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise DataError(f"votes line {lineno}: expected 6 tab-separated fields")
            worker, record, attribute, label, sentinel, truth = parts
            votes.append(Vote(
                worker_id=worker, record_id=record, attribute_name=attribute,
                class_label=label, is_sentinel=bool(int(sentinel)),
                sentinel_truth=truth if truth else None, seq=lineno,
            ))
    return votes


def write_labels(examples: Iterable[LabeledExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# record_id\tattribute\tclass_label\n")
        for ex in examples:
            fh.write(f"{ex.record_id}\t{ex.attribute_name}\t{ex.class_label}\n")


def read_labels(path, schema: AttributeSchema | None = None) -> list[LabeledExample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"labels line {lineno}: expected 3 tab-separated fields")
            example = LabeledExample(*parts)
            if schema is not None:
                example.check(schema)
            out.append(example)
    return out
