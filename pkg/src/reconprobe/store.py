"""Metric observations and the append-only run store.

One observation = (scope, variant, metric, value) where scope is a record id
or None for per-variant aggregates. The JSON-lines interchange schema is
{record_id, variant, metric, value}; json round-trips floats exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MetricRecord:
    record_id: str | None  # None marks a per-variant aggregate
    variant: str
    metric: str
    value: float

    @property
    def key(self) -> tuple:
        return (self.record_id, self.variant, self.metric)

    def to_json(self) -> str:
        return json.dumps(
            {
                "record_id": self.record_id,
                "variant": self.variant,
                "metric": self.metric,
                "value": self.value,
            },
            sort_keys=True,
        )


def parse_metric_line(line: str, lineno: int) -> MetricRecord:
    try:
        obj = json.loads(line)
        variant = obj["variant"]
        metric = obj["metric"]
        value = float(obj["value"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed line {lineno}: {exc}") from exc
    if not math.isfinite(value):
        raise ValueError(f"malformed line {lineno}: non-finite value {obj['value']!r}")
    record_id = obj.get("record_id")
    return MetricRecord(
        record_id=None if record_id is None else str(record_id),
        variant=str(variant),
        metric=str(metric),
        value=value,
    )


class MetricStore:
    """Keyed store with idempotent merge; conflicting duplicates are errors."""

    def __init__(self):
        self._data: dict[tuple, MetricRecord] = {}

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data.values())

    def add(self, rec: MetricRecord) -> None:
        existing = self._data.get(rec.key)
        if existing is not None and existing.value != rec.value:
            raise ValueError(
                f"conflicting duplicate for {rec.key}: {existing.value} vs {rec.value}"
            )
        self._data[rec.key] = rec

    def merge(self, records) -> None:
        for rec in records:
            self.add(rec)

    def get(self, record_id: str | None, variant: str, metric: str) -> float | None:
        rec = self._data.get((record_id, variant, metric))
        return None if rec is None else rec.value

    def records(self) -> list[MetricRecord]:
        return sorted(
            self._data.values(),
            key=lambda r: (r.record_id is None, r.record_id or "", r.variant, r.metric),
        )

    def values_for(self, variant: str, metric: str) -> list[tuple[str, float]]:
        """Per-record (id, value) pairs for one variant/metric, id-sorted."""
        out = [
            (r.record_id, r.value)
            for r in self._data.values()
            if r.variant == variant and r.metric == metric and r.record_id is not None
        ]
        return sorted(out)

    def variants(self) -> list[str]:
        return sorted({r.variant for r in self._data.values()})

    def metrics(self) -> list[str]:
        return sorted({r.metric for r in self._data.values()})


def write_metrics_jsonl(records, path) -> None:
    recs = sorted(
        records,
        key=lambda r: (r.record_id is None, r.record_id or "", r.variant, r.metric),
    )
    with open(path, "w", encoding="utf-8") as fh:
        for rec in recs:
            fh.write(rec.to_json() + "\n")


def read_metrics_jsonl(path) -> list[MetricRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                out.append(parse_metric_line(line, lineno))
    return out
