"""Patient-level repository of historical health data items.

Backs on-demand retrieval during a triage session. Read-only after load;
queries are pure functions, so runs stay auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import CorruptDatasetError


class ItemKind(str, Enum):
    LAB_RESULT = "lab_result"
    MEDICATION = "medication"
    ALLERGY = "allergy"
    IMMUNIZATION = "immunization"
    NOTE = "note"
    VITAL = "vital"


@dataclass(frozen=True)
class HealthDataItem:
    patient_id: str
    item_kind: ItemKind
    name: str
    value: str
    observed_date: str  # ISO date; string comparison == chronological
    source_record_id: str
    unit: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "HealthDataItem":
        return cls(
            patient_id=str(data["patient_id"]),
            item_kind=ItemKind(data["item_kind"]),
            name=str(data["name"]),
            value=str(data["value"]),
            observed_date=str(data["observed_date"]),
            source_record_id=str(data["source_record_id"]),
            unit=data.get("unit"),
        )

    def to_dict(self) -> dict:
        out = {
            "patient_id": self.patient_id,
            "item_kind": self.item_kind.value,
            "name": self.name,
            "value": self.value,
            "observed_date": self.observed_date,
            "source_record_id": self.source_record_id,
        }
        if self.unit is not None:
            out["unit"] = self.unit
        return out


@dataclass(frozen=True)
class PlanRequest:
    item_kind: ItemKind
    name_pattern: str
    recency: str = "most_recent"  # most_recent | all | since:<date>

    @classmethod
    def from_dict(cls, data: dict) -> "PlanRequest":
        return cls(
            item_kind=ItemKind(data["item_kind"]),
            name_pattern=str(data.get("name_pattern", "")),
            recency=str(data.get("recency", "most_recent")),
        )

    def to_dict(self) -> dict:
        return {
            "item_kind": self.item_kind.value,
            "name_pattern": self.name_pattern,
            "recency": self.recency,
        }


@dataclass
class DataPlan:
    requested: list[PlanRequest] = field(default_factory=list)
    rationale: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "DataPlan":
        return cls(
            requested=[PlanRequest.from_dict(r) for r in data.get("requested", [])],
            rationale=str(data.get("rationale", "")),
        )

    def to_dict(self) -> dict:
        return {
            "requested": [r.to_dict() for r in self.requested],
            "rationale": self.rationale,
        }


class EhrStore:
    """Items indexed by patient; duplicates retained (history may repeat)."""

    def __init__(self, items: list[HealthDataItem]):
        self._by_patient: dict[str, list[HealthDataItem]] = {}
        for item in items:
            self._by_patient.setdefault(item.patient_id, []).append(item)
        self.size = len(items)

    def items_for(self, patient_id: str) -> list[HealthDataItem]:
        return list(self._by_patient.get(patient_id, []))


def load_store(path) -> EhrStore:
    items: list[HealthDataItem] = []
    bad = 0
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            total += 1
            try:
                items.append(HealthDataItem.from_dict(json.loads(line)))
            except (ValueError, TypeError, KeyError):
                bad += 1
    if total and bad > total / 2:
        raise CorruptDatasetError(f"{bad}/{total} lines malformed in {path}")
    return EhrStore(items)


def _recency_since(recency: str) -> Optional[str]:
    if recency.startswith("since:"):
        return recency.split(":", 1)[1]
    return None


def query(store: EhrStore, patient_id: str, plan: DataPlan,
          as_of: str) -> list[HealthDataItem]:
    """Resolve a data plan against one patient's history as of a date.

    Matching is case-insensitive substring on item name; items observed
    after as_of never appear. most_recent keeps one item per (kind, name),
    ties broken by greatest source_record_id.
    """
    results: list[HealthDataItem] = []
    candidates = store.items_for(patient_id)
    for request in plan.requested:
        pattern = request.name_pattern.lower()
        matched = [
            item for item in candidates
            if item.item_kind is request.item_kind
            and pattern in item.name.lower()
            and item.observed_date <= as_of
        ]
        since = _recency_since(request.recency)
        if since is not None:
            matched = [i for i in matched if i.observed_date >= since]
        elif request.recency == "most_recent":
            latest: dict[tuple[ItemKind, str], HealthDataItem] = {}
            for item in matched:
                key = (item.item_kind, item.name.lower())
                prev = latest.get(key)
                if prev is None or (item.observed_date, item.source_record_id) > (
                        prev.observed_date, prev.source_record_id):
                    latest[key] = item
            matched = list(latest.values())
        results.extend(matched)

    seen = set()
    unique = []
    for item in results:
        key = (item.item_kind, item.name, item.observed_date,
               item.source_record_id, item.value)
        if key not in seen:
            seen.add(key)
            unique.append(item)
    unique.sort(key=lambda i: (i.observed_date, i.source_record_id,
                               i.item_kind.value, i.name), reverse=True)
    return unique
