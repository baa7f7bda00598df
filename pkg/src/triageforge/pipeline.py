"""Encounter ingestion, classification, balancing, and vignette building.

Raw encounter records arrive as JSONL; a judge model sorts them by
encounter type and symptom category; the retained initial encounters are
balanced per category and turned into deterministic patient vignettes.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import (
    ClassificationFailedError,
    CorruptDatasetError,
    EmptyDatasetError,
    PreconditionError,
)
from .gateway import ChatMessage, ChatRequest, Gateway, Role


class EncounterCategory(str, Enum):
    INITIAL_ENCOUNTER = "InitialEncounter"
    FOLLOW_UP_VISIT = "FollowUpVisit"
    ROUTINE_CHECKUP = "RoutineCheckup"
    UNKNOWN = "Unknown"


class SymptomCategory(str, Enum):
    PAIN_RELATED = "PainRelated"
    RESPIRATORY = "Respiratory"
    NEUROLOGICAL = "Neurological"
    GASTROINTESTINAL = "Gastrointestinal"
    DERMATOLOGICAL = "Dermatological"
    CARDIOVASCULAR = "Cardiovascular"
    GENITOURINARY = "Genitourinary"
    MUSCULOSKELETAL = "Musculoskeletal"
    CONSTITUTIONAL = "Constitutional"
    PSYCHOLOGICAL = "Psychological"


# Optional narrative sections, in the fixed order they appear in vignettes.
HISTORY_SECTIONS = (
    "review_of_systems",
    "past_medical_history",
    "current_medications",
    "allergies",
    "immunizations",
    "social_history",
    "family_history",
)

REQUIRED_FIELDS = (
    "record_id", "patient_id", "encounter_date", "age", "gender",
    "chief_complaint", "history_of_present_illness",
)


@dataclass
class EncounterRecord:
    record_id: str
    patient_id: str
    encounter_date: str
    age: int
    gender: str
    chief_complaint: str
    history_of_present_illness: str
    review_of_systems: Optional[str] = None
    past_medical_history: Optional[str] = None
    current_medications: Optional[str] = None
    allergies: Optional[str] = None
    immunizations: Optional[str] = None
    social_history: Optional[str] = None
    family_history: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "EncounterRecord":
        # chief_complaint / HPI may legitimately be empty strings; only a
        # truly absent key counts as malformed.
        missing = [f for f in REQUIRED_FIELDS if f not in data or data[f] is None]
        if missing:
            raise ValueError(f"missing fields: {', '.join(missing)}")
        return cls(
            record_id=str(data["record_id"]),
            patient_id=str(data["patient_id"]),
            encounter_date=str(data["encounter_date"]),
            age=int(data["age"]),
            gender=str(data["gender"]),
            chief_complaint=str(data["chief_complaint"]),
            history_of_present_illness=str(data["history_of_present_illness"]),
            **{k: data.get(k) for k in HISTORY_SECTIONS},
        )


@dataclass
class RejectEntry:
    line_number: int
    reason: str


@dataclass
class IngestResult:
    records: list[EncounterRecord]
    rejects: list[RejectEntry]


def ingest(path) -> IngestResult:
    """Read a JSONL file of encounter records, collecting malformed lines."""
    records: list[EncounterRecord] = []
    rejects: list[RejectEntry] = []
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                records.append(EncounterRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                rejects.append(RejectEntry(line_no, str(exc)))
    if total and len(rejects) > total / 2:
        raise CorruptDatasetError(
            f"{len(rejects)}/{total} lines malformed in {path}"
        )
    return IngestResult(records, rejects)


_ENCOUNTER_PROMPT = """\
You classify a clinical encounter record into exactly one category.

Categories:
- InitialEncounter: first visits for symptoms or health concerns that led \
to a new diagnosis or care plan.
- FollowUpVisit: subsequent visits intended to monitor progress, evaluate \
treatment, or check for complications.
- RoutineCheckup: preventive care visits, health maintenance evaluations, \
and chronic condition monitoring, often without the presence of symptoms.
- Unknown: visits that lack sufficient information for classification.

Answer with the category name only."""

_SYMPTOM_PROMPT = """\
You classify a clinical encounter into exactly one symptom category based \
on the chief complaint and history of present illness.

Categories: PainRelated, Respiratory, Neurological, Gastrointestinal, \
Dermatological, Cardiovascular, Genitourinary, Musculoskeletal, \
Constitutional, Psychological.

Constitutional captures nonspecific systemic symptoms, such as chills or \
fever, that do not localize to a particular organ system. Borderline cases \
(e.g. chest pain) must still receive exactly one category.

Answer with the category name only."""


def _record_digest(record: EncounterRecord) -> str:
    return (
        f"chief complaint: {record.chief_complaint}\n"
        f"history of present illness: {record.history_of_present_illness}"
    )


def _parse_enum_answer(answer: str, enum_cls):
    cleaned = answer.strip()
    for member in enum_cls:
        if cleaned.lower() == member.value.lower():
            return member
    # Lenient second pass: unique category name mentioned anywhere.
    hits = [m for m in enum_cls if m.value.lower() in cleaned.lower()]
    if len(hits) == 1:
        return hits[0]
    return None


def classify_encounter(record: EncounterRecord, gateway: Gateway,
                       model_id: str = "judge") -> EncounterCategory:
    if not record.chief_complaint.strip() and not record.history_of_present_illness.strip():
        return EncounterCategory.UNKNOWN
    answer = gateway.complete_chat(ChatRequest(
        model_id=model_id,
        messages=(
            ChatMessage(Role.SYSTEM, _ENCOUNTER_PROMPT),
            ChatMessage(Role.USER, _record_digest(record)),
        ),
        tag="encounter_classifier",
    ))
    parsed = _parse_enum_answer(answer, EncounterCategory)
    return parsed if parsed is not None else EncounterCategory.UNKNOWN


def classify_symptom(record: EncounterRecord, gateway: Gateway,
                     model_id: str = "judge") -> SymptomCategory:
    answer = gateway.complete_chat(ChatRequest(
        model_id=model_id,
        messages=(
            ChatMessage(Role.SYSTEM, _SYMPTOM_PROMPT),
            ChatMessage(Role.USER, _record_digest(record)),
        ),
        tag="symptom_classifier",
    ))
    parsed = _parse_enum_answer(answer, SymptomCategory)
    if parsed is None:
        raise ClassificationFailedError(
            f"unparseable symptom category for {record.record_id}: {answer!r}"
        )
    return parsed


@dataclass
class BalancedDataset:
    selected: dict[SymptomCategory, list[EncounterRecord]]
    manifest: dict

    @property
    def records(self) -> list[EncounterRecord]:
        out = []
        for cat in sorted(self.selected, key=lambda c: c.value):
            out.extend(self.selected[cat])
        return out


def balance_sample(cases: dict[SymptomCategory, list[EncounterRecord]],
                   min_n: int = 44, max_n: int = 68,
                   seed: int = 0) -> BalancedDataset:
    """Uniformly sample up to max_n cases per category, without replacement.

    Categories short of min_n are kept in full and flagged with a warning.
    Deterministic for a given seed regardless of input ordering.
    """
    if not cases:
        raise EmptyDatasetError("no cases to balance")
    if SymptomCategory.PSYCHOLOGICAL in cases:
        raise PreconditionError("Psychological category must be filtered before balancing")
    if min_n > max_n:
        raise PreconditionError("min_n must be <= max_n")

    selected: dict[SymptomCategory, list[EncounterRecord]] = {}
    warnings: list[str] = []
    counts: dict[str, int] = {}
    for cat in sorted(cases, key=lambda c: c.value):
        pool = sorted(cases[cat], key=lambda r: r.record_id)
        rng = random.Random((seed, cat.value).__repr__())
        if len(pool) < min_n:
            warnings.append(
                f"{cat.value}: only {len(pool)} cases available (min {min_n}); kept all"
            )
            chosen = pool
        else:
            chosen = rng.sample(pool, min(len(pool), max_n))
            chosen.sort(key=lambda r: r.record_id)
        selected[cat] = chosen
        counts[cat.value] = len(chosen)

    manifest = {
        "seed": seed,
        "min_n": min_n,
        "max_n": max_n,
        "counts": counts,
        "total": sum(counts.values()),
        "warnings": warnings,
        "filters": ["InitialEncounter only", "Psychological excluded"],
    }
    return BalancedDataset(selected, manifest)


@dataclass
class PatientVignette:
    vignette_id: str
    source_record_id: str
    symptom_category: SymptomCategory
    age: int
    gender: str
    narrative: str
    structured_facts: dict[str, str]
    prior_encounter_note: Optional[str] = None
    # Join keys for the EHR store during simulation.
    patient_id: Optional[str] = None
    encounter_date: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "vignette_id": self.vignette_id,
            "source_record_id": self.source_record_id,
            "symptom_category": self.symptom_category.value,
            "age": self.age,
            "gender": self.gender,
            "narrative": self.narrative,
            "structured_facts": self.structured_facts,
            "prior_encounter_note": self.prior_encounter_note,
            "patient_id": self.patient_id,
            "encounter_date": self.encounter_date,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PatientVignette":
        return cls(
            vignette_id=data["vignette_id"],
            source_record_id=data["source_record_id"],
            symptom_category=SymptomCategory(data["symptom_category"]),
            age=data["age"],
            gender=data["gender"],
            narrative=data["narrative"],
            structured_facts=dict(data["structured_facts"]),
            prior_encounter_note=data.get("prior_encounter_note"),
            patient_id=data.get("patient_id"),
            encounter_date=data.get("encounter_date"),
        )


_SECTION_TITLES = {
    "demographics": "Demographics",
    "chief_complaint": "Chief complaint",
    "history_of_present_illness": "History of present illness",
    "review_of_systems": "Review of systems",
    "past_medical_history": "Past medical history",
    "current_medications": "Current medications",
    "allergies": "Allergies",
    "immunizations": "Immunizations",
    "social_history": "Social history",
    "family_history": "Family history",
}


def build_vignette(record: EncounterRecord,
                   symptom_category: SymptomCategory,
                   prior_note: Optional[str] = None) -> PatientVignette:
    """Assemble a vignette from record fields; template-based, no model call."""
    facts: dict[str, str] = {
        "demographics": f"{record.age}-year-old {record.gender}",
        "chief_complaint": record.chief_complaint,
        "history_of_present_illness": record.history_of_present_illness,
    }
    for section in HISTORY_SECTIONS:
        value = getattr(record, section)
        if value:
            facts[section] = value

    parts = [
        f"{_SECTION_TITLES[name]}: {value}" for name, value in facts.items()
    ]
    narrative = "\n".join(parts)

    return PatientVignette(
        vignette_id=f"vig-{record.record_id}",
        source_record_id=record.record_id,
        symptom_category=symptom_category,
        age=record.age,
        gender=record.gender,
        narrative=narrative,
        structured_facts=facts,
        prior_encounter_note=prior_note,
        patient_id=record.patient_id,
        encounter_date=record.encounter_date,
    )
