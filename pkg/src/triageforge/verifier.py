"""Guideline-based urgency verification.

Cross-references the top differential diagnoses against a guideline
corpus; a judge model maps each diagnosis to a conceptually matching
guideline (or none), and the final urgency is escalated to the most
severe guideline recommendation. Urgency is never lowered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import DuplicateConditionError, PreconditionError
from .gateway import ChatMessage, ChatRequest, Gateway, Role
from .orchestrator import TriageAssessment
from .urgency import UrgencyStatus


@dataclass(frozen=True)
class GuidelineDocument:
    guideline_id: str
    condition_name: str
    recommended_urgency: UrgencyStatus
    summary: str
    source_citation: str
    synonyms: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "GuidelineDocument":
        return cls(
            guideline_id=str(data["guideline_id"]),
            condition_name=str(data["condition_name"]),
            recommended_urgency=UrgencyStatus(data["recommended_urgency"]),
            summary=str(data.get("summary", "")),
            source_citation=str(data.get("source_citation", "")),
            synonyms=tuple(str(s) for s in data.get("synonyms", [])),
        )

    def to_dict(self) -> dict:
        return {
            "guideline_id": self.guideline_id,
            "condition_name": self.condition_name,
            "recommended_urgency": self.recommended_urgency.value,
            "summary": self.summary,
            "source_citation": self.source_citation,
            "synonyms": list(self.synonyms),
        }


class GuidelineCorpus:
    def __init__(self, documents: Sequence[GuidelineDocument]):
        self.documents = list(documents)
        self._by_name: dict[str, GuidelineDocument] = {}
        for doc in documents:
            key = doc.condition_name.lower()
            if key in self._by_name:
                raise DuplicateConditionError(
                    f"duplicate guideline condition: {doc.condition_name!r}")
            self._by_name[key] = doc

    def __len__(self) -> int:
        return len(self.documents)

    def get(self, condition_name: str) -> Optional[GuidelineDocument]:
        return self._by_name.get(condition_name.lower())


def load_corpus(path) -> GuidelineCorpus:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return GuidelineCorpus([GuidelineDocument.from_dict(d) for d in raw])


@dataclass(frozen=True)
class GuidelineMatch:
    ddx_condition: str
    guideline: GuidelineDocument
    judge_rationale: str

    def to_dict(self) -> dict:
        return {
            "ddx_condition": self.ddx_condition,
            "guideline": self.guideline.to_dict(),
            "judge_rationale": self.judge_rationale,
        }


@dataclass
class VerifierOutcome:
    original: UrgencyStatus
    final: UrgencyStatus
    matches: list[GuidelineMatch]
    adjusted: bool
    explanation: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "original": self.original.value,
            "final": self.final.value,
            "matches": [m.to_dict() for m in self.matches],
            "adjusted": self.adjusted,
            "explanation": self.explanation,
            "warnings": self.warnings,
        }


_MATCHER_PROMPT = """\
You map a candidate diagnosis onto a guideline catalog. The catalog lists \
condition names with synonyms. Answer with exactly one catalog condition \
name when the diagnosis is conceptually the same condition (not just a \
keyword overlap), or the single word: none"""


def _catalog_digest(corpus: GuidelineCorpus) -> str:
    lines = []
    for doc in corpus.documents:
        syn = f" (also known as: {', '.join(doc.synonyms)})" if doc.synonyms else ""
        lines.append(f"- {doc.condition_name}{syn}")
    return "\n".join(lines)


def match_guidelines(top5: Sequence[str], corpus: GuidelineCorpus,
                     gateway: Gateway, model_id: str = "judge"
                     ) -> tuple[list[GuidelineMatch], list[str]]:
    """One best guideline per diagnosis, judged conceptually; plus warnings."""
    if not 1 <= len(top5) <= 5:
        raise PreconditionError("top5 must contain 1..5 conditions")
    if len(corpus) == 0:
        return [], []
    catalog = _catalog_digest(corpus)
    matches: list[GuidelineMatch] = []
    warnings: list[str] = []
    for condition in top5:
        answer = gateway.complete_chat(ChatRequest(
            model_id=model_id,
            messages=(
                ChatMessage(Role.SYSTEM, _MATCHER_PROMPT),
                ChatMessage(Role.USER,
                            f"Catalog:\n{catalog}\n\nDiagnosis: {condition}"),
            ),
            tag="guideline_matcher",
        )).strip()
        if answer.lower() == "none":
            continue
        doc = corpus.get(answer)
        if doc is None:
            warnings.append(
                f"judge answered unknown condition {answer!r} for {condition!r}")
            continue
        matches.append(GuidelineMatch(
            ddx_condition=condition, guideline=doc,
            judge_rationale=f"judge mapped {condition!r} to {doc.condition_name!r}"))
    return matches, warnings


def resolve_urgency(original: UrgencyStatus,
                    matches: Sequence[GuidelineMatch]) -> VerifierOutcome:
    """Pure escalation step: final = max(original, guideline max)."""
    note = ("Guideline recommendations can only raise the urgency level, "
            "never lower it.")
    if not matches:
        return VerifierOutcome(
            original=original, final=original, matches=[], adjusted=False,
            explanation="No relevant guidelines matched; original urgency "
                        f"retained. {note}")
    top = max(matches, key=lambda m: m.guideline.recommended_urgency.level)
    final = max(original, top.guideline.recommended_urgency)
    adjusted = final != original
    if adjusted:
        explanation = (
            f"Escalated to {final.display} per guideline "
            f"{top.guideline.condition_name!r} "
            f"({top.guideline.guideline_id}). {note}")
    else:
        explanation = (
            f"Matched guidelines recommend at most "
            f"{top.guideline.recommended_urgency.display}; original urgency "
            f"retained. {note}")
    return VerifierOutcome(original=original, final=final,
                           matches=list(matches), adjusted=adjusted,
                           explanation=explanation)


def verify_urgency(assessment: TriageAssessment, corpus: GuidelineCorpus,
                   gateway: Gateway, model_id: str = "judge") -> VerifierOutcome:
    if not assessment.ddx.candidates:
        raise PreconditionError("assessment must carry >=1 ddx candidate")
    top5 = [c for c, _ in assessment.ddx.candidates[:5]]
    if len(corpus) == 0:
        outcome = resolve_urgency(assessment.urgency, [])
        return outcome
    matches, warnings = match_guidelines(top5, corpus, gateway, model_id)
    outcome = resolve_urgency(assessment.urgency, matches)
    outcome.warnings = warnings
    return outcome
