"""Multi-agent triage state machine.

Collects symptoms against a coverage checklist, plans and retrieves
historical health data, summarizes the case, narrows the differential,
and issues a final assessment. All agents are prompt-in/text-out through
the gateway; the Primary agent reformats everything the patient sees.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .ehr import DataPlan, EhrStore, ItemKind, query
from .errors import (
    AssessmentInvalidError,
    PreconditionError,
    SummaryInvalidError,
)
from .gateway import ChatMessage, ChatRequest, Gateway, Role
from .urgency import UrgencyStatus


class Phase(str, Enum):
    SYMPTOM_COLLECTION = "SymptomCollection"
    HEALTH_DATA_PLANNING = "HealthDataPlanning"
    HEALTH_DATA_RETRIEVAL = "HealthDataRetrieval"
    SUMMARIZATION = "Summarization"
    DIFFERENTIAL_DIAGNOSIS = "DifferentialDiagnosis"
    NEXT_STEPS = "NextSteps"
    DONE = "Done"


PHASE_ORDER = [
    Phase.SYMPTOM_COLLECTION,
    Phase.HEALTH_DATA_PLANNING,
    Phase.HEALTH_DATA_RETRIEVAL,
    Phase.SUMMARIZATION,
    Phase.DIFFERENTIAL_DIAGNOSIS,
    Phase.NEXT_STEPS,
    Phase.DONE,
]

SOCRATES_DIMENSIONS = (
    "site", "onset", "character", "radiation", "associations",
    "time_course", "exacerbating_relieving", "severity",
)

SYMPTOMS_COMPLETE_SENTINEL = "SYMPTOMS_COMPLETE"
DDX_QUESTION_PREFIX = "QUESTION:"
DDX_RATIONALE_PREFIX = "RATIONALE:"


@dataclass
class CaseSummary:
    chief_complaint: str
    key_positive_findings: list[str] = field(default_factory=list)
    key_negative_findings: list[str] = field(default_factory=list)
    relevant_history: str = ""
    data_highlights: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "chief_complaint": self.chief_complaint,
            "key_positive_findings": self.key_positive_findings,
            "key_negative_findings": self.key_negative_findings,
            "relevant_history": self.relevant_history,
            "data_highlights": self.data_highlights,
        }


@dataclass
class DdxState:
    candidates: list[tuple[str, str]]  # (condition, rationale), ranked
    open_questions: list[str] = field(default_factory=list)
    reasoning_trace: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "candidates": [{"condition": c, "rationale": r}
                           for c, r in self.candidates],
            "open_questions": self.open_questions,
            "reasoning_trace": self.reasoning_trace,
        }


@dataclass
class TriageAssessment:
    case_summary: CaseSummary
    ddx: DdxState
    urgency: UrgencyStatus
    urgency_reasoning: str
    care_recommendations: list[str]
    escalation_signs: list[str]
    lab_assessment: Optional[str] = None
    medication_assessment: Optional[str] = None

    def __post_init__(self):
        if not self.ddx.candidates:
            raise AssessmentInvalidError("assessment requires >=1 ddx candidate")
        if (self.urgency is not UrgencyStatus.URGENT_OR_EMERGENCY
                and not self.escalation_signs):
            raise AssessmentInvalidError(
                "escalation signs required for non-emergency urgency")

    def to_dict(self) -> dict:
        return {
            "case_summary": self.case_summary.to_dict(),
            "ddx": self.ddx.to_dict(),
            "urgency": self.urgency.value,
            "urgency_reasoning": self.urgency_reasoning,
            "care_recommendations": self.care_recommendations,
            "escalation_signs": self.escalation_signs,
            "lab_assessment": self.lab_assessment,
            "medication_assessment": self.medication_assessment,
        }


@dataclass
class InternalStep:
    agent: str
    input_digest: str
    output: str
    phase: str

    def to_dict(self) -> dict:
        return {"agent": self.agent, "input_digest": self.input_digest,
                "output": self.output, "phase": self.phase}


@dataclass(frozen=True)
class AskPatient:
    text: str


@dataclass(frozen=True)
class PhaseAdvanced:
    phase: Phase


@dataclass(frozen=True)
class Finished:
    assessment: TriageAssessment


TurnResult = Union[AskPatient, PhaseAdvanced, Finished]


@dataclass
class Budgets:
    symptom_questions: int = 12
    ddx_questions: int = 6


@dataclass
class TriageSession:
    session_id: str
    patient_id: str
    ehr_digest: str
    as_of: str = "9999-12-31"
    phase: Phase = Phase.SYMPTOM_COLLECTION
    conversation: list[ChatMessage] = field(default_factory=list)
    internal_steps: list[InternalStep] = field(default_factory=list)
    annotations: list[str] = field(default_factory=list)
    socrates_covered: set = field(default_factory=set)
    symptom_questions_asked: int = 0
    ddx_questions_asked: int = 0
    data_plan: Optional[DataPlan] = None
    retrieved: list = field(default_factory=list)
    case_summary: Optional[CaseSummary] = None
    ddx_state: Optional[DdxState] = None
    assessment: Optional[TriageAssessment] = None


_SYMPTOM_COLLECTOR_PROMPT = """\
You are the symptom-collection step of a telehealth triage team. Ask the \
patient one question at a time to characterize their complaint across all \
of these dimensions: site, onset, character, radiation, associations, \
time_course, exacerbating_relieving, severity.

Prior health record digest for this patient:
{digest}

Reply in exactly one of two forms:
1. A question, as:
COVERS: <comma-separated dimension names this question addresses>
QUESTION: <the question to ask the patient>
2. When every dimension has been addressed and you have what you need:
""" + SYMPTOMS_COMPLETE_SENTINEL

_PLANNER_PROMPT = """\
You decide which historical health data would help triage this case. \
Reply with a fenced JSON block:
```json
{"requested": [{"item_kind": "lab_result|medication|allergy|immunization|note|vital",
                "name_pattern": "substring", "recency": "most_recent"}],
 "rationale": "why"}
```
If no historical data is needed, reply exactly: none needed"""

_PLANNER_CONFIRM_PROMPT = """\
Here are the records retrieved for your plan. Confirm they are the most \
recent relevant data, or note anything unusable."""

_SUMMARY_PROMPT = """\
Synthesize the conversation and retrieved records into a case summary. \
Reply with a fenced JSON block with keys: chief_complaint, \
key_positive_findings (list), key_negative_findings (list), \
relevant_history, data_highlights (list)."""

_DDX_PROMPT = """\
You narrow down the differential diagnosis for the summarized case. \
Either ask the patient one clarifying question, as:
QUESTION: <question>
RATIONALE: <how the answer narrows the differential>
or, when ready, output the final ranked list (most likely first, at most \
five) as a fenced JSON block:
```json
{"candidates": [{"condition": "...", "rationale": "..."}],
 "open_questions": []}
```"""

_NEXT_STEPS_PROMPT = """\
Produce the final triage recommendation for the case. Reply with a fenced \
JSON block with keys: urgency (one of self_care, follow_up_pcp, \
urgent_or_emergency), urgency_reasoning, care_recommendations (list), \
escalation_signs (list of warning signs that mean seek a higher level of \
care), and optionally lab_assessment and medication_assessment."""

_PRIMARY_PROMPT = """\
You are the single patient-facing voice of the triage team. Rewrite the \
internal message below so it reads as one warm, clear, professional \
message to the patient. Preserve its meaning; output only the rewritten \
message."""


_JSON_BLOCK_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def extract_json_block(text: str) -> Optional[dict]:
    """First parseable JSON object, fenced or bare."""
    for match in _JSON_BLOCK_RE.finditer(text):
        try:
            return json.loads(match.group(1))
        except ValueError:
            continue
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return json.loads(stripped)
        except ValueError:
            pass
    return None


def build_ehr_digest(store: Optional[EhrStore], patient_id: str,
                     as_of: str, cap: int = 30) -> str:
    """Most recent item per (kind, name) as a bullet list, capped."""
    if store is None:
        return "no prior records"
    latest: dict[tuple[str, str], object] = {}
    for item in store.items_for(patient_id):
        if item.observed_date > as_of:
            continue
        key = (item.item_kind.value, item.name.lower())
        prev = latest.get(key)
        if prev is None or (item.observed_date, item.source_record_id) > (
                prev.observed_date, prev.source_record_id):
            latest[key] = item
    items = sorted(latest.values(),
                   key=lambda i: (i.observed_date, i.source_record_id),
                   reverse=True)[:cap]
    if not items:
        return "no prior records"
    return "\n".join(
        f"- [{i.item_kind.value}] {i.name}: {i.value}"
        f"{' ' + i.unit if i.unit else ''} ({i.observed_date})"
        for i in items)


class TriageOrchestrator:
    def __init__(self, gateway: Gateway, store: Optional[EhrStore] = None,
                 budgets: Optional[Budgets] = None,
                 model_id: str = "triage"):
        self.gateway = gateway
        self.store = store
        self.budgets = budgets or Budgets()
        self.model_id = model_id
        self._sessions: set[str] = set()

    # -- session lifecycle -------------------------------------------------

    def start_session(self, session_id: str, patient_id: str,
                      as_of: str) -> TriageSession:
        if session_id in self._sessions:
            raise PreconditionError(f"session {session_id!r} already started")
        self._sessions.add(session_id)
        digest = build_ehr_digest(self.store, patient_id, as_of)
        return TriageSession(session_id=session_id, patient_id=patient_id,
                             ehr_digest=digest, as_of=as_of)

    # -- agent plumbing ----------------------------------------------------

    def _call(self, session: TriageSession, agent: str, system: str,
              conversation: list[ChatMessage], user: Optional[str] = None,
              record_step: bool = True) -> str:
        messages = [ChatMessage(Role.SYSTEM, system)] + list(conversation)
        if user is not None:
            messages.append(ChatMessage(Role.USER, user))
        text = self.gateway.complete_chat(ChatRequest(
            model_id=self.model_id, messages=tuple(messages), tag=agent))
        if record_step:
            digest_src = user if user is not None else (
                conversation[-1].content if conversation else system)
            session.internal_steps.append(InternalStep(
                agent=agent, input_digest=digest_src[:200], output=text,
                phase=session.phase.value))
        return text

    def _primary_format(self, session: TriageSession, raw: str) -> str:
        return self._call(session, "primary", _PRIMARY_PROMPT, [], user=raw)

    def _ask_patient(self, session: TriageSession, raw: str) -> AskPatient:
        formatted = self._primary_format(session, raw)
        session.conversation.append(ChatMessage(Role.ASSISTANT, formatted))
        return AskPatient(formatted)

    def _advance(self, session: TriageSession, phase: Phase) -> PhaseAdvanced:
        session.phase = phase
        return PhaseAdvanced(phase)

    # -- main dispatch -----------------------------------------------------

    def agent_turn(self, session: TriageSession,
                   patient_message: Optional[str] = None) -> TurnResult:
        if session.phase is Phase.DONE:
            raise PreconditionError("session already finished")
        if patient_message is not None:
            if session.phase not in (Phase.SYMPTOM_COLLECTION,
                                     Phase.DIFFERENTIAL_DIAGNOSIS):
                raise PreconditionError(
                    f"phase {session.phase.value} does not accept patient input")
            session.conversation.append(ChatMessage(Role.USER, patient_message))

        if session.phase is Phase.SYMPTOM_COLLECTION:
            return self._symptom_turn(session)
        if session.phase is Phase.HEALTH_DATA_PLANNING:
            plan = self.plan_health_data(session)
            if plan.requested:
                return self._advance(session, Phase.HEALTH_DATA_RETRIEVAL)
            return self._advance(session, Phase.SUMMARIZATION)
        if session.phase is Phase.HEALTH_DATA_RETRIEVAL:
            self._retrieve(session)
            return self._advance(session, Phase.SUMMARIZATION)
        if session.phase is Phase.SUMMARIZATION:
            self.summarize_case(session)
            return self._advance(session, Phase.DIFFERENTIAL_DIAGNOSIS)
        if session.phase is Phase.DIFFERENTIAL_DIAGNOSIS:
            return self.ddx_turn(session)
        if session.phase is Phase.NEXT_STEPS:
            assessment = self.next_steps(session)
            closing = self._render_recommendation(assessment)
            formatted = self._primary_format(session, closing)
            session.conversation.append(ChatMessage(Role.ASSISTANT, formatted))
            session.phase = Phase.DONE
            return Finished(assessment)
        raise PreconditionError(f"unhandled phase {session.phase}")

    # -- symptom collection ------------------------------------------------

    def _symptom_system_prompt(self, session: TriageSession) -> str:
        return _SYMPTOM_COLLECTOR_PROMPT.format(digest=session.ehr_digest)

    def _symptom_turn(self, session: TriageSession) -> TurnResult:
        budget = self.budgets.symptom_questions
        nudges = 0
        while True:
            if session.symptom_questions_asked >= budget:
                session.annotations.append("symptom_budget_exceeded")
                return self._advance(session, Phase.HEALTH_DATA_PLANNING)
            user = None
            if nudges:
                missing = [d for d in SOCRATES_DIMENSIONS
                           if d not in session.socrates_covered]
                user = ("Coverage incomplete. Ask about: "
                        + ", ".join(missing))
            raw = self._call(session, "symptom_collector",
                             self._symptom_system_prompt(session),
                             session.conversation, user=user)
            if SYMPTOMS_COMPLETE_SENTINEL in raw:
                if session.socrates_covered >= set(SOCRATES_DIMENSIONS):
                    return self._advance(session, Phase.HEALTH_DATA_PLANNING)
                nudges += 1
                if nudges > 2:
                    # Agent refuses to keep asking; treat as exhausted.
                    session.annotations.append("symptom_budget_exceeded")
                    return self._advance(session, Phase.HEALTH_DATA_PLANNING)
                continue
            question, covers = _parse_symptom_output(raw)
            session.socrates_covered.update(covers)
            session.symptom_questions_asked += 1
            return self._ask_patient(session, question)

    # -- health data -------------------------------------------------------

    def plan_health_data(self, session: TriageSession) -> DataPlan:
        if session.phase is not Phase.HEALTH_DATA_PLANNING:
            raise PreconditionError("not in planning phase")
        convo_digest = _conversation_digest(session)
        plan = None
        for _ in range(2):  # one reprompt on unparseable output
            raw = self._call(session, "health_data_planner", _PLANNER_PROMPT,
                             [], user=convo_digest)
            plan = _parse_plan(raw)
            if plan is not None:
                break
        if plan is None:
            session.annotations.append("planner_output_unparseable")
            plan = DataPlan()
        session.data_plan = plan
        return plan

    def _retrieve(self, session: TriageSession) -> None:
        if self.store is None or session.data_plan is None:
            session.retrieved = []
            return
        as_of = getattr(session, "as_of", "9999-12-31")
        items = query(self.store, session.patient_id, session.data_plan, as_of)
        session.retrieved = items
        session.internal_steps.append(InternalStep(
            agent="health_data_retriever",
            input_digest=json.dumps(session.data_plan.to_dict())[:200],
            output=f"{len(items)} item(s) retrieved",
            phase=session.phase.value))
        digest = "\n".join(
            f"- [{i.item_kind.value}] {i.name}: {i.value} ({i.observed_date})"
            for i in items) or "(nothing matched the plan)"
        # Internal confirmation loop: the planner sees what came back.
        self._call(session, "health_data_planner", _PLANNER_CONFIRM_PROMPT,
                   [], user=digest)

    # -- summary -----------------------------------------------------------

    def summarize_case(self, session: TriageSession) -> CaseSummary:
        if session.phase is not Phase.SUMMARIZATION:
            raise PreconditionError("not in summarization phase")
        if session.case_summary is not None:
            raise PreconditionError("summarization already ran for this session")
        retrieved_digest = "\n".join(
            f"- [{i.item_kind.value}] {i.name}: {i.value} ({i.observed_date})"
            for i in session.retrieved) or "(no retrieved data)"
        user = (_conversation_digest(session)
                + "\n\nRetrieved records:\n" + retrieved_digest)
        raw = self._call(session, "summary", _SUMMARY_PROMPT, [], user=user)
        data = extract_json_block(raw)
        if data is None or not str(data.get("chief_complaint", "")).strip():
            raise SummaryInvalidError(f"unparseable summary output: {raw[:200]!r}")
        summary = CaseSummary(
            chief_complaint=str(data["chief_complaint"]),
            key_positive_findings=[str(x) for x in data.get("key_positive_findings", [])],
            key_negative_findings=[str(x) for x in data.get("key_negative_findings", [])],
            relevant_history=str(data.get("relevant_history", "")),
            data_highlights=[str(x) for x in data.get("data_highlights", [])],
        )
        session.case_summary = summary
        return summary

    # -- differential ------------------------------------------------------

    def ddx_turn(self, session: TriageSession) -> TurnResult:
        if session.phase is not Phase.DIFFERENTIAL_DIAGNOSIS:
            raise PreconditionError("not in differential phase")
        forced = session.ddx_questions_asked >= self.budgets.ddx_questions
        context = json.dumps(session.case_summary.to_dict()) \
            if session.case_summary else ""
        user = None
        if forced:
            user = ("Question budget exhausted. Output the final ranked "
                    "candidate list now as JSON.")
        raw = self._call(session, "differential_diagnosis",
                         _DDX_PROMPT + "\n\nCase summary:\n" + context,
                         session.conversation, user=user)
        data = extract_json_block(raw)
        if data is not None and "candidates" in data:
            if forced:
                session.annotations.append("ddx_budget_exceeded")
            state = _parse_ddx(data, session)
            session.ddx_state = state
            session.phase = Phase.NEXT_STEPS
            return PhaseAdvanced(Phase.NEXT_STEPS)
        if forced:
            raw = self._call(session, "differential_diagnosis",
                             _DDX_PROMPT + "\n\nCase summary:\n" + context,
                             session.conversation,
                             user="Final answer must be the JSON candidate "
                                  "block only.")
            data = extract_json_block(raw)
            if data is None or "candidates" not in data:
                raise AssessmentInvalidError(
                    "differential agent would not finalize within budget")
            session.annotations.append("ddx_budget_exceeded")
            session.ddx_state = _parse_ddx(data, session)
            session.phase = Phase.NEXT_STEPS
            return PhaseAdvanced(Phase.NEXT_STEPS)
        question, rationale = _parse_ddx_question(raw)
        if session.ddx_state is None:
            session.ddx_state = DdxState(candidates=[])
        session.ddx_state.reasoning_trace.append(rationale)
        session.ddx_questions_asked += 1
        return self._ask_patient(session, question)

    # -- next steps --------------------------------------------------------

    def next_steps(self, session: TriageSession) -> TriageAssessment:
        if session.case_summary is None or session.ddx_state is None \
                or not session.ddx_state.candidates:
            raise PreconditionError(
                "next steps require a case summary and differential")
        context = json.dumps({
            "case_summary": session.case_summary.to_dict(),
            "ddx": session.ddx_state.to_dict(),
        })
        data = None
        for _ in range(2):  # one reprompt
            raw = self._call(session, "next_steps", _NEXT_STEPS_PROMPT, [],
                             user=context)
            data = extract_json_block(raw)
            if data is not None and _parse_urgency(data.get("urgency")) is not None:
                break
            data = None
        if data is None:
            raise AssessmentInvalidError("next-steps output missing urgency")
        has_labs = any(i.item_kind is ItemKind.LAB_RESULT
                       for i in session.retrieved)
        has_meds = any(i.item_kind is ItemKind.MEDICATION
                       for i in session.retrieved)
        assessment = TriageAssessment(
            case_summary=session.case_summary,
            ddx=session.ddx_state,
            urgency=_parse_urgency(data["urgency"]),
            urgency_reasoning=str(data.get("urgency_reasoning", "")),
            care_recommendations=[str(x) for x in data.get("care_recommendations", [])],
            escalation_signs=[str(x) for x in data.get("escalation_signs", [])],
            lab_assessment=(str(data["lab_assessment"])
                            if has_labs and data.get("lab_assessment") else None),
            medication_assessment=(str(data["medication_assessment"])
                                   if has_meds and data.get("medication_assessment")
                                   else None),
        )
        session.assessment = assessment
        return assessment

    def _render_recommendation(self, assessment: TriageAssessment) -> str:
        lines = [
            f"Recommended level of care: {assessment.urgency.display}.",
            assessment.urgency_reasoning,
        ]
        if assessment.care_recommendations:
            lines.append("What you can do: "
                         + "; ".join(assessment.care_recommendations))
        if assessment.escalation_signs:
            lines.append("Seek a higher level of care if you notice: "
                         + "; ".join(assessment.escalation_signs))
        return "\n".join(line for line in lines if line)


# -- parsing helpers -------------------------------------------------------

def _parse_symptom_output(raw: str) -> tuple[str, set]:
    question = None
    covers: set = set()
    for line in raw.splitlines():
        line = line.strip()
        if line.upper().startswith("COVERS:"):
            names = line.split(":", 1)[1]
            covers = {n.strip().lower().replace("-", "_").replace("/", "_")
                      for n in names.split(",") if n.strip()}
            covers &= set(SOCRATES_DIMENSIONS)
        elif line.upper().startswith("QUESTION:"):
            question = line.split(":", 1)[1].strip()
    if question is None:
        question = raw.strip()
    return question, covers


def _conversation_digest(session: TriageSession) -> str:
    lines = []
    for msg in session.conversation:
        speaker = "Patient" if msg.role is Role.USER else "Agent"
        lines.append(f"{speaker}: {msg.content}")
    return "\n".join(lines)


def _parse_plan(raw: str) -> Optional[DataPlan]:
    if "none needed" in raw.lower():
        return DataPlan()
    data = extract_json_block(raw)
    if data is None or "requested" not in data:
        return None
    try:
        return DataPlan.from_dict(data)
    except (ValueError, KeyError, TypeError):
        return None


def _parse_ddx(data: dict, session: TriageSession) -> DdxState:
    seen = set()
    candidates: list[tuple[str, str]] = []
    for entry in data.get("candidates", []):
        condition = str(entry.get("condition", "")).strip()
        if not condition or condition.lower() in seen:
            continue
        seen.add(condition.lower())
        candidates.append((condition, str(entry.get("rationale", ""))))
    candidates = candidates[:5]  # downstream consumes at most the top five
    trace = session.ddx_state.reasoning_trace if session.ddx_state else []
    return DdxState(
        candidates=candidates,
        open_questions=[str(q) for q in data.get("open_questions", [])],
        reasoning_trace=trace,
    )


def _parse_ddx_question(raw: str) -> tuple[str, str]:
    question, rationale = None, ""
    for line in raw.splitlines():
        line = line.strip()
        if line.upper().startswith(DDX_QUESTION_PREFIX):
            question = line.split(":", 1)[1].strip()
        elif line.upper().startswith(DDX_RATIONALE_PREFIX):
            rationale = line.split(":", 1)[1].strip()
    if question is None:
        question = raw.strip()
    return question, rationale


def _parse_urgency(value) -> Optional[UrgencyStatus]:
    if value is None:
        return None
    text = str(value).strip().lower().replace(" ", "_").replace("-", "_")
    aliases = {
        "self_care": UrgencyStatus.SELF_CARE,
        "selfcare": UrgencyStatus.SELF_CARE,
        "follow_up_pcp": UrgencyStatus.FOLLOW_UP_PCP,
        "follow_up_with_pcp": UrgencyStatus.FOLLOW_UP_PCP,
        "urgent_or_emergency": UrgencyStatus.URGENT_OR_EMERGENCY,
        "urgent_care_/_emergency": UrgencyStatus.URGENT_OR_EMERGENCY,
        "urgent": UrgencyStatus.URGENT_OR_EMERGENCY,
        "emergency": UrgencyStatus.URGENT_OR_EMERGENCY,
    }
    return aliases.get(text)
