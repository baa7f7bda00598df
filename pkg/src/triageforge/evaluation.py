"""Clinician-review rubric, agreement statistics, and report generation.

The 14-question rubric drives both server-side validation and the review
console's form. Analytics cover dual-confirmation rates, top-3 differential
hit rate, and Cohen's kappa over urgency labels.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import AggregationError, PreconditionError
from .urgency import UrgencyStatus


@dataclass(frozen=True)
class Option:
    option_id: str
    label: str


@dataclass(frozen=True)
class FreeTextRule:
    triggering_option_ids: tuple[str, ...]
    prompt: str
    required: bool = True
    field_id: str = "explanation"


@dataclass(frozen=True)
class RubricQuestion:
    question_id: str
    prompt: str
    options: tuple[Option, ...]
    free_text_rules: tuple[FreeTextRule, ...] = ()
    multi_select: bool = False
    affirmative_option_id: Optional[str] = None
    na_option_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "prompt": self.prompt,
            "options": [{"option_id": o.option_id, "label": o.label}
                        for o in self.options],
            "free_text_rules": [
                {
                    "triggering_option_ids": list(r.triggering_option_ids),
                    "prompt": r.prompt,
                    "required": r.required,
                    "field_id": r.field_id,
                }
                for r in self.free_text_rules
            ],
            "multi_select": self.multi_select,
            "affirmative_option_id": self.affirmative_option_id,
            "na_option_id": self.na_option_id,
        }


def _yes_no(qid, prompt, no_id, no_label, ft_prompt):
    return RubricQuestion(
        question_id=qid,
        prompt=prompt,
        options=(Option("yes", "Yes"), Option(no_id, no_label)),
        free_text_rules=(FreeTextRule((no_id,), ft_prompt),),
        affirmative_option_id="yes",
    )


def builtin_rubric() -> list[RubricQuestion]:
    """The built-in 14-question review rubric."""
    return [
        _yes_no(
            "q1",
            "Do the questions cover all important symptoms and related information?",
            "no_missing", "No, key information is missing",
            "What key information was missing / not covered?",
        ),
        _yes_no(
            "q2",
            "Are questions precise and without redundancy?",
            "no_redundant", "No, it contains irrelevant or repeated questions",
            "Please Explain",
        ),
        _yes_no(
            "q3",
            "Does the doctor use an appropriate and empathetic tone with the "
            "patient during the conversation?",
            "no_tone",
            "No, Doctor's tone is sometimes inappropriate, rude, or not empathetic",
            "Please provide examples from the conversation",
        ),
        RubricQuestion(
            question_id="q4",
            prompt="Are the patient's answers consistent?",
            options=(
                Option("yes", "Yes"),
                Option("no_self", "No, the patient sometimes contradicts themself"),
                Option("no_summary",
                       "No, the patient sometimes contradicts the patient summary"),
            ),
            free_text_rules=(FreeTextRule(("no_self", "no_summary"),
                                          "Please Explain"),),
            affirmative_option_id="yes",
        ),
        RubricQuestion(
            question_id="q5",
            prompt="Does the list of requested historical EHR Data contain all "
                   "necessary information for diagnosis?",
            options=(
                Option("yes", "Yes"),
                Option("no", "No"),
                Option("na", "N/A (if list is empty)"),
            ),
            free_text_rules=(FreeTextRule(
                ("no",), "What key information was missing / not covered?"),),
            affirmative_option_id="yes",
            na_option_id="na",
        ),
        _yes_no(
            "q6",
            "Does the Case Summary capture the chief complaint and key "
            "information necessary (positive signs and important negative "
            "signs) for diagnosis?",
            "no", "No",
            "What important information was missing?",
        ),
        RubricQuestion(
            question_id="q7",
            prompt="Does the Laboratory Assessment make accurate inferences "
                   "about the patient's condition?",
            options=(
                Option("yes", "Yes"),
                Option("no_labs", "No, inference about some labs are incorrect"),
                Option("na", "N/A (if no labs are available)"),
            ),
            free_text_rules=(FreeTextRule(("no_labs",), "Please elaborate"),),
            affirmative_option_id="yes",
            na_option_id="na",
        ),
        RubricQuestion(
            question_id="q8",
            prompt="Does the Medication Assessment make accurate inferences "
                   "about the patient's condition?",
            options=(
                Option("yes", "Yes"),
                Option("no_meds", "No, inference about some meds are incorrect"),
                Option("na", "N/A (if no meds are available)"),
            ),
            free_text_rules=(FreeTextRule(("no_meds",), "Please elaborate"),),
            affirmative_option_id="yes",
            na_option_id="na",
        ),
        _yes_no(
            "q9",
            "Does the Overall Assessment draw accurate conclusions based on "
            "the conversation and provided EHR?",
            "no_inaccurate", "No, the conclusion is inaccurate",
            "Please elaborate",
        ),
        RubricQuestion(
            question_id="q10",
            prompt="Is the reasoning in the Urgency Assessment correct?",
            options=(Option("yes", "Yes"), Option("no", "No")),
            # Free text is shown for both answers but only required for No.
            free_text_rules=(
                FreeTextRule(("no",),
                             "Please explain what is incorrect, if anything"),
                FreeTextRule(("yes",),
                             "Please explain what is incorrect, if anything",
                             required=False),
            ),
            affirmative_option_id="yes",
        ),
        RubricQuestion(
            question_id="q11",
            prompt="What is the correct Urgency Status? "
                   "(Select multiple if applicable)",
            options=(
                Option("self_care", "Self-care"),
                Option("follow_up_pcp", "Follow up with PCP"),
                Option("urgent_emergency", "Urgent care / emergency"),
            ),
            free_text_rules=(FreeTextRule(
                ("self_care", "follow_up_pcp", "urgent_emergency"),
                "If your selection does not match the provided 'Urgency "
                "Status', please give your reasoning",
                required=False,
            ),),
            multi_select=True,
        ),
        _yes_no(
            "q12",
            "Does the 'when to escalate?' help patient understanding urgency "
            "and when to take additional steps?",
            "no_harmful", "No, it contains harmful or misleading information",
            "Please elaborate",
        ),
        _yes_no(
            "q13",
            "Are the 'Care Recommendations' helpful based on the patient "
            "condition?",
            "no_harmful", "No, it contains harmful or misleading information",
            "Please elaborate",
        ),
        RubricQuestion(
            question_id="q14",
            prompt="Please select the most probable diagnosis (choose multiple "
                   "if more than 1 are equally likely given the available "
                   "information).",
            options=(
                Option("diagnosis_1", "Diagnosis 1"),
                Option("diagnosis_2", "Diagnosis 2"),
                Option("diagnosis_3", "Diagnosis 3"),
                Option("diagnosis_4", "Diagnosis 4"),
                Option("diagnosis_5", "Diagnosis 5"),
                Option("other", "Other (Not Listed)"),
            ),
            free_text_rules=(
                FreeTextRule(("other",),
                             "Enter most probable diagnosis here.",
                             field_id="other_diagnosis"),
                FreeTextRule(("diagnosis_1", "diagnosis_2", "diagnosis_3",
                              "diagnosis_4", "diagnosis_5", "other"),
                             "Provide any comments on diagnosis here:",
                             required=False,
                             field_id="diagnosis_comments"),
            ),
            multi_select=True,
        ),
    ]


@dataclass
class Answer:
    selected: list[str]
    free_texts: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "Answer":
        return cls(selected=list(data.get("selected", [])),
                   free_texts=dict(data.get("free_texts", {})))

    def to_dict(self) -> dict:
        return {"selected": self.selected, "free_texts": self.free_texts}


@dataclass
class ReviewResponse:
    encounter_id: str
    reviewer_id: str
    answers: dict[str, Answer]
    general_comments: str = ""
    submitted_at: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "ReviewResponse":
        return cls(
            encounter_id=str(data["encounter_id"]),
            reviewer_id=str(data["reviewer_id"]),
            answers={qid: Answer.from_dict(a)
                     for qid, a in data.get("answers", {}).items()},
            general_comments=str(data.get("general_comments", "")),
            submitted_at=str(data.get("submitted_at", "")),
        )

    def to_dict(self) -> dict:
        return {
            "encounter_id": self.encounter_id,
            "reviewer_id": self.reviewer_id,
            "answers": {qid: a.to_dict() for qid, a in self.answers.items()},
            "general_comments": self.general_comments,
            "submitted_at": self.submitted_at,
        }


@dataclass(frozen=True)
class Violation:
    question_id: str
    rule: str
    detail: str

    def to_dict(self) -> dict:
        return {"question_id": self.question_id, "rule": self.rule,
                "detail": self.detail}


def validate_review(review: ReviewResponse,
                    rubric: Sequence[RubricQuestion]) -> list[Violation]:
    """Check a review against the rubric; empty list means valid."""
    violations: list[Violation] = []
    known_qids = {q.question_id for q in rubric}
    for qid in review.answers:
        if qid not in known_qids:
            violations.append(Violation(qid, "unknown-question",
                                        f"{qid} is not in the rubric"))
    for question in rubric:
        qid = question.question_id
        answer = review.answers.get(qid)
        if answer is None or not answer.selected:
            violations.append(Violation(qid, "unanswered",
                                        "no option selected"))
            continue
        option_ids = {o.option_id for o in question.options}
        bad = [s for s in answer.selected if s not in option_ids]
        if bad:
            violations.append(Violation(
                qid, "unknown-option", f"unknown option(s): {', '.join(bad)}"))
            continue
        if not question.multi_select and len(answer.selected) != 1:
            violations.append(Violation(
                qid, "single-select",
                f"expected exactly one selection, got {len(answer.selected)}"))
        if len(set(answer.selected)) != len(answer.selected):
            violations.append(Violation(qid, "duplicate-selection",
                                        "option selected more than once"))
        for rule in question.free_text_rules:
            if not rule.required:
                continue
            triggered = any(s in rule.triggering_option_ids
                            for s in answer.selected)
            if triggered and not answer.free_texts.get(rule.field_id, "").strip():
                violations.append(Violation(
                    qid, "missing-free-text",
                    f"'{rule.prompt}' requires a non-empty answer"))
    return violations


KAPPA_UNDEFINED = None


def cohens_kappa(labels_a: Sequence, labels_b: Sequence) -> Optional[float]:
    """Chance-corrected agreement between two raters.

    Returns None (undefined) when expected agreement is 1, i.e. both
    raters used a single identical category throughout.
    """
    if len(labels_a) != len(labels_b):
        raise PreconditionError("label lists must have equal length")
    if not labels_a:
        raise PreconditionError("label lists must be non-empty")
    n = len(labels_a)
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    counts_a = Counter(labels_a)
    counts_b = Counter(labels_b)
    p_e = sum(counts_a[c] * counts_b.get(c, 0) for c in counts_a) / (n * n)
    if p_e == 1.0:
        return KAPPA_UNDEFINED
    if p_o == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


_Q11_TO_URGENCY = {
    "self_care": UrgencyStatus.SELF_CARE,
    "follow_up_pcp": UrgencyStatus.FOLLOW_UP_PCP,
    "urgent_emergency": UrgencyStatus.URGENT_OR_EMERGENCY,
}


def multi_select_to_label(selected: Sequence[str]) -> UrgencyStatus:
    """Reduce an urgency multi-selection to the most severe level chosen."""
    if not selected:
        raise PreconditionError("urgency selection must be non-empty")
    try:
        levels = [_Q11_TO_URGENCY[s] for s in selected]
    except KeyError as exc:
        raise PreconditionError(f"unknown urgency option: {exc}") from exc
    return max(levels)


def top3_hit(review: ReviewResponse, ddx_candidates: Sequence[str]) -> bool:
    """Did the reviewer's most-probable diagnosis land in the agent's top 3?"""
    answer = review.answers.get("q14")
    if answer is None:
        return False
    top3 = [c.strip().lower() for c in ddx_candidates[:3]]
    for selected in answer.selected:
        if selected in ("diagnosis_1", "diagnosis_2", "diagnosis_3"):
            return True
        if selected == "other":
            free = answer.free_texts.get("other_diagnosis", "")
            names = [p.strip().lower() for p in free.split(",") if p.strip()]
            if any(name in top3 for name in names):
                return True
    return False


_NAMED_RATES = {
    "simulator_consistency_rate": "q4",
    "question_precision_rate": "q2",
    "tone_rate": "q3",
    "summary_rate": "q6",
}

_NA_QUESTIONS = {"q5", "q7", "q8"}


@dataclass
class AggregateReport:
    n_encounters: int
    reviewer_ids: list[str]
    dual_confirmation: dict[str, Optional[float]]
    dual_confirmation_denominators: dict[str, int]
    named_rates: dict[str, Optional[float]]
    top3_hit_rate: dict[str, Optional[float]]
    urgency_kappa: dict[str, Optional[float]]
    urgency_label_source: str = "post_verifier"

    def to_dict(self) -> dict:
        return {
            "n_encounters": self.n_encounters,
            "reviewer_ids": self.reviewer_ids,
            "dual_confirmation": self.dual_confirmation,
            "dual_confirmation_denominators": self.dual_confirmation_denominators,
            "named_rates": self.named_rates,
            "top3_hit_rate": self.top3_hit_rate,
            "urgency_kappa": self.urgency_kappa,
            "urgency_label_source": self.urgency_label_source,
        }

    def to_table(self) -> str:
        def fmt(value):
            return "n/a" if value is None else f"{value:.3f}"

        lines = [
            f"Encounters reviewed by both reviewers: {self.n_encounters}",
            f"Reviewers: {', '.join(self.reviewer_ids)}",
            "",
            "Dual-confirmation rates (both reviewers affirmative):",
        ]
        for qid in sorted(self.dual_confirmation,
                          key=lambda q: int(q.lstrip("q"))):
            denom = self.dual_confirmation_denominators[qid]
            lines.append(
                f"  {qid:>4}: {fmt(self.dual_confirmation[qid])} (n={denom})")
        lines.append("")
        for name, value in self.named_rates.items():
            lines.append(f"{name}: {fmt(value)}")
        lines.append("")
        for reviewer, rate in self.top3_hit_rate.items():
            lines.append(f"top-3 differential hit rate [{reviewer}]: {fmt(rate)}")
        lines.append("")
        lines.append(f"Urgency kappa (labels: {self.urgency_label_source}):")
        for pair, value in self.urgency_kappa.items():
            lines.append(f"  {pair}: {fmt(value)}")
        return "\n".join(lines)


def aggregate(reviews: Sequence[ReviewResponse],
              transcripts: dict[str, dict]) -> AggregateReport:
    """Compute the analytics report over a two-reviewer review set.

    ``transcripts`` maps encounter_id to a transcript dict carrying the
    final (post-verifier) urgency and the ranked differential candidates.
    """
    unknown = sorted({r.encounter_id for r in reviews
                      if r.encounter_id not in transcripts})
    if unknown:
        raise AggregationError(
            f"reviews reference unknown encounters: {', '.join(unknown)}",
            offenders=unknown)

    by_key: dict[tuple[str, str], ReviewResponse] = {}
    for review in reviews:
        key = (review.encounter_id, review.reviewer_id)
        if key in by_key:
            raise AggregationError(
                f"duplicate review for {key}", offenders=[review.encounter_id])
        by_key[key] = review

    reviewer_ids = sorted({r.reviewer_id for r in reviews})
    if len(reviewer_ids) != 2:
        raise AggregationError(
            f"expected exactly 2 reviewers, got {len(reviewer_ids)}")
    rev_a, rev_b = reviewer_ids

    paired = sorted(
        eid for eid in {r.encounter_id for r in reviews}
        if (eid, rev_a) in by_key and (eid, rev_b) in by_key
    )

    rubric = builtin_rubric()
    dual: dict[str, Optional[float]] = {}
    denoms: dict[str, int] = {}
    for question in rubric:
        qid = question.question_id
        if question.affirmative_option_id is None:
            continue
        hits = 0
        denom = 0
        for eid in paired:
            answers = [by_key[(eid, rev)].answers.get(qid) for rev in reviewer_ids]
            if any(a is None or not a.selected for a in answers):
                continue
            if qid in _NA_QUESTIONS and any(
                    question.na_option_id in a.selected for a in answers):
                continue
            denom += 1
            if all(question.affirmative_option_id in a.selected for a in answers):
                hits += 1
        denoms[qid] = denom
        dual[qid] = hits / denom if denom else None

    named = {name: dual.get(qid) for name, qid in _NAMED_RATES.items()}

    top3_rates: dict[str, Optional[float]] = {}
    for rev in reviewer_ids:
        hits = 0
        denom = 0
        for eid in paired:
            review = by_key[(eid, rev)]
            candidates = [c["condition"]
                          for c in transcripts[eid].get("ddx_candidates", [])]
            denom += 1
            if top3_hit(review, candidates):
                hits += 1
        top3_rates[rev] = hits / denom if denom else None

    model_labels = []
    labels_by_reviewer: dict[str, list] = {rev_a: [], rev_b: []}
    for eid in paired:
        model_labels.append(UrgencyStatus(transcripts[eid]["final_urgency"]))
        for rev in reviewer_ids:
            labels_by_reviewer[rev].append(
                multi_select_to_label(by_key[(eid, rev)].answers["q11"].selected))

    kappa: dict[str, Optional[float]] = {}
    if paired:
        kappa[f"model_vs_{rev_a}"] = cohens_kappa(model_labels,
                                                  labels_by_reviewer[rev_a])
        kappa[f"model_vs_{rev_b}"] = cohens_kappa(model_labels,
                                                  labels_by_reviewer[rev_b])
        kappa[f"{rev_a}_vs_{rev_b}"] = cohens_kappa(labels_by_reviewer[rev_a],
                                                    labels_by_reviewer[rev_b])

    return AggregateReport(
        n_encounters=len(paired),
        reviewer_ids=reviewer_ids,
        dual_confirmation=dual,
        dual_confirmation_denominators=denoms,
        named_rates=named,
        top3_hit_rate=top3_rates,
        urgency_kappa=kappa,
    )
