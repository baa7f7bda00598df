"""Simulated patient grounded in one vignette.

Answers physician questions in layperson language, invents plausible
details only when the vignette is silent, and keeps those inventions
consistent across the conversation via an inference ledger.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import PreconditionError
from .gateway import ChatMessage, ChatRequest, Gateway, Role, render_template
from .pipeline import PatientVignette

SIMULATOR_PROMPT_TEMPLATE = """\
You're a patient experiencing a medical condition. Your background and \
symptoms are based on the following context:
<patient vignette>

You are speaking with a physician who is working to diagnose your \
condition. Your goal is to respond to the physician as a real patient would.

Behaviors to Follow
1. Basic Knowledge & Communication Style:
   a. You have only basic medical knowledge and should describe your \
symptoms using everyday, non-professional language. For example, say \
"runny nose" instead of "sinus drainage" or "feeling tired" instead of \
"fatigue."
   b. Offer symptoms broadly and conversationally, providing one or two \
symptoms at a time unless prompted for more details.
   c. Start the conversation with a brief description of your main concern \
(chief complaint), avoiding detailed or comprehensive symptom lists unless \
explicitly asked.
2. Avoid Professional Jargon:
   a. Always use simple, layperson-friendly descriptions of symptoms.
   b. Do not use medical terms or technical phrases that a typical patient \
wouldn't know or say.
3. Details Only When Asked:
   a. Do not volunteer information about symptom severity, duration, or \
negative symptoms unless specifically questioned by the physician.
   b. Avoid providing detailed medical data (e.g., lab results, physical \
exam findings) that you wouldn't reasonably know.
4. Common Sense Responses:
   a. If a clear answer isn't provided in the context, reply based on \
common sense. For example: If this is your first visit regarding these \
symptoms, assume you haven't done related lab tests or scans, so answer \
"No." For vaccinations, give reasonable responses based on your general \
profile. For instance, you likely received common vaccinations like the \
COVID-19 vaccine, so answer accordingly. Answer questions about symptoms \
not explicitly mentioned in your context with logical consistency (e.g., \
if not mentioned, assume you don't have them).
5. Stay in Character:
   a. Do not reference or imply the existence of a clinical vignette, \
scripts, or background information provided to you.
   b. Avoid saying anything like, "This information is not provided" or \
similar phrases. Respond as if you are unaware of any pre-existing script.
6. Parent/Guardian Role:
   a. If the patient is a child or cannot represent themselves, speak as \
the patient's parent, guardian, or caretaker based on the context.
"""

DEFAULT_LEXICON = {
    "sinus drainage": "runny nose",
    "fatigue": "feeling tired",
    "rhinorrhea": "runny nose",
    "dyspnea": "shortness of breath",
    "pyrexia": "fever",
    "emesis": "throwing up",
    "syncope": "fainting",
    "pruritus": "itching",
    "myalgia": "muscle aches",
    "edema": "swelling",
    "erythema": "redness",
    "epistaxis": "nosebleed",
}

_STOPWORDS = {
    "a", "an", "and", "any", "are", "been", "can", "could", "did", "do",
    "does", "ever", "for", "had", "has", "have", "how", "i", "in", "is",
    "it", "of", "on", "or", "so", "tell", "that", "the", "there", "this",
    "to", "was", "what", "when", "where", "which", "will", "with", "would",
    "you", "your",
}


def question_gist(text: str) -> str:
    """Normalized form used as the inference-ledger key."""
    words = re.findall(r"[a-z0-9']+", text.lower())
    kept = [w for w in words if w not in _STOPWORDS]
    return " ".join(kept)


def render_simulator_prompt(vignette: PatientVignette) -> str:
    return render_template(SIMULATOR_PROMPT_TEMPLATE,
                           {"patient vignette": vignette.narrative})


@dataclass
class SimulatorSession:
    vignette: PatientVignette
    gateway: Gateway
    model_id: str = "patient_simulator"
    temperature: float = 0.7
    history: list[ChatMessage] = field(default_factory=list)
    inference_ledger: list[tuple[str, str]] = field(default_factory=list)
    _opened: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not self.history:
            self.history.append(
                ChatMessage(Role.SYSTEM, render_simulator_prompt(self.vignette)))

    def _ledger_lookup(self, gist: str):
        for entry_gist, answer in self.inference_ledger:
            if entry_gist == gist:
                return answer
        return None

    def _request_messages(self) -> tuple[ChatMessage, ...]:
        messages = list(self.history)
        if self.inference_ledger:
            stated = "\n".join(f"- {answer}"
                               for _, answer in self.inference_ledger)
            messages.insert(1, ChatMessage(
                Role.SYSTEM,
                "Facts you have already stated in this conversation; stay "
                f"consistent with them:\n{stated}"))
        return tuple(messages)

    def open_conversation(self) -> str:
        """Patient's opening statement of the chief complaint."""
        if self._opened:
            raise PreconditionError("conversation already opened")
        reply = self.gateway.complete_chat(ChatRequest(
            model_id=self.model_id,
            messages=self._request_messages(),
            temperature=self.temperature,
            tag="patient_simulator",
        ))
        self.history.append(ChatMessage(Role.ASSISTANT, reply))
        self._opened = True
        return reply

    def respond(self, physician_message: str) -> str:
        """Answer one physician question, replaying ledger facts verbatim."""
        if not self._opened:
            raise PreconditionError("open_conversation must run first")
        gist = question_gist(physician_message)
        replay = self._ledger_lookup(gist)
        if replay is not None:
            self.history.append(ChatMessage(Role.USER, physician_message))
            self.history.append(ChatMessage(Role.ASSISTANT, replay))
            return replay
        self.history.append(ChatMessage(Role.USER, physician_message))
        reply = self.gateway.complete_chat(ChatRequest(
            model_id=self.model_id,
            messages=self._request_messages(),
            temperature=self.temperature,
            tag="patient_simulator",
        ))
        self.history.append(ChatMessage(Role.ASSISTANT, reply))
        if gist and reply not in self.vignette.narrative:
            # Anything not read straight off the vignette counts as an
            # inference and must be repeated verbatim if asked again.
            self.inference_ledger.append((gist, reply))
        return reply


@dataclass(frozen=True)
class JargonFinding:
    turn_index: int
    term: str
    substitute: str
    text: str


def load_lexicon(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {str(k).lower(): str(v) for k, v in raw.items()}


def lint_transcript(history: list[ChatMessage],
                    lexicon: dict[str, str] | None = None) -> list[JargonFinding]:
    """Flag clinical terms in patient turns. Advisory report input only."""
    lexicon = {k.lower(): v for k, v in (lexicon or DEFAULT_LEXICON).items()}
    findings: list[JargonFinding] = []
    for idx, msg in enumerate(history):
        if msg.role is not Role.ASSISTANT:
            continue
        lowered = msg.content.lower()
        for term, substitute in sorted(lexicon.items()):
            if term in lowered:
                findings.append(JargonFinding(idx, term, substitute, msg.content))
    return findings
