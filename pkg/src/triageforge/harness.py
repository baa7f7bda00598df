"""Runs complete simulated encounters and persists their artifacts.

One encounter = patient simulator x triage orchestrator x optional
guideline verifier. Batches run in a bounded worker pool; one failing
encounter never takes down the batch.
"""

from __future__ import annotations

import concurrent.futures
import datetime
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .ehr import EhrStore, load_store
from .gateway import Gateway, RemoteHttpBackend, ScriptedBackend
from .orchestrator import (
    AskPatient,
    Budgets,
    Finished,
    PhaseAdvanced,
    TriageOrchestrator,
)
from .pipeline import PatientVignette
from .simulator import SimulatorSession
from .verifier import GuidelineCorpus, load_corpus, verify_urgency

FIXED_EPOCH = "1970-01-01T00:00:00+00:00"


@dataclass
class RunConfig:
    dataset_dir: Path
    output_dir: Path
    backend: str = "scripted"  # scripted | remote_http
    scripts_dir: Optional[Path] = None
    corpus_path: Optional[Path] = None
    ehr_path: Optional[Path] = None
    parallelism: int = 1
    symptom_budget: int = 12
    ddx_budget: int = 6
    seed: int = 0
    fixed_clock: bool = True
    remote_base_url: Optional[str] = None
    auth_token_env: str = "TRIAGEFORGE_API_TOKEN"

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.dataset_dir = Path(self.dataset_dir)
        self.output_dir = Path(self.output_dir)
        if self.scripts_dir is not None:
            self.scripts_dir = Path(self.scripts_dir)
        if self.corpus_path is not None:
            self.corpus_path = Path(self.corpus_path)
        if self.ehr_path is not None:
            self.ehr_path = Path(self.ehr_path)

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return cls(**raw)


def _now(config: RunConfig) -> str:
    if config.fixed_clock:
        return FIXED_EPOCH
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _make_gateway(config: RunConfig, vignette_id: str) -> Gateway:
    if config.backend == "scripted":
        if config.scripts_dir is None:
            raise ValueError("scripted backend requires scripts_dir")
        script_path = config.scripts_dir / f"{vignette_id}.json"
        return Gateway(ScriptedBackend.from_file(script_path))
    if config.backend == "remote_http":
        if not config.remote_base_url:
            raise ValueError("remote backend requires remote_base_url")
        return Gateway(RemoteHttpBackend(config.remote_base_url,
                                         auth_token_env=config.auth_token_env))
    raise ValueError(f"unknown backend {config.backend!r}")


def run_encounter(vignette: PatientVignette, config: RunConfig,
                  gateway: Optional[Gateway] = None,
                  store: Optional[EhrStore] = None,
                  corpus: Optional[GuidelineCorpus] = None) -> dict:
    """Drive one full simulated encounter; errors end up in the transcript."""
    encounter_id = f"enc-{vignette.vignette_id}"
    started_at = _now(config)
    turns: list[dict] = []
    turn_index = 0

    def add_turn(speaker: str, text: str, phase: str):
        nonlocal turn_index
        turns.append({"speaker": speaker, "text": text, "phase": phase,
                      "turn_index": turn_index})
        turn_index += 1

    session = None
    assessment = None
    outcome = None
    error = None
    try:
        if gateway is None:
            gateway = _make_gateway(config, vignette.vignette_id)
        if store is None and config.ehr_path is not None:
            store = load_store(config.ehr_path)
        if corpus is None and config.corpus_path is not None:
            corpus = load_corpus(config.corpus_path)

        orchestrator = TriageOrchestrator(
            gateway, store,
            budgets=Budgets(symptom_questions=config.symptom_budget,
                            ddx_questions=config.ddx_budget))
        simulator = SimulatorSession(vignette, gateway)
        session = orchestrator.start_session(
            encounter_id,
            vignette.patient_id or vignette.source_record_id,
            vignette.encounter_date or "9999-12-31")

        opening = simulator.open_conversation()
        add_turn("patient", opening, session.phase.value)
        patient_message: Optional[str] = opening

        while True:
            result = orchestrator.agent_turn(session, patient_message)
            patient_message = None
            if isinstance(result, AskPatient):
                add_turn("agent", result.text, session.phase.value)
                answer = simulator.respond(result.text)
                add_turn("patient", answer, session.phase.value)
                patient_message = answer
            elif isinstance(result, PhaseAdvanced):
                continue
            elif isinstance(result, Finished):
                assessment = result.assessment
                add_turn("agent", session.conversation[-1].content,
                         session.phase.value)
                break

        if corpus is not None and assessment is not None:
            outcome = verify_urgency(assessment, corpus, gateway)
    except Exception as exc:  # crash isolation: capture, never propagate
        error = f"{type(exc).__name__}: {exc}"

    annotations = list(session.annotations) if session else []
    if error is not None:
        termination = "error"
    elif any(a.endswith("budget_exceeded") for a in annotations):
        termination = "budget_exceeded"
    else:
        termination = "completed"

    final_urgency = None
    if assessment is not None:
        final_urgency = (outcome.final if outcome is not None
                         else assessment.urgency).value

    return {
        "encounter_id": encounter_id,
        "vignette_id": vignette.vignette_id,
        "started_at": started_at,
        "ended_at": _now(config),
        "turns": turns,
        "internal_steps": [s.to_dict() for s in session.internal_steps]
        if session else [],
        "assessment": assessment.to_dict() if assessment else None,
        "verifier_outcome": outcome.to_dict() if outcome else None,
        "ddx_candidates": (assessment.to_dict()["ddx"]["candidates"]
                           if assessment else []),
        "final_urgency": final_urgency,
        "annotations": annotations,
        "termination": termination,
        "error": error,
    }


def load_vignettes(dataset_dir: Path) -> list[PatientVignette]:
    vignettes = []
    for path in sorted(Path(dataset_dir).glob("*.json")):
        with open(path, encoding="utf-8") as fh:
            vignettes.append(PatientVignette.from_dict(json.load(fh)))
    return vignettes


def write_transcript(transcript: dict, output_dir: Path) -> Path:
    transcripts_dir = Path(output_dir) / "transcripts"
    transcripts_dir.mkdir(parents=True, exist_ok=True)
    path = transcripts_dir / f"{transcript['encounter_id']}.json"
    path.write_text(json.dumps(transcript, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


@dataclass
class BatchReport:
    encounter_ids: list[str]
    counts: dict[str, int]
    wall_time_s: float

    def to_dict(self) -> dict:
        return {"encounter_ids": self.encounter_ids, "counts": self.counts,
                "wall_time_s": self.wall_time_s}


def run_batch(config: RunConfig) -> BatchReport:
    vignettes = load_vignettes(config.dataset_dir)
    if not vignettes:
        raise ValueError(f"no vignettes found under {config.dataset_dir}")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    probe = config.output_dir / ".write-probe"
    probe.write_text("")  # fail before any run if the dir is unwritable
    probe.unlink()

    store = load_store(config.ehr_path) if config.ehr_path else None
    corpus = load_corpus(config.corpus_path) if config.corpus_path else None

    started = time.monotonic()
    counts = {"completed": 0, "budget_exceeded": 0, "error": 0}
    encounter_ids = []

    def one(vignette: PatientVignette) -> dict:
        # Gateway (and with it any script state) is scoped per encounter.
        try:
            gateway = _make_gateway(config, vignette.vignette_id)
        except Exception as exc:
            return {
                "encounter_id": f"enc-{vignette.vignette_id}",
                "vignette_id": vignette.vignette_id,
                "started_at": _now(config), "ended_at": _now(config),
                "turns": [], "internal_steps": [], "assessment": None,
                "verifier_outcome": None, "ddx_candidates": [],
                "final_urgency": None, "annotations": [],
                "termination": "error", "error": f"{type(exc).__name__}: {exc}",
            }
        return run_encounter(vignette, config, gateway=gateway,
                             store=store, corpus=corpus)

    with concurrent.futures.ThreadPoolExecutor(
            max_workers=config.parallelism) as pool:
        for transcript in pool.map(one, vignettes):
            write_transcript(transcript, config.output_dir)
            counts[transcript["termination"]] += 1
            encounter_ids.append(transcript["encounter_id"])

    encounter_ids.sort()
    report = BatchReport(encounter_ids=encounter_ids, counts=counts,
                         wall_time_s=time.monotonic() - started)
    manifest_path = config.output_dir / "batch_manifest.json"
    manifest_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return report


def check_transcript(transcript: dict) -> list[str]:
    """Structural violations in one transcript; empty list means clean."""
    problems = []
    turns = transcript.get("turns", [])
    last_index = None
    for pos, turn in enumerate(turns):
        expected = "patient" if pos % 2 == 0 else "agent"
        if turn["speaker"] != expected:
            problems.append(
                f"turn {pos}: expected speaker {expected}, got {turn['speaker']}")
        if last_index is not None and turn["turn_index"] <= last_index:
            problems.append(f"turn {pos}: turn_index not strictly increasing")
        last_index = turn["turn_index"]
    return problems


def check_transcripts_dir(directory: Path) -> dict[str, list[str]]:
    findings = {}
    for path in sorted(Path(directory).glob("*.json")):
        if path.name == "batch_manifest.json":
            continue
        with open(path, encoding="utf-8") as fh:
            transcript = json.load(fh)
        problems = check_transcript(transcript)
        if problems:
            findings[path.name] = problems
    return findings
