"""`forge` command line interface."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import ehr as ehr_mod
from . import harness, pipeline, verifier
from .evaluation import ReviewResponse, aggregate
from .gateway import Gateway, RemoteHttpBackend, ScriptedBackend
from .orchestrator import TriageAssessment, CaseSummary, DdxState
from .urgency import UrgencyStatus


def _build_gateway(script, base_url) -> Gateway:
    if script:
        return Gateway(ScriptedBackend.from_file(script))
    if base_url:
        return Gateway(RemoteHttpBackend(base_url))
    raise click.UsageError("provide --script (scripted) or --base-url (remote)")


@click.group()
def main():
    """Simulated patient / AI triage encounter tooling."""


@main.command()
@click.argument("input_path", type=click.Path(exists=True))
@click.option("-o", "--output", type=click.Path(), required=True,
              help="Validated records JSONL.")
@click.option("--rejects", type=click.Path(), default=None,
              help="Where to write the rejects report (JSON).")
def ingest(input_path, output, rejects):
    """Validate a JSONL file of encounter records."""
    result = pipeline.ingest(input_path)
    with open(output, "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(dataclasses.asdict(record)) + "\n")
    if rejects:
        with open(rejects, "w", encoding="utf-8") as fh:
            json.dump([dataclasses.asdict(r) for r in result.rejects], fh,
                      indent=2)
    click.echo(f"{len(result.records)} records, {len(result.rejects)} rejects")


@main.command()
@click.argument("records_path", type=click.Path(exists=True))
@click.option("-o", "--output", type=click.Path(), required=True)
@click.option("--script", type=click.Path(exists=True), default=None,
              help="Scripted backend file for the judge model.")
@click.option("--base-url", default=None, help="Remote chat endpoint.")
def classify(records_path, output, script, base_url):
    """Classify records by encounter type and symptom category."""
    gateway = _build_gateway(script, base_url)
    n_initial = 0
    with open(records_path, encoding="utf-8") as src, \
            open(output, "w", encoding="utf-8") as dst:
        for line in src:
            if not line.strip():
                continue
            data = json.loads(line)
            record = pipeline.EncounterRecord.from_dict(data)
            category = pipeline.classify_encounter(record, gateway)
            data["encounter_category"] = category.value
            if category is pipeline.EncounterCategory.INITIAL_ENCOUNTER:
                data["symptom_category"] = \
                    pipeline.classify_symptom(record, gateway).value
                n_initial += 1
            dst.write(json.dumps(data) + "\n")
    click.echo(f"classified; {n_initial} initial encounters")


@main.command()
@click.argument("classified_path", type=click.Path(exists=True))
@click.option("-o", "--output", type=click.Path(), required=True)
@click.option("--manifest", type=click.Path(), default=None)
@click.option("--min", "min_n", default=44, show_default=True)
@click.option("--max", "max_n", default=68, show_default=True)
@click.option("--seed", default=0, show_default=True)
def sample(classified_path, output, manifest, min_n, max_n, seed):
    """Balance initial encounters per symptom category."""
    cases: dict[pipeline.SymptomCategory, list] = {}
    raw_by_id: dict[str, dict] = {}
    with open(classified_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            data = json.loads(line)
            if data.get("encounter_category") != \
                    pipeline.EncounterCategory.INITIAL_ENCOUNTER.value:
                continue
            category = pipeline.SymptomCategory(data["symptom_category"])
            if category is pipeline.SymptomCategory.PSYCHOLOGICAL:
                continue
            record = pipeline.EncounterRecord.from_dict(data)
            cases.setdefault(category, []).append(record)
            raw_by_id[record.record_id] = data
    dataset = pipeline.balance_sample(cases, min_n=min_n, max_n=max_n,
                                      seed=seed)
    with open(output, "w", encoding="utf-8") as fh:
        for record in dataset.records:
            fh.write(json.dumps(raw_by_id[record.record_id]) + "\n")
    if manifest:
        with open(manifest, "w", encoding="utf-8") as fh:
            json.dump(dataset.manifest, fh, indent=2, sort_keys=True)
    click.echo(f"sampled {dataset.manifest['total']} cases")


@main.command()
@click.argument("sampled_path", type=click.Path(exists=True))
@click.option("-o", "--output-dir", type=click.Path(), required=True)
def vignettes(sampled_path, output_dir):
    """Emit one vignette JSON file per sampled case."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(sampled_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            data = json.loads(line)
            record = pipeline.EncounterRecord.from_dict(data)
            vignette = pipeline.build_vignette(
                record, pipeline.SymptomCategory(data["symptom_category"]),
                prior_note=data.get("prior_encounter_note"))
            path = out / f"{vignette.vignette_id}.json"
            path.write_text(json.dumps(vignette.to_dict(), indent=2,
                                       sort_keys=True) + "\n",
                            encoding="utf-8")
            n += 1
    click.echo(f"wrote {n} vignettes to {out}")


@main.group()
def ehr():
    """Historical health data store commands."""


@ehr.command("load")
@click.argument("path", type=click.Path(exists=True))
def ehr_load(path):
    """Validate an EHR items file and report its size."""
    store = ehr_mod.load_store(path)
    click.echo(f"loaded {store.size} items")


@ehr.command("query")
@click.argument("path", type=click.Path(exists=True))
@click.option("--patient", required=True)
@click.option("--plan", "plan_path", type=click.Path(exists=True),
              required=True)
@click.option("--as-of", required=True)
def ehr_query(path, patient, plan_path, as_of):
    """Resolve a data plan against one patient's history."""
    store = ehr_mod.load_store(path)
    with open(plan_path, encoding="utf-8") as fh:
        plan = ehr_mod.DataPlan.from_dict(json.load(fh))
    items = ehr_mod.query(store, patient, plan, as_of)
    click.echo(json.dumps([i.to_dict() for i in items], indent=2))


@main.command()
@click.option("--assessment", "assessment_path",
              type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              required=True)
@click.option("--script", type=click.Path(exists=True), default=None)
@click.option("--base-url", default=None)
def verify(assessment_path, corpus_path, script, base_url):
    """Run the guideline verifier over a persisted assessment."""
    with open(assessment_path, encoding="utf-8") as fh:
        data = json.load(fh)
    assessment = TriageAssessment(
        case_summary=CaseSummary(**data["case_summary"]),
        ddx=DdxState(
            candidates=[(c["condition"], c.get("rationale", ""))
                        for c in data["ddx"]["candidates"]],
            open_questions=data["ddx"].get("open_questions", []),
            reasoning_trace=data["ddx"].get("reasoning_trace", []),
        ),
        urgency=UrgencyStatus(data["urgency"]),
        urgency_reasoning=data.get("urgency_reasoning", ""),
        care_recommendations=data.get("care_recommendations", []),
        escalation_signs=data.get("escalation_signs", []),
        lab_assessment=data.get("lab_assessment"),
        medication_assessment=data.get("medication_assessment"),
    )
    corpus = verifier.load_corpus(corpus_path)
    gateway = _build_gateway(script, base_url)
    outcome = verifier.verify_urgency(assessment, corpus, gateway)
    out_path = Path(assessment_path).with_suffix(".verified.json")
    out_path.write_text(json.dumps(outcome.to_dict(), indent=2,
                                   sort_keys=True) + "\n", encoding="utf-8")
    click.echo(json.dumps(outcome.to_dict(), indent=2, sort_keys=True))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              required=True, help="Run configuration YAML.")
def run(config_path):
    """Run a batch of simulated encounters."""
    config = harness.RunConfig.from_yaml(config_path)
    report = harness.run_batch(config)
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if report.counts.get("error"):
        sys.exit(1)


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_dir", type=click.Path(exists=True),
              required=True)
def serve(port, host, data_dir):
    """Serve the review API over persisted encounter data."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir), host=host, port=port)


@main.command("check-transcripts")
@click.argument("directory", type=click.Path(exists=True))
def check_transcripts(directory):
    """Scan persisted transcripts for structural violations."""
    findings = harness.check_transcripts_dir(directory)
    if not findings:
        click.echo("all transcripts clean")
        return
    for name, problems in findings.items():
        for problem in problems:
            click.echo(f"{name}: {problem}")
    sys.exit(1)


@main.command()
@click.option("--reviews", "reviews_dir", type=click.Path(exists=True),
              required=True)
@click.option("--transcripts", "transcripts_dir", type=click.Path(exists=True),
              required=True)
@click.option("--json-out", type=click.Path(), default=None)
def report(reviews_dir, transcripts_dir, json_out):
    """Aggregate reviews and transcripts into the analytics report."""
    reviews = []
    for path in sorted(Path(reviews_dir).glob("*.json")):
        with open(path, encoding="utf-8") as fh:
            reviews.append(ReviewResponse.from_dict(json.load(fh)))
    transcripts = {}
    for path in sorted(Path(transcripts_dir).glob("*.json")):
        if path.name == "batch_manifest.json":
            continue
        with open(path, encoding="utf-8") as fh:
            transcript = json.load(fh)
        transcripts[transcript["encounter_id"]] = transcript
    result = aggregate(reviews, transcripts)
    if json_out:
        Path(json_out).write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    click.echo(result.to_table())


if __name__ == "__main__":
    main()
