import json

import pytest

from triageforge.ehr import EhrStore, HealthDataItem, ItemKind
from triageforge.gateway import Gateway, ScriptedBackend, ScriptEntry
from triageforge.pipeline import PatientVignette, SymptomCategory


@pytest.fixture
def vignette():
    return PatientVignette(
        vignette_id="vig-r1",
        source_record_id="r1",
        symptom_category=SymptomCategory.GASTROINTESTINAL,
        age=34,
        gender="female",
        narrative=(
            "Demographics: 34-year-old female\n"
            "Chief complaint: abdominal pain\n"
            "History of present illness: Crampy belly pain since yesterday "
            "evening, worse after meals, with some nausea."
        ),
        structured_facts={
            "demographics": "34-year-old female",
            "chief_complaint": "abdominal pain",
            "history_of_present_illness":
                "Crampy belly pain since yesterday evening, worse after "
                "meals, with some nausea.",
        },
        prior_encounter_note="Seen last year for a sprained ankle.",
        patient_id="p1",
        encounter_date="2024-03-01",
    )


def full_encounter_script():
    """Script for one complete encounter, keyed by (tag, per-tag turn)."""
    return [
        # Patient simulator: opening, then one answer per agent question.
        {"tag": "patient_simulator", "turn_index": 0,
         "response": "My stomach has been hurting since yesterday."},
        {"tag": "patient_simulator", "turn_index": 1,
         "response": "It's mostly around my belly button, started last "
                     "night after dinner."},
        {"tag": "patient_simulator", "turn_index": 2,
         "response": "It's crampy, it doesn't spread anywhere, and I feel "
                     "a bit sick to my stomach."},
        {"tag": "patient_simulator", "turn_index": 3,
         "response": "It comes and goes, eating makes it worse, maybe a 5 "
                     "out of 10."},
        {"tag": "patient_simulator", "turn_index": 4,
         "response": "No, I haven't had any fever or chills."},
        # Symptom collector: three questions covering all dimensions.
        {"tag": "symptom_collector", "turn_index": 0,
         "response": "COVERS: site, onset\n"
                     "QUESTION: Where exactly is the pain, and when did it start?"},
        {"tag": "symptom_collector", "turn_index": 1,
         "response": "COVERS: character, radiation, associations\n"
                     "QUESTION: What does the pain feel like, does it spread, "
                     "and have you noticed anything else along with it?"},
        {"tag": "symptom_collector", "turn_index": 2,
         "response": "COVERS: time_course, exacerbating_relieving, severity\n"
                     "QUESTION: Is it constant or does it come and go, does "
                     "anything make it better or worse, and how bad is it?"},
        {"tag": "symptom_collector", "turn_index": 3,
         "response": "SYMPTOMS_COMPLETE"},
        # Primary agent: pass patient-visible text through unchanged.
        {"tag": "primary", "echo_user": True},
        # Health data planner: a plan, then a retrieval confirmation.
        {"tag": "health_data_planner", "turn_index": 0,
         "response": "```json\n"
                     "{\"requested\": [{\"item_kind\": \"lab_result\", "
                     "\"name_pattern\": \"hemoglobin\", "
                     "\"recency\": \"most_recent\"}], "
                     "\"rationale\": \"rule out anemia from GI loss\"}\n"
                     "```"},
        {"tag": "health_data_planner", "turn_index": 1,
         "response": "Confirmed: the retrieved records are the most recent."},
        # Summary agent.
        {"tag": "summary",
         "response": "```json\n"
                     "{\"chief_complaint\": \"abdominal pain\", "
                     "\"key_positive_findings\": [\"crampy periumbilical "
                     "pain\", \"nausea\", \"worse after meals\"], "
                     "\"key_negative_findings\": [\"no fever\"], "
                     "\"relevant_history\": \"no prior abdominal surgery\", "
                     "\"data_highlights\": [\"hemoglobin 13.1 g/dL\"]}\n"
                     "```"},
        # Differential: one narrowing question, then the ranked list.
        {"tag": "differential_diagnosis", "turn_index": 0,
         "response": "QUESTION: Have you had any fever or chills?\n"
                     "RATIONALE: Fever points toward infection over a "
                     "functional cause."},
        {"tag": "differential_diagnosis", "turn_index": 1,
         "response": "```json\n"
                     "{\"candidates\": ["
                     "{\"condition\": \"Gastroenteritis\", \"rationale\": "
                     "\"acute crampy pain with nausea\"}, "
                     "{\"condition\": \"Irritable bowel syndrome\", "
                     "\"rationale\": \"meal-related crampy pain\"}, "
                     "{\"condition\": \"Appendicitis\", \"rationale\": "
                     "\"periumbilical onset warrants vigilance\"}], "
                     "\"open_questions\": []}\n"
                     "```"},
        # Next steps.
        {"tag": "next_steps",
         "response": "```json\n"
                     "{\"urgency\": \"follow_up_pcp\", "
                     "\"urgency_reasoning\": \"Symptoms are mild but "
                     "persistent; a PCP visit within a few days is "
                     "appropriate.\", "
                     "\"care_recommendations\": [\"small bland meals\", "
                     "\"stay hydrated\"], "
                     "\"escalation_signs\": [\"pain moves to the lower "
                     "right side\", \"fever above 38C\", \"persistent "
                     "vomiting\"], "
                     "\"lab_assessment\": \"Hemoglobin is normal, arguing "
                     "against significant GI bleeding.\", "
                     "\"medication_assessment\": \"No current medications "
                     "to assess.\"}\n"
                     "```"},
        # Guideline matcher: one call per differential candidate.
        {"tag": "guideline_matcher", "turn_index": 0,
         "response": "Gastroenteritis"},
        {"tag": "guideline_matcher", "turn_index": 1, "response": "none"},
        {"tag": "guideline_matcher", "turn_index": 2,
         "response": "Appendicitis"},
    ]


def guideline_corpus_docs():
    return [
        {"guideline_id": "g1", "condition_name": "Gastroenteritis",
         "synonyms": ["stomach flu"], "recommended_urgency": "self_care",
         "summary": "Synthetic placeholder guideline, not clinical advice.",
         "source_citation": "fixture"},
        {"guideline_id": "g2", "condition_name": "Appendicitis",
         "synonyms": [], "recommended_urgency": "urgent_or_emergency",
         "summary": "Synthetic placeholder guideline, not clinical advice.",
         "source_citation": "fixture"},
        {"guideline_id": "g3", "condition_name": "Influenza",
         "synonyms": ["flu"], "recommended_urgency": "self_care",
         "summary": "Synthetic placeholder guideline, not clinical advice.",
         "source_citation": "fixture"},
        {"guideline_id": "g4", "condition_name": "Common cold",
         "synonyms": ["URI", "viral upper respiratory infection"],
         "recommended_urgency": "self_care",
         "summary": "Synthetic placeholder guideline, not clinical advice.",
         "source_citation": "fixture"},
    ]


def ehr_items():
    return [
        HealthDataItem(patient_id="p1", item_kind=ItemKind.LAB_RESULT,
                       name="Hemoglobin", value="13.1", unit="g/dL",
                       observed_date="2024-01-15", source_record_id="r0"),
        HealthDataItem(patient_id="p1", item_kind=ItemKind.LAB_RESULT,
                       name="Hemoglobin", value="12.8", unit="g/dL",
                       observed_date="2023-06-01", source_record_id="r-1"),
        HealthDataItem(patient_id="p1", item_kind=ItemKind.MEDICATION,
                       name="Ibuprofen", value="200 mg as needed",
                       observed_date="2023-06-01", source_record_id="r-1"),
    ]


@pytest.fixture
def scripted_gateway():
    entries = [ScriptEntry.from_dict(d) for d in full_encounter_script()]
    return Gateway(ScriptedBackend(entries))


@pytest.fixture
def ehr_store():
    return EhrStore(ehr_items())


@pytest.fixture
def corpus(tmp_path):
    from triageforge.verifier import load_corpus

    path = tmp_path / "corpus.json"
    path.write_text(json.dumps(guideline_corpus_docs()))
    return load_corpus(path)
