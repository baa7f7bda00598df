// Wire types mirroring the review service's JSON payloads.

export interface RubricOption {
  option_id: string
  label: string
}

export interface FreeTextRule {
  triggering_option_ids: string[]
  prompt: string
  required: boolean
  field_id: string
}

export interface RubricQuestion {
  question_id: string
  prompt: string
  options: RubricOption[]
  free_text_rules: FreeTextRule[]
  multi_select: boolean
  affirmative_option_id: string | null
  na_option_id: string | null
}

export interface Answer {
  selected: string[]
  free_texts: Record<string, string>
}

export interface ReviewPayload {
  encounter_id: string
  reviewer_id: string
  answers: Record<string, Answer>
  general_comments: string
  submitted_at: string
}

export interface Violation {
  question_id: string
  rule: string
  detail: string
}

export interface TranscriptTurn {
  speaker: 'patient' | 'agent'
  text: string
  phase: string
  turn_index: number
}

export interface Transcript {
  encounter_id: string
  vignette_id: string
  turns: TranscriptTurn[]
  termination: string
  final_urgency: string | null
  annotations: string[]
  error: string | null
}

export interface Assessment {
  urgency: string
  urgency_reasoning: string
  care_recommendations: string[]
  escalation_signs: string[]
  lab_assessment: string | null
  medication_assessment: string | null
  case_summary: Record<string, unknown>
  ddx: { candidates: { condition: string; rationale: string }[] }
}

export interface VerifierOutcome {
  original: string
  final: string
  adjusted: boolean
  explanation: string
}

export interface EncounterBundle {
  encounter_id: string
  vignette: Record<string, unknown> | null
  prior_encounter_note: string | null
  transcript: Transcript
  assessment: Assessment | null
  verifier_outcome: VerifierOutcome | null
}

export interface EncounterSummary {
  encounter_id: string
  vignette_id: string
  termination: string
  final_urgency: string | null
  n_turns: number
  n_reviews: number
}
