/**
 * Questionnaire form state: selection handling, conditional free-text
 * visibility, and client-side validation mirroring the server's rules.
 *
 * The rubric is always the one fetched from the service, never a local
 * copy, so the form cannot drift from the server-side validator.
 */

import type { Answer, FreeTextRule, ReviewPayload, RubricQuestion, Violation } from './types'

export interface FormState {
  rubric: RubricQuestion[]
  answers: Record<string, Answer>
  generalComments: string
}

export function createFormState(rubric: RubricQuestion[]): FormState {
  const answers: Record<string, Answer> = {}
  for (const question of rubric) {
    answers[question.question_id] = { selected: [], free_texts: {} }
  }
  return { rubric, answers, generalComments: '' }
}

function questionById(state: FormState, questionId: string): RubricQuestion {
  const question = state.rubric.find((q) => q.question_id === questionId)
  if (!question) throw new Error(`unknown question ${questionId}`)
  return question
}

function answerFor(state: FormState, questionId: string): Answer {
  const answer = state.answers[questionId]
  if (!answer) throw new Error(`unknown question ${questionId}`)
  return answer
}

/** Radio semantics for single-select, checkbox toggle for multi-select. */
export function selectOption(state: FormState, questionId: string, optionId: string): void {
  const question = questionById(state, questionId)
  if (!question.options.some((o) => o.option_id === optionId)) {
    throw new Error(`unknown option ${optionId} for ${questionId}`)
  }
  const answer = answerFor(state, questionId)
  if (question.multi_select) {
    const at = answer.selected.indexOf(optionId)
    if (at >= 0) answer.selected.splice(at, 1)
    else answer.selected.push(optionId)
  } else {
    answer.selected = [optionId]
  }
  pruneHiddenFreeTexts(question, answer)
}

export function setFreeText(
  state: FormState,
  questionId: string,
  fieldId: string,
  value: string,
): void {
  answerFor(state, questionId).free_texts[fieldId] = value
}

function ruleTriggered(rule: FreeTextRule, selected: string[]): boolean {
  return selected.some((s) => rule.triggering_option_ids.includes(s))
}

/** Free-text areas are visible iff one of their triggering options is selected. */
export function visibleFreeTextRules(question: RubricQuestion, answer: Answer): FreeTextRule[] {
  return question.free_text_rules.filter((rule) => ruleTriggered(rule, answer.selected))
}

/** Entered text for a field whose trigger was deselected must not linger. */
function pruneHiddenFreeTexts(question: RubricQuestion, answer: Answer): void {
  const visibleFields = new Set(visibleFreeTextRules(question, answer).map((r) => r.field_id))
  for (const fieldId of Object.keys(answer.free_texts)) {
    if (!visibleFields.has(fieldId)) delete answer.free_texts[fieldId]
  }
}

/** Same rules as the server; an empty result enables the submit button. */
export function validateForm(state: FormState): Violation[] {
  const violations: Violation[] = []
  for (const question of state.rubric) {
    const qid = question.question_id
    const answer = state.answers[qid]
    if (!answer || answer.selected.length === 0) {
      violations.push({ question_id: qid, rule: 'unanswered', detail: 'no option selected' })
      continue
    }
    const optionIds = new Set(question.options.map((o) => o.option_id))
    const bad = answer.selected.filter((s) => !optionIds.has(s))
    if (bad.length > 0) {
      violations.push({
        question_id: qid,
        rule: 'unknown-option',
        detail: `unknown option(s): ${bad.join(', ')}`,
      })
      continue
    }
    if (!question.multi_select && answer.selected.length !== 1) {
      violations.push({
        question_id: qid,
        rule: 'single-select',
        detail: `expected exactly one selection, got ${answer.selected.length}`,
      })
    }
    if (new Set(answer.selected).size !== answer.selected.length) {
      violations.push({
        question_id: qid,
        rule: 'duplicate-selection',
        detail: 'option selected more than once',
      })
    }
    for (const rule of question.free_text_rules) {
      if (!rule.required) continue
      if (!ruleTriggered(rule, answer.selected)) continue
      const text = answer.free_texts[rule.field_id] ?? ''
      if (text.trim() === '') {
        violations.push({
          question_id: qid,
          rule: 'missing-free-text',
          detail: `'${rule.prompt}' requires a non-empty answer`,
        })
      }
    }
  }
  return violations
}

export function isSubmittable(state: FormState): boolean {
  return validateForm(state).length === 0
}

export function toPayload(
  state: FormState,
  encounterId: string,
  reviewerId: string,
): ReviewPayload {
  return {
    encounter_id: encounterId,
    reviewer_id: reviewerId,
    answers: state.answers,
    general_comments: state.generalComments,
    submitted_at: '',
  }
}
