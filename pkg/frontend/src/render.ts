/**
 * HTML-string renderers for the encounter bundle panels and the
 * questionnaire form. No framework: plain templates over wire types,
 * which keeps every panel snapshot-testable.
 */

import type { Answer, EncounterBundle, RubricQuestion, Transcript } from './types'
import { visibleFreeTextRules } from './formState'

const NOT_AVAILABLE = '<em class="not-available">not available</em>'

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
}

function maybe(value: string | null | undefined): string {
  return value == null || value === '' ? NOT_AVAILABLE : escapeHtml(value)
}

// Transcript phases get a stable CSS class; colors live in the stylesheet.
function phaseClass(phase: string): string {
  return `phase-${phase.replace(/[^a-z0-9]+/gi, '-').toLowerCase()}`
}

export function renderVignettePanel(bundle: EncounterBundle): string {
  const vignette = bundle.vignette
  const narrative = vignette ? String(vignette['narrative'] ?? '') : ''
  return [
    '<section class="panel panel-vignette">',
    '<h2>Case vignette</h2>',
    `<pre>${maybe(narrative)}</pre>`,
    '</section>',
  ].join('\n')
}

export function renderPriorNotePanel(bundle: EncounterBundle): string {
  return [
    '<section class="panel panel-prior-note">',
    '<h2>Last prior-encounter note</h2>',
    `<p>${maybe(bundle.prior_encounter_note)}</p>`,
    '</section>',
  ].join('\n')
}

export function renderTranscriptPanel(transcript: Transcript): string {
  const rows = transcript.turns.map(
    (turn) =>
      `<div class="turn ${turn.speaker} ${phaseClass(turn.phase)}">` +
      `<span class="speaker">${turn.speaker === 'patient' ? 'Patient' : 'Doctor'}</span>` +
      `<span class="phase">${escapeHtml(turn.phase)}</span>` +
      `<span class="text">${escapeHtml(turn.text)}</span></div>`,
  )
  const legend = [...new Set(transcript.turns.map((t) => t.phase))]
    .map((p) => `<span class="${phaseClass(p)}">${escapeHtml(p)}</span>`)
    .join(' ')
  return [
    '<section class="panel panel-transcript">',
    '<h2>Conversation</h2>',
    `<div class="legend">${legend}</div>`,
    ...rows,
    '</section>',
  ].join('\n')
}

export function renderAssessmentPanel(bundle: EncounterBundle): string {
  const assessment = bundle.assessment
  if (!assessment) {
    return [
      '<section class="panel panel-assessment">',
      '<h2>Assessment</h2>',
      `<p>${NOT_AVAILABLE}</p>`,
      '</section>',
    ].join('\n')
  }
  const ddx = assessment.ddx.candidates
    .map((c, i) => `<li>Diagnosis ${i + 1}: ${escapeHtml(c.condition)}</li>`)
    .join('\n')
  const verifier = bundle.verifier_outcome
    ? `adjusted: ${bundle.verifier_outcome.adjusted}, final: ` +
      escapeHtml(bundle.verifier_outcome.final)
    : 'guideline verification: not run'
  return [
    '<section class="panel panel-assessment">',
    '<h2>Assessment</h2>',
    `<p class="urgency">Urgency: ${escapeHtml(assessment.urgency)}</p>`,
    `<p>${maybe(assessment.urgency_reasoning)}</p>`,
    `<ol class="ddx">${ddx}</ol>`,
    `<p>Laboratory assessment: ${maybe(assessment.lab_assessment)}</p>`,
    `<p>Medication assessment: ${maybe(assessment.medication_assessment)}</p>`,
    `<ul class="recommendations">${assessment.care_recommendations
      .map((r) => `<li>${escapeHtml(r)}</li>`)
      .join('')}</ul>`,
    `<ul class="escalation">${assessment.escalation_signs
      .map((s) => `<li>${escapeHtml(s)}</li>`)
      .join('')}</ul>`,
    `<p class="verifier">${verifier}</p>`,
    '</section>',
  ].join('\n')
}

export function renderBundle(bundle: EncounterBundle): string {
  return [
    renderVignettePanel(bundle),
    renderPriorNotePanel(bundle),
    renderTranscriptPanel(bundle.transcript),
    renderAssessmentPanel(bundle),
  ].join('\n')
}

export function renderQuestion(question: RubricQuestion, answer: Answer): string {
  const type = question.multi_select ? 'checkbox' : 'radio'
  const controls = question.options.map((option) => {
    const checked = answer.selected.includes(option.option_id) ? ' checked' : ''
    return (
      `<label><input type="${type}" name="${question.question_id}" ` +
      `value="${option.option_id}"${checked}> ${escapeHtml(option.label)}</label>`
    )
  })
  const freeTexts = visibleFreeTextRules(question, answer).map(
    (rule) =>
      `<div class="free-text" data-field="${rule.field_id}">` +
      `<label>${escapeHtml(rule.prompt)}${rule.required ? ' *' : ''}</label>` +
      `<textarea name="${question.question_id}.${rule.field_id}">` +
      `${escapeHtml(answer.free_texts[rule.field_id] ?? '')}</textarea></div>`,
  )
  return [
    `<fieldset id="${question.question_id}">`,
    `<legend>${escapeHtml(question.prompt)}</legend>`,
    ...controls,
    ...freeTexts,
    '</fieldset>',
  ].join('\n')
}

export function renderProgress(current: number, total: number): string {
  return `<div class="progress">Encounter ${current} of ${total}</div>`
}
