/**
 * Thin client over the review service HTTP API. The console never
 * touches files directly; everything flows through these endpoints.
 */

import type {
  EncounterBundle,
  EncounterSummary,
  ReviewPayload,
  RubricQuestion,
  Violation,
} from './types'

export type SubmitResult =
  | { kind: 'accepted' }
  | { kind: 'invalid'; violations: Violation[] }
  | { kind: 'conflict'; message: string }

export class NotFoundError extends Error {}

type FetchLike = typeof fetch

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`)
    if (response.status === 404) {
      throw new NotFoundError(`${path} not found`)
    }
    if (!response.ok) {
      throw new Error(`GET ${path} failed with ${response.status}`)
    }
    return (await response.json()) as T
  }

  getRubric(): Promise<RubricQuestion[]> {
    return this.getJson('/rubric')
  }

  listEncounters(): Promise<EncounterSummary[]> {
    return this.getJson('/encounters')
  }

  getBundle(encounterId: string): Promise<EncounterBundle> {
    return this.getJson(`/encounters/${encounterId}/bundle`)
  }

  listReviews(encounterId?: string): Promise<ReviewPayload[]> {
    const query = encounterId ? `?encounter_id=${encodeURIComponent(encounterId)}` : ''
    return this.getJson(`/reviews${query}`)
  }

  getAggregateReport(): Promise<{ report: Record<string, unknown>; table: string }> {
    return this.getJson('/reports/aggregate')
  }

  async submitReview(payload: ReviewPayload): Promise<SubmitResult> {
    const response = await this.fetchImpl(`${this.baseUrl}/reviews`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    })
    if (response.status === 422) {
      const body = (await response.json()) as { violations: Violation[] }
      return { kind: 'invalid', violations: body.violations }
    }
    if (response.status === 409) {
      const body = (await response.json()) as { detail?: string }
      return { kind: 'conflict', message: body.detail ?? 'review already submitted' }
    }
    if (response.status === 404) {
      throw new NotFoundError(`encounter ${payload.encounter_id} not found`)
    }
    if (!response.ok) {
      throw new Error(`POST /reviews failed with ${response.status}`)
    }
    return { kind: 'accepted' }
  }
}
