/**
 * Thin fetch wrapper over the rating service. The interface exists so
 * tests can swap in a scripted mock without touching the controller.
 */

import type { Choice, ChoiceAck, SessionInfo, TallyDoc, TrialPayload } from './types.js';

export interface ChoiceBody {
  choice: Choice;
  slices_viewed: number[];
  final_opacity: number;
}

export interface RatingApi {
  createSession(raterId: string, seed: number): Promise<SessionInfo>;
  getTrial(sessionId: string, index: number): Promise<TrialPayload>;
  postChoice(sessionId: string, index: number, body: ChoiceBody): Promise<ChoiceAck>;
  tally(): Promise<TallyDoc>;
}

export class ApiError extends Error {
  constructor(
    message: string,
    public status: number,
    public type: string,
  ) {
    super(message);
  }
}

export class HttpApi implements RatingApi {
  constructor(
    private baseUrl = '',
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let type = 'HttpError';
      let detail = `request failed with status ${resp.status}`;
      try {
        const doc = await resp.json();
        type = doc.error ?? type;
        detail = doc.detail ?? detail;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(detail, resp.status, type);
    }
    return resp.json() as Promise<T>;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  createSession(raterId: string, seed: number): Promise<SessionInfo> {
    return this.post('/sessions', { rater_id: raterId, seed });
  }

  getTrial(sessionId: string, index: number): Promise<TrialPayload> {
    return this.request(`/sessions/${sessionId}/trials/${index}`);
  }

  postChoice(sessionId: string, index: number, body: ChoiceBody): Promise<ChoiceAck> {
    return this.post(`/sessions/${sessionId}/trials/${index}/choice`, body);
  }

  tally(): Promise<TallyDoc> {
    return this.request('/tally');
  }
}
