/**
 * Drives one rating session: loads trials in order, funnels UI events
 * through the reducer, and talks to the service. At most one request is
 * in flight at a time — the reducer refuses a second submit while one is
 * pending, which is what makes double-clicks send exactly one request.
 */

import type { RatingApi } from './api.js';
import { initialState, reduce, type UiEvent, type ViewState } from './state.js';

export class SessionController {
  state: ViewState = initialState();
  sessionId = '';
  trialCount = 0;
  index = 0;

  private listeners: Array<(s: ViewState) => void> = [];

  constructor(private api: RatingApi) {}

  onChange(fn: (s: ViewState) => void): void {
    this.listeners.push(fn);
  }

  private dispatch(ev: UiEvent): boolean {
    const next = reduce(this.state, ev);
    if (next === this.state) return false; // reducer refused the event
    this.state = next;
    for (const fn of this.listeners) fn(next);
    return true;
  }

  /** Open (or re-open) the session and load the first unrecorded trial.
   *
   * The client records trials strictly in order, so the service's
   * `recorded` count doubles as the resume index. */
  async start(raterId: string, seed: number): Promise<void> {
    const info = await this.api.createSession(raterId, seed);
    this.sessionId = info.session_id;
    this.trialCount = info.trial_count;
    this.index = info.recorded;
    if (info.complete) {
      this.dispatch({ kind: 'done' });
    } else {
      await this.loadTrial();
    }
  }

  private async loadTrial(): Promise<void> {
    const trial = await this.api.getTrial(this.sessionId, this.index);
    this.dispatch({ kind: 'trial', trial });
  }

  /** Entry point for all UI events; submit runs its network round trip. */
  handle(ev: UiEvent): void {
    if (ev.kind === 'submit') {
      void this.submit();
    } else {
      this.dispatch(ev);
    }
  }

  async submit(): Promise<void> {
    const choice = this.state.pending;
    if (!this.dispatch({ kind: 'submit' })) return; // no choice, in flight, or done
    const body = {
      choice: choice!,
      slices_viewed: [...this.state.visited].sort((a, b) => a - b),
      final_opacity: this.state.opacity,
    };
    try {
      await this.api.postChoice(this.sessionId, this.index, body);
      this.dispatch({ kind: 'ack' });
      this.index += 1;
      if (this.index >= this.trialCount) {
        this.dispatch({ kind: 'done' });
      } else {
        await this.loadTrial();
      }
    } catch (err) {
      // keeps the pending choice; the rater can hit submit again
      this.dispatch({
        kind: 'fail',
        message: err instanceof Error ? err.message : String(err),
      });
    }
  }
}
