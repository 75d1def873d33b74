/**
 * Pure view-state reducer for one rating session.
 *
 * Every UI event — pointer or keyboard — funnels through `reduce`, which
 * keeps the clamping invariants (offset within the 5-slice window, opacity
 * within [0, 1]) checkable by property tests without a DOM. Rejected
 * events return the *same* state object, so callers can detect a no-op by
 * reference equality.
 */

import type { Choice, TrialPayload } from './types.js';

export const MIN_OFFSET = -2;
export const MAX_OFFSET = 2;

export interface ViewState {
  trial: TrialPayload | null;
  offset: number; // integer in [MIN_OFFSET, MAX_OFFSET]
  opacity: number; // in [0, 1]
  pending: Choice | null;
  inFlight: boolean;
  visited: number[]; // offsets seen on the current trial
  complete: boolean;
  error: string | null;
}

export type UiEvent =
  | { kind: 'trial'; trial: TrialPayload }
  | { kind: 'nudge-offset'; delta: number }
  | { kind: 'set-opacity'; value: number }
  | { kind: 'nudge-opacity'; delta: number }
  | { kind: 'choose'; choice: Choice }
  | { kind: 'submit' }
  | { kind: 'ack' }
  | { kind: 'fail'; message: string }
  | { kind: 'done' };

export function initialState(): ViewState {
  return {
    trial: null,
    offset: 0,
    opacity: 0.5,
    pending: null,
    inFlight: false,
    visited: [0],
    complete: false,
    error: null,
  };
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

export function reduce(state: ViewState, ev: UiEvent): ViewState {
  switch (ev.kind) {
    case 'trial':
      // a new trial resets navigation but keeps the rater's opacity
      return {
        ...state,
        trial: ev.trial,
        offset: 0,
        visited: [0],
        pending: null,
        inFlight: false,
        error: null,
      };

    case 'nudge-offset': {
      if (!Number.isFinite(ev.delta)) return state;
      const offset = clamp(Math.round(state.offset + ev.delta), MIN_OFFSET, MAX_OFFSET);
      if (offset === state.offset) return state;
      const visited = state.visited.includes(offset)
        ? state.visited
        : [...state.visited, offset];
      return { ...state, offset, visited };
    }

    case 'set-opacity':
      if (!Number.isFinite(ev.value)) return state;
      return { ...state, opacity: clamp(ev.value, 0, 1) };

    case 'nudge-opacity':
      if (!Number.isFinite(ev.delta)) return state;
      return { ...state, opacity: clamp(state.opacity + ev.delta, 0, 1) };

    case 'choose':
      if (state.inFlight || state.complete || !state.trial) return state;
      return { ...state, pending: ev.choice, error: null };

    case 'submit':
      // refuse without a choice, while a request is in flight, or when done
      if (state.inFlight || !state.pending || state.complete || !state.trial)
        return state;
      return { ...state, inFlight: true, error: null };

    case 'ack':
      return { ...state, inFlight: false, pending: null };

    case 'fail':
      // keep the pending choice so the rater can retry
      return { ...state, inFlight: false, error: ev.message };

    case 'done':
      return {
        ...state,
        trial: null,
        pending: null,
        inFlight: false,
        complete: true,
      };
  }
}
