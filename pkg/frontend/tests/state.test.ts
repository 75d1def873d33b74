import { describe, expect, it } from 'vitest';

import {
  initialState,
  MAX_OFFSET,
  MIN_OFFSET,
  reduce,
  type UiEvent,
  type ViewState,
} from '../src/state.js';
import type { TrialPayload } from '../src/types.js';

function makeTrial(n = 0): TrialPayload {
  return {
    trial: n,
    trial_count: 56,
    subject: 'subj0',
    roi: 'HVC',
    axis: 'coronal',
    center_index: 30,
    offsets: [-2, -1, 0, 1, 2],
    recorded: false,
    base: ['x', 'x', 'x', 'x', 'x'],
    overlays: { A: ['x', 'x', 'x', 'x', 'x'], B: ['x', 'x', 'x', 'x', 'x'] },
  };
}

function lcg(seed: number): () => number {
  let s = seed >>> 0 || 1;
  return () => {
    s = (Math.imul(s, 1664525) + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}

const WILD = [0, 1, -1, 0.5, -0.5, 3, -3, 1e9, -1e9, 1e-9, NaN, Infinity, -Infinity];

function randomEvent(rand: () => number): UiEvent {
  const roll = rand();
  const wild = () => WILD[Math.floor(rand() * WILD.length)];
  if (roll < 0.25) return { kind: 'nudge-offset', delta: wild() };
  if (roll < 0.45) return { kind: 'set-opacity', value: wild() };
  if (roll < 0.65) return { kind: 'nudge-opacity', delta: wild() };
  if (roll < 0.75)
    return { kind: 'choose', choice: (['A', 'B', 'skip'] as const)[Math.floor(rand() * 3)] };
  if (roll < 0.82) return { kind: 'submit' };
  if (roll < 0.88) return { kind: 'ack' };
  if (roll < 0.93) return { kind: 'fail', message: 'induced' };
  if (roll < 0.97) return { kind: 'trial', trial: makeTrial(Math.floor(rand() * 56)) };
  return { kind: 'done' };
}

// plain throws instead of expect(): this runs 200k times in the hot loop
function checkInvariants(state: ViewState, context: string): void {
  const bad = (what: string) => {
    throw new Error(`${what} violated ${context}: ${JSON.stringify(state)}`);
  };
  if (!Number.isInteger(state.offset)) bad('integer offset');
  if (state.offset < MIN_OFFSET || state.offset > MAX_OFFSET) bad('offset clamp');
  if (!(state.opacity >= 0 && state.opacity <= 1)) bad('opacity clamp');
  for (const v of state.visited) {
    if (v < MIN_OFFSET || v > MAX_OFFSET) bad('visited range');
  }
  if (state.inFlight && state.pending === null) bad('in-flight without choice');
}

describe('view-state reducer', () => {
  it('keeps offset and opacity clamped under 10000 random event sequences', () => {
    for (let seq = 0; seq < 10000; seq++) {
      const rand = lcg(seq + 1);
      let state = initialState();
      for (let step = 0; step < 20; step++) {
        state = reduce(state, randomEvent(rand));
        checkInvariants(state, `at seq ${seq} step ${step}`);
      }
    }
    expect(true).toBe(true); // reaching here means no sequence broke a clamp
  });

  it('walks the slice window and stops at the edges', () => {
    let s = initialState();
    s = reduce(s, { kind: 'trial', trial: makeTrial() });
    s = reduce(s, { kind: 'nudge-offset', delta: 1 });
    s = reduce(s, { kind: 'nudge-offset', delta: 1 });
    expect(s.offset).toBe(2);
    s = reduce(s, { kind: 'nudge-offset', delta: 1 });
    expect(s.offset).toBe(2); // window bound
    for (let i = 0; i < 10; i++) s = reduce(s, { kind: 'nudge-offset', delta: -1 });
    expect(s.offset).toBe(-2);
    expect([...s.visited].sort((a, b) => a - b)).toEqual([-2, -1, 0, 1, 2]);
  });

  it('tracks visited offsets without duplicates', () => {
    let s = reduce(initialState(), { kind: 'trial', trial: makeTrial() });
    s = reduce(s, { kind: 'nudge-offset', delta: 1 });
    s = reduce(s, { kind: 'nudge-offset', delta: -1 });
    s = reduce(s, { kind: 'nudge-offset', delta: 1 });
    expect([...s.visited].sort((a, b) => a - b)).toEqual([0, 1]);
  });

  it('clamps opacity from both directions and survives junk input', () => {
    let s = initialState();
    s = reduce(s, { kind: 'set-opacity', value: 1.7 });
    expect(s.opacity).toBe(1);
    s = reduce(s, { kind: 'nudge-opacity', delta: -99 });
    expect(s.opacity).toBe(0);
    const before = s;
    s = reduce(s, { kind: 'set-opacity', value: NaN });
    expect(s).toBe(before); // refused, by reference
  });

  it('refuses submit without a pending choice', () => {
    const s = reduce(initialState(), { kind: 'trial', trial: makeTrial() });
    expect(reduce(s, { kind: 'submit' })).toBe(s);
  });

  it('refuses a second submit while one is in flight', () => {
    let s = reduce(initialState(), { kind: 'trial', trial: makeTrial() });
    s = reduce(s, { kind: 'choose', choice: 'A' });
    s = reduce(s, { kind: 'submit' });
    expect(s.inFlight).toBe(true);
    expect(reduce(s, { kind: 'submit' })).toBe(s);
    expect(reduce(s, { kind: 'choose', choice: 'B' })).toBe(s);
  });

  it('keeps the pending choice after a failed submit for retry', () => {
    let s = reduce(initialState(), { kind: 'trial', trial: makeTrial() });
    s = reduce(s, { kind: 'choose', choice: 'skip' });
    s = reduce(s, { kind: 'submit' });
    s = reduce(s, { kind: 'fail', message: 'connection reset' });
    expect(s.inFlight).toBe(false);
    expect(s.pending).toBe('skip');
    expect(s.error).toBe('connection reset');
    expect(reduce(s, { kind: 'submit' }).inFlight).toBe(true);
  });

  it('ignores every choice event once the session is done', () => {
    const s = reduce(initialState(), { kind: 'done' });
    expect(s.complete).toBe(true);
    expect(reduce(s, { kind: 'choose', choice: 'A' })).toBe(s);
    expect(reduce(s, { kind: 'submit' })).toBe(s);
  });
});
