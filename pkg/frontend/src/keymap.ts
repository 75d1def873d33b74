/**
 * Keyboard bindings. Each key maps to exactly the event its pointer
 * counterpart dispatches, so the two input paths cannot drift apart:
 * arrows step slices, brackets step opacity, A/B/S pick a choice,
 * Enter submits.
 */

import type { UiEvent } from './state.js';

export const OPACITY_KEY_STEP = 0.05;

export function keyEvent(key: string): UiEvent | null {
  switch (key) {
    case 'ArrowLeft':
    case 'ArrowDown':
      return { kind: 'nudge-offset', delta: -1 };
    case 'ArrowRight':
    case 'ArrowUp':
      return { kind: 'nudge-offset', delta: 1 };
    case '[':
      return { kind: 'nudge-opacity', delta: -OPACITY_KEY_STEP };
    case ']':
      return { kind: 'nudge-opacity', delta: OPACITY_KEY_STEP };
    case 'a':
    case 'A':
      return { kind: 'choose', choice: 'A' };
    case 'b':
    case 'B':
      return { kind: 'choose', choice: 'B' };
    case 's':
    case 'S':
      return { kind: 'choose', choice: 'skip' };
    case 'Enter':
      return { kind: 'submit' };
    default:
      return null;
  }
}
