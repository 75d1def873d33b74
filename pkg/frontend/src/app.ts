/**
 * DOM wiring. All protocol logic lives in the controller and reducer;
 * this file only decodes PNGs, paints canvases, and forwards input
 * events. Both candidate panes always show the same slice offset.
 */

import { HttpApi } from './api.js';
import { composeOverlay, type Raster } from './blend.js';
import { SessionController } from './controller.js';
import { keyEvent } from './keymap.js';
import { MIN_OFFSET, type ViewState } from './state.js';
import type { TrialPayload } from './types.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function decodePng(b64: string): Promise<Raster> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => {
      const c = document.createElement('canvas');
      c.width = img.naturalWidth;
      c.height = img.naturalHeight;
      const ctx = c.getContext('2d')!;
      ctx.drawImage(img, 0, 0);
      const d = ctx.getImageData(0, 0, c.width, c.height);
      resolve({ width: d.width, height: d.height, data: d.data });
    };
    img.onerror = () => reject(new Error('bad image payload'));
    img.src = `data:image/png;base64,${b64}`;
  });
}

interface DecodedTrial {
  base: Raster[];
  overlays: { A: Raster[]; B: Raster[] };
}

let decoded: DecodedTrial | null = null;

async function decodeTrial(trial: TrialPayload): Promise<DecodedTrial> {
  const [base, a, b] = await Promise.all([
    Promise.all(trial.base.map(decodePng)),
    Promise.all(trial.overlays.A.map(decodePng)),
    Promise.all(trial.overlays.B.map(decodePng)),
  ]);
  return { base, overlays: { A: a, B: b } };
}

function paint(canvas: HTMLCanvasElement, raster: Raster): void {
  canvas.width = raster.width;
  canvas.height = raster.height;
  const ctx = canvas.getContext('2d')!;
  const image = ctx.createImageData(raster.width, raster.height);
  image.data.set(raster.data);
  ctx.putImageData(image, 0, 0);
}

function render(state: ViewState): void {
  el('start-screen').hidden = state.trial !== null || state.complete;
  el('trial-screen').hidden = state.trial === null;
  el('done-screen').hidden = !state.complete;
  const err = el('error');
  err.textContent = state.error ?? '';
  err.hidden = !state.error;

  const t = state.trial;
  if (!t || !decoded) return;
  const slice = state.offset - MIN_OFFSET; // offsets arrive sorted [-2..2]
  paint(el<HTMLCanvasElement>('pane-a'),
        composeOverlay(decoded.base[slice], decoded.overlays.A[slice], state.opacity));
  paint(el<HTMLCanvasElement>('pane-b'),
        composeOverlay(decoded.base[slice], decoded.overlays.B[slice], state.opacity));

  el('trial-label').textContent =
    `Trial ${t.trial + 1} / ${t.trial_count} — ${t.roi} (${t.axis}, slice ` +
    `${t.center_index + state.offset})`;
  el('offset-label').textContent =
    state.offset === 0 ? 'center' : `${state.offset > 0 ? '+' : ''}${state.offset}`;
  el<HTMLInputElement>('opacity').value = String(Math.round(state.opacity * 100));
  el('opacity-label').textContent = `${Math.round(state.opacity * 100)}%`;
  for (const choice of ['A', 'B', 'skip'] as const) {
    el(`pick-${choice}`).classList.toggle('picked', state.pending === choice);
  }
  el<HTMLButtonElement>('submit').disabled = !state.pending || state.inFlight;
}

async function showTally(api: HttpApi): Promise<void> {
  const table = el('tally');
  try {
    const doc = await api.tally();
    const rows = Object.entries(doc.rois).map(
      ([roi, c]) =>
        `<tr><td>${roi}</td><td>${c.candidate_1}</td>` +
        `<td>${c.candidate_2}</td><td>${c.skip}</td></tr>`,
    );
    table.innerHTML =
      `<tr><th>ROI</th><th>candidate 1</th><th>candidate 2</th><th>skipped</th></tr>` +
      rows.join('');
    el('tally-note').textContent =
      `${doc.sessions} completed session(s) for study "${doc.study}"`;
  } catch {
    el('tally-note').textContent = 'tally pending: no completed sessions yet';
  }
}

export function main(): void {
  const api = new HttpApi();
  const ctl = new SessionController(api);

  let shownTrial = -1;
  ctl.onChange((state) => {
    const n = state.trial ? state.trial.trial : -1;
    if (n !== shownTrial) {
      shownTrial = n;
      decoded = null;
      if (state.trial) {
        const t = state.trial;
        void decodeTrial(t).then((d) => {
          if (ctl.state.trial === t) {
            decoded = d;
            render(ctl.state);
          }
        });
      }
    }
    if (state.complete) void showTally(api);
    render(state);
  });

  el('start-form').addEventListener('submit', (ev) => {
    ev.preventDefault();
    const rater = el<HTMLInputElement>('rater-id').value.trim();
    const seed = Number(el<HTMLInputElement>('seed').value);
    if (!rater || !Number.isFinite(seed)) return;
    ctl.start(rater, seed).catch((err) => {
      el('start-error').textContent = err instanceof Error ? err.message : String(err);
    });
  });

  el('prev-slice').addEventListener('click', () =>
    ctl.handle({ kind: 'nudge-offset', delta: -1 }));
  el('next-slice').addEventListener('click', () =>
    ctl.handle({ kind: 'nudge-offset', delta: 1 }));
  el<HTMLInputElement>('opacity').addEventListener('input', (ev) => {
    const raw = Number((ev.target as HTMLInputElement).value);
    ctl.handle({ kind: 'set-opacity', value: raw / 100 });
  });
  for (const choice of ['A', 'B', 'skip'] as const) {
    el(`pick-${choice}`).addEventListener('click', () =>
      ctl.handle({ kind: 'choose', choice }));
  }
  el('submit').addEventListener('click', () => ctl.handle({ kind: 'submit' }));

  window.addEventListener('keydown', (ev) => {
    if (ev.target instanceof HTMLInputElement) return;
    const mapped = keyEvent(ev.key);
    if (mapped) {
      ev.preventDefault();
      ctl.handle(mapped);
    }
  });
}

main();
