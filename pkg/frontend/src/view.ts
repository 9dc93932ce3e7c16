// DOM rendering.  Everything on screen derives from the ViewModel; no
// handler mutates conversation or phase locally.

import { allowedControls, type ViewModel } from './state.js';
import type { SignalPreview } from './types.js';

const PHASE_CLASSES: Record<string, string> = {
  Idle: 'badge-idle',
  Recording: 'badge-active',
  Decoding: 'badge-active',
  Prompting: 'badge-active',
  Displaying: 'badge-ready',
  AwaitFollowUp: 'badge-ready',
  Error: 'badge-error',
};

export const SIMULATED_SENTENCES = ['Call', 'Restaurant', 'Venus'] as const;

export interface ControlHandlers {
  onStart: () => void;
  onContinue: () => void;
  onReset: () => void;
  onSimulate: (label: string) => void;
}

export function buildLayout(root: HTMLElement, handlers: ControlHandlers): void {
  root.innerHTML = `
    <div id="banner" class="banner" hidden></div>
    <header>
      <span id="phase" class="badge badge-idle">Idle</span>
      <span id="topic"></span>
    </header>
    <section id="decoded">
      <div id="decoded-text"></div>
      <div class="confidence"><div id="confidence-bar"></div></div>
    </section>
    <section id="thread"></section>
    <div id="notice" hidden></div>
    <section>
      <table id="latency">
        <thead><tr><th>load</th><th>preprocess</th><th>decode</th>
          <th>dispatch</th><th>total</th></tr></thead>
        <tbody></tbody>
      </table>
    </section>
    <svg id="chart" viewBox="0 0 640 160" preserveAspectRatio="none"></svg>
    <nav>
      <button id="btn-start">Start</button>
      <button id="btn-continue">Continue</button>
      <button id="btn-reset">Reset</button>
      <select id="sim-label">
        ${SIMULATED_SENTENCES.map((s) => `<option>${s}</option>`).join('')}
      </select>
      <button id="btn-simulate">Send simulated sentence</button>
    </nav>`;
  byId(root, 'btn-start').addEventListener('click', handlers.onStart);
  byId(root, 'btn-continue').addEventListener('click', handlers.onContinue);
  byId(root, 'btn-reset').addEventListener('click', handlers.onReset);
  byId(root, 'btn-simulate').addEventListener('click', () => {
    const sel = byId(root, 'sim-label') as HTMLSelectElement;
    handlers.onSimulate(sel.value);
  });
}

function byId(root: HTMLElement, id: string): HTMLElement {
  const el = root.querySelector(`#${id}`);
  if (!el) throw new Error(`layout is missing #${id}`);
  return el as HTMLElement;
}

export function render(root: HTMLElement, model: ViewModel): void {
  const banner = byId(root, 'banner');
  banner.hidden = model.connection === 'live';
  banner.textContent =
    model.connection === 'offline'
      ? 'server offline, retrying'
      : 'connecting';

  const phase = model.server?.phase ?? 'Idle';
  const badge = byId(root, 'phase');
  badge.textContent = model.server?.error_reason
    ? `Error: ${model.server.error_reason}`
    : phase;
  badge.className = `badge ${PHASE_CLASSES[phase] ?? 'badge-idle'}`;
  byId(root, 'topic').textContent = model.server?.current_topic ?? '';

  renderDecoded(root, model);
  renderThread(root, model);
  renderLatency(root, model);

  const notice = byId(root, 'notice');
  notice.hidden = model.notice === null;
  notice.textContent = model.notice ?? '';

  const allowed = allowedControls(model);
  (byId(root, 'btn-start') as HTMLButtonElement).disabled = !allowed.start;
  (byId(root, 'btn-continue') as HTMLButtonElement).disabled = !allowed.cont;
  (byId(root, 'btn-reset') as HTMLButtonElement).disabled = !allowed.reset;
  (byId(root, 'btn-simulate') as HTMLButtonElement).disabled = !allowed.simulate;
}

function renderDecoded(root: HTMLElement, model: ViewModel): void {
  const turns = model.server?.conversation ?? [];
  const lastDecoded = [...turns]
    .reverse()
    .find((t) => t.role !== 'assistant');
  byId(root, 'decoded-text').textContent = lastDecoded?.text ?? '';
  const bar = byId(root, 'confidence-bar');
  const conf = lastDecoded?.confidence ?? 0;
  bar.style.width = `${Math.round(conf * 100)}%`;
  bar.setAttribute('data-confidence', conf.toFixed(3));
}

function renderThread(root: HTMLElement, model: ViewModel): void {
  const thread = byId(root, 'thread');
  const turns = model.server?.conversation ?? [];
  thread.innerHTML = turns
    .map(
      (t) =>
        `<div class="turn turn-${t.role}"><span class="role">${
          t.role === 'assistant' ? 'assistant' : 'you'
        }</span><span class="text">${escapeHtml(t.text)}</span></div>`,
    )
    .join('');
}

function renderLatency(root: HTMLElement, model: ViewModel): void {
  const body = byId(root, 'latency').querySelector('tbody')!;
  const rows = model.server?.latency_log ?? [];
  body.innerHTML = rows
    .map(
      (l) =>
        `<tr>${[l.load_s, l.preprocess_s, l.decode_s, l.dispatch_s, l.total_s]
          .map((v) => `<td>${(v * 1000).toFixed(0)} ms</td>`)
          .join('')}</tr>`,
    )
    .join('');
}

export function renderChart(root: HTMLElement, preview: SignalPreview): void {
  const svg = root.querySelector('#chart');
  if (!svg) return;
  const width = 640;
  const height = 160;
  const traces = preview.channels.slice(0, 16);
  let lo = Infinity;
  let hi = -Infinity;
  for (const tr of traces) {
    for (const v of tr.values) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  if (!(hi > lo)) {
    svg.innerHTML = '';
    return;
  }
  const span = hi - lo;
  svg.innerHTML = traces
    .map((tr, i) => {
      const points = tr.values
        .map((v, j) => {
          const x = (j / Math.max(1, tr.values.length - 1)) * width;
          const y = height - ((v - lo) / span) * height;
          return `${x.toFixed(1)},${y.toFixed(1)}`;
        })
        .join(' ');
      return `<polyline fill="none" data-channel="${tr.index}" ` +
        `stroke="hsl(${(i * 47) % 360} 60% 45%)" points="${points}"/>`;
    })
    .join('');
}

function escapeHtml(s: string): string {
  return s
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}
