// DOM bootstrap: wires the store and renderers to the page. All state
// transitions live in state.ts; this file only reads the view and paints.

import { ApiClient } from './api.js';
import { QueueStore, defaultFieldFor } from './state.js';
import type { ExceptionType } from './types.js';
import { EXCEPTION_TYPES } from './types.js';
import {
  renderAttribution,
  renderCounterfactuals,
  renderEmptyState,
  renderExemplars,
  renderMonitoring,
  renderQueueRows,
  escapeHtml,
} from './views.js';

const params = new URLSearchParams(window.location.search);
const API_BASE =
  params.get('api') ?? (window as { DQX_API?: string }).DQX_API ?? 'http://127.0.0.1:8321';

const api = new ApiClient(API_BASE);
const store = new QueueStore(api);

const $ = (id: string) => document.getElementById(id) as HTMLElement;

function paintQueue(): void {
  const body = $('queue-body');
  const view = store.view;
  if (view.loading || view.error || view.items.length === 0) {
    $('queue-table').style.display = 'none';
    $('queue-empty').innerHTML = renderEmptyState(view.error, view.loading);
    $('queue-empty').style.display = 'block';
  } else {
    $('queue-empty').style.display = 'none';
    $('queue-table').style.display = 'table';
    const inFlight = new Set(
      view.items.filter((it) => store.isInFlight(it.item_id)).map((it) => it.item_id),
    );
    body.innerHTML = renderQueueRows(view.items, inFlight);
  }
  $('queue-count').textContent =
    `${view.items.length} of ${view.total} ${view.filterType} exceptions`;
}

async function openPanels(itemId: string): Promise<void> {
  const item = store.item(itemId);
  if (!item) return;
  const panel = $('detail-panel');
  panel.innerHTML = `<div class="empty">loading explanation for
    <span class="mono">${escapeHtml(item.instrument_id)}</span> ...</div>`;
  try {
    const [ex, cf, nn] = await Promise.all([
      api.getExplanation(itemId),
      api.getCounterfactuals(itemId),
      api.getExemplars(itemId),
    ]);
    panel.innerHTML =
      renderAttribution(ex) + renderCounterfactuals(cf) + renderExemplars(nn.exemplars);
  } catch (err) {
    panel.innerHTML = `<div class="empty error">could not load explanation:
      ${escapeHtml(String(err))} <button id="panel-refresh">refresh</button></div>`;
  }
}

function correctEditor(itemId: string): { field: string; value: string } | null {
  const item = store.item(itemId);
  if (!item) return null;
  const field = defaultFieldFor(item.exception_type as ExceptionType);
  const value = window.prompt(
    `corrected value for ${field} of ${item.instrument_id} (${item.ref_month})`, '');
  if (value === null || value === '') return null;
  return { field, value };
}

async function onAction(target: HTMLElement): Promise<void> {
  const itemId = target.dataset.item;
  if (!itemId) return;
  if (target.classList.contains('btn-explain')) {
    await openPanels(itemId);
    return;
  }
  let outcome;
  if (target.classList.contains('btn-confirm')) {
    outcome = await store.submitDecision(itemId, 'confirm');
  } else if (target.classList.contains('btn-correct')) {
    const edit = correctEditor(itemId);
    if (!edit) return;
    outcome = await store.submitDecision(itemId, 'correct', edit.field, edit.value);
  } else {
    return;
  }
  if (outcome.status === 'error') {
    $('flash').textContent = `decision not recorded: ${outcome.message} - retry when ready`;
  } else if (outcome.status === 'conflict') {
    $('flash').textContent = 'item was already reviewed elsewhere; queue refreshed';
  } else {
    $('flash').textContent = '';
  }
  paintQueue();
}

async function refreshMonitoring(): Promise<void> {
  try {
    $('monitoring').innerHTML = renderMonitoring(await api.getMonitoring());
  } catch (err) {
    $('monitoring').innerHTML =
      `<div class="empty">monitoring unavailable: ${escapeHtml(String(err))}</div>`;
  }
}

function boot(): void {
  const select = $('type-filter') as HTMLSelectElement;
  select.innerHTML = EXCEPTION_TYPES
    .map((t) => `<option value="${t}">${t}</option>`)
    .join('');
  select.addEventListener('change', () => {
    void store.loadQueue(select.value as ExceptionType);
  });
  $('refresh').addEventListener('click', () => void store.loadQueue());
  $('retrain').addEventListener('click', async () => {
    $('flash').textContent = 'retraining ...';
    try {
      await api.postRetrain();
      $('flash').textContent = 'retrain complete; reloading queue';
      await store.loadQueue();
      await refreshMonitoring();
    } catch (err) {
      $('flash').textContent = `retrain failed: ${String(err)}`;
    }
  });
  document.addEventListener('click', (ev) => {
    const target = ev.target as HTMLElement;
    if (target.tagName === 'BUTTON') void onAction(target);
  });
  store.onChange(paintQueue);
  void store.loadQueue('AmountOutstanding');
  void refreshMonitoring();
}

boot();
