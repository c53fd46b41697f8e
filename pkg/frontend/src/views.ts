// Pure renderers: state in, HTML string out. Everything displayed comes
// from a service response; the functions only format.

import type {
  Counterfactual,
  CounterfactualResponse,
  Exemplar,
  ExplainResponse,
  MonitoringResponse,
  QueueItem,
} from './types.js';

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function fmtAmount(x: number): string {
  if (x >= 1e9) return `${(x / 1e9).toFixed(2)}bn`;
  if (x >= 1e6) return `${(x / 1e6).toFixed(2)}m`;
  if (x >= 1e3) return `${(x / 1e3).toFixed(1)}k`;
  return x.toFixed(2);
}

const BADGE: Record<string, string> = {
  open: 'badge-open',
  confirmed: 'badge-confirmed',
  corrected: 'badge-corrected',
};

export function renderQueueRows(items: QueueItem[], inFlight: Set<string>): string {
  // rows appear exactly in the order the items arrived
  return items
    .map((it) => {
      const locked = it.state !== 'open';
      const busy = inFlight.has(it.item_id);
      const disabled = locked || busy ? 'disabled' : '';
      return `
<tr class="queue-row ${locked ? 'locked' : ''}" data-item="${escapeHtml(it.item_id)}">
  <td class="pos">${it.position}</td>
  <td class="mono">${escapeHtml(it.instrument_id)}</td>
  <td>${escapeHtml(it.ref_month)}</td>
  <td>${escapeHtml(it.exception_type)}</td>
  <td class="num">${it.probability.toFixed(3)}</td>
  <td class="num">${fmtAmount(it.amount_outstanding)}</td>
  <td class="num">${fmtAmount(it.rank_score)}</td>
  <td><span class="badge ${BADGE[it.state]}">${it.state}</span></td>
  <td class="actions">
    <button class="btn-explain" data-item="${escapeHtml(it.item_id)}">details</button>
    <button class="btn-confirm" data-item="${escapeHtml(it.item_id)}" ${disabled}>confirm</button>
    <button class="btn-correct" data-item="${escapeHtml(it.item_id)}" ${disabled}>correct</button>
  </td>
</tr>`;
    })
    .join('\n');
}

export function renderEmptyState(error: string | null, loading: boolean): string {
  if (loading) return '<div class="empty">loading queue ...</div>';
  if (error) {
    return `<div class="empty error">service error: ${escapeHtml(error)}
      <button id="retry">retry</button></div>`;
  }
  return '<div class="empty">no scored exceptions for this type</div>';
}

export interface AdditivityCheck {
  total: number;
  margin: number;
  delta: number;
  ok: boolean;
}

export function additivityCheck(ex: ExplainResponse): AdditivityCheck {
  const total = ex.base + ex.contributions.reduce((acc, c) => acc + c.value, 0);
  const delta = Math.abs(total - ex.margin);
  return { total, margin: ex.margin, delta, ok: delta <= 1e-6 };
}

export function renderAttribution(ex: ExplainResponse, topK = 12): string {
  const sorted = [...ex.contributions].sort(
    (a, b) => Math.abs(b.value) - Math.abs(a.value),
  );
  const top = sorted.slice(0, topK);
  const maxAbs = Math.max(...top.map((c) => Math.abs(c.value)), 1e-12);
  const bars = top
    .map((c) => {
      const width = (100 * Math.abs(c.value)) / maxAbs;
      const cls = c.value >= 0 ? 'bar-pos' : 'bar-neg';
      return `
<div class="bar-row">
  <span class="bar-label mono">${escapeHtml(c.feature)}</span>
  <span class="bar-track"><span class="bar ${cls}" style="width:${width.toFixed(1)}%"></span></span>
  <span class="bar-value">${c.value.toFixed(4)}</span>
</div>`;
    })
    .join('\n');
  const check = additivityCheck(ex);
  const proposal = ex.proposal
    ? `<div class="proposal">likely issue: <b>${escapeHtml(ex.proposal.exception_type)}</b>,
       strongest feature: <span class="mono">${escapeHtml(ex.proposal.top_feature)}</span></div>`
    : '';
  return `
<div class="attribution">
  <h4>why this record was flagged</h4>
  ${bars}
  <div class="check-line ${check.ok ? 'ok' : 'bad'}">
    additivity check: base ${ex.base.toFixed(4)} + contributions =
    ${check.total.toFixed(4)} vs margin ${check.margin.toFixed(4)}
    (|delta| = ${check.delta.toExponential(2)}) ${check.ok ? 'OK' : 'MISMATCH'}
  </div>
  ${proposal}
</div>`;
}

export function renderCounterfactuals(resp: CounterfactualResponse): string {
  if (resp.counterfactuals.length === 0) {
    return `<div class="cf"><h4>suggested fixes</h4>
<div class="empty">no feasible change found within the search budget</div></div>`;
  }
  const rows = resp.counterfactuals
    .map((cf: Counterfactual) => {
      const changes = cf.changes
        .map(
          (ch) =>
            `change <span class="mono">${escapeHtml(ch.feature)}</span>
             from <b>${escapeHtml(ch.from)}</b> to <b>${escapeHtml(ch.to)}</b>`,
        )
        .join(' and ');
      return `<li>${changes}
        <span class="cf-meta">(flips ${cf.original_class} -> ${cf.new_class},
        cost ${cf.cost.toFixed(3)})</span></li>`;
    })
    .join('\n');
  return `<div class="cf"><h4>suggested fixes (cheapest first)</h4><ul>${rows}</ul></div>`;
}

export function renderExemplars(exemplars: Exemplar[]): string {
  const rows = exemplars
    .map(
      (e) => `<tr>
  <td class="mono">${escapeHtml(e.row_id)}</td>
  <td class="num">${e.distance.toFixed(4)}</td>
  <td>${e.label === null ? '-' : e.label === 1 ? 'was corrected' : 'clean'}</td>
</tr>`,
    )
    .join('\n');
  return `
<div class="exemplars"><h4>similar training records</h4>
<table><thead><tr><th>record</th><th>distance</th><th>history</th></tr></thead>
<tbody>${rows}</tbody></table></div>`;
}

export function renderMonitoring(m: MonitoringResponse): string {
  const alarm = m.uncertainty.alarm
    ? '<span class="badge badge-alarm">ALARM</span>'
    : '<span class="badge badge-ok">ok</span>';
  const flags = m.drift.flags.length
    ? m.drift.flags
        .map((f) => `<li><span class="mono">${escapeHtml(f.feature)}</span> @ ${escapeHtml(f.month)}</li>`)
        .join('')
    : '<li>none</li>';
  return `
<div class="monitoring">
  <h4>model monitoring (${escapeHtml(m.monitored_type)})</h4>
  <div>uncertainty ${alarm} latest-month mean std
    ${m.uncertainty.latest_month_mean_std.toFixed(5)} vs alarm level
    ${m.uncertainty.baseline_q99.toFixed(5)}
    (${m.uncertainty.ensemble_size} bootstrap members)</div>
  <div>attribution drift flags:</div><ul>${flags}</ul>
</div>`;
}
