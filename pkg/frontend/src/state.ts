// View-model for the review queue. The store never reorders what the server
// sent, never records a decision client-side only, and allows one in-flight
// mutation per item (extra clicks are suppressed, not queued).

import { ApiClient, ApiError } from './api.js';
import type {
  ExceptionType,
  FeedbackBody,
  QueueItem,
  ReviewState,
} from './types.js';
import { FIELD_OF_TYPE, NUMERIC_FIELDS } from './types.js';

export type SubmitOutcome =
  | { status: 'ok'; auditId: number; state: ReviewState }
  | { status: 'suppressed' }
  | { status: 'locked' }
  | { status: 'conflict' }
  | { status: 'error'; message: string };

export interface QueueViewState {
  filterType: ExceptionType;
  items: QueueItem[];
  total: number;
  loading: boolean;
  error: string | null;
}

export function parseFieldValue(field: string, raw: string): string | number {
  if (NUMERIC_FIELDS.has(field)) {
    const num = Number(raw);
    if (Number.isNaN(num)) {
      throw new Error(`${field} expects a numeric value, got "${raw}"`);
    }
    return num;
  }
  return raw;
}

export function defaultFieldFor(type: ExceptionType): string {
  return FIELD_OF_TYPE[type];
}

export class QueueStore {
  view: QueueViewState = {
    filterType: 'AmountOutstanding',
    items: [],
    total: 0,
    loading: false,
    error: null,
  };
  private inFlight = new Set<string>();
  private listeners: (() => void)[] = [];

  constructor(
    private api: ApiClient,
    private pageSize = 25,
  ) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  isInFlight(itemId: string): boolean {
    return this.inFlight.has(itemId);
  }

  async loadQueue(type?: ExceptionType): Promise<void> {
    if (type) this.view.filterType = type;
    this.view.loading = true;
    this.view.error = null;
    this.emit();
    try {
      const resp = await this.api.getQueue(this.view.filterType, this.pageSize);
      // server order is the order; no client-side re-sorting
      this.view.items = resp.items;
      this.view.total = resp.total;
    } catch (err) {
      // keep no stale rows behind an error banner
      this.view.items = [];
      this.view.total = 0;
      this.view.error = err instanceof ApiError
        ? `${err.message} (HTTP ${err.status})`
        : String(err);
    } finally {
      this.view.loading = false;
      this.emit();
    }
  }

  item(itemId: string): QueueItem | undefined {
    return this.view.items.find((it) => it.item_id === itemId);
  }

  async submitDecision(
    itemId: string,
    action: 'confirm' | 'correct',
    field?: string,
    rawValue?: string,
  ): Promise<SubmitOutcome> {
    const item = this.item(itemId);
    if (!item) return { status: 'error', message: `unknown item ${itemId}` };
    if (item.state !== 'open') return { status: 'locked' };
    if (this.inFlight.has(itemId)) return { status: 'suppressed' };

    let body: FeedbackBody;
    if (action === 'confirm') {
      body = { item: itemId, action: 'confirm' };
    } else {
      if (!field || rawValue === undefined || rawValue === '') {
        return { status: 'error', message: 'correct requires a field and a new value' };
      }
      let value: string | number;
      try {
        value = parseFieldValue(field, rawValue);
      } catch (err) {
        return { status: 'error', message: String(err) };
      }
      body = { item: itemId, action: 'correct', field, new_value: value };
    }

    this.inFlight.add(itemId);
    this.emit();
    try {
      const resp = await this.api.postFeedback(body);
      item.state = resp.state;
      return { status: 'ok', auditId: resp.audit_id, state: resp.state };
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else reviewed it: the server's state wins
        await this.loadQueue();
        return { status: 'conflict' };
      }
      // network or validation failure: decision is NOT recorded client-side
      return {
        status: 'error',
        message: err instanceof ApiError ? err.message : String(err),
      };
    } finally {
      this.inFlight.delete(itemId);
      this.emit();
    }
  }
}
