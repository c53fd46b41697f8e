// Thin typed client over the review service. fetch is injectable so the
// contract tests can pin down every URL and request body exactly.

import type {
  CounterfactualResponse,
  ExemplarsResponse,
  ExplainResponse,
  FeedbackBody,
  FeedbackResponse,
  MonitoringResponse,
  QueueResponse,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public body: unknown = null,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      // non-JSON error body; keep null
    }
    if (!resp.ok) {
      const message =
        body && typeof body === 'object' && 'error' in body
          ? String((body as { error: unknown }).error)
          : `HTTP ${resp.status}`;
      throw new ApiError(resp.status, message, body);
    }
    return body as T;
  }

  getQueue(type: string, limit = 50, offset = 0): Promise<QueueResponse> {
    const params = new URLSearchParams({
      type,
      limit: String(limit),
      offset: String(offset),
    });
    return this.request(`/queue?${params}`);
  }

  getExplanation(itemId: string): Promise<ExplainResponse> {
    return this.request(`/explain/${encodeURIComponent(itemId)}`);
  }

  getCounterfactuals(itemId: string): Promise<CounterfactualResponse> {
    return this.request(`/counterfactual/${encodeURIComponent(itemId)}`);
  }

  getExemplars(itemId: string): Promise<ExemplarsResponse> {
    return this.request(`/exemplars/${encodeURIComponent(itemId)}`);
  }

  postFeedback(body: FeedbackBody): Promise<FeedbackResponse> {
    return this.request('/feedback', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  postRetrain(cutoff?: string): Promise<{ job_id: string; status: string }> {
    return this.request('/retrain', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(cutoff ? { cutoff } : {}),
    });
  }

  getMonitoring(): Promise<MonitoringResponse> {
    return this.request('/monitoring');
  }
}
