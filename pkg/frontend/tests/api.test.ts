import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';
import { StubService, makeItem, queueResponse } from './stub.js';

describe('ApiClient', () => {
  it('requests the queue with exact query parameters', async () => {
    const stub = new StubService();
    stub.on('GET', '/queue?type=AmountOutstanding&limit=25&offset=0',
      queueResponse([makeItem()]));
    const api = new ApiClient('http://svc:1', stub.fetch);
    const resp = await api.getQueue('AmountOutstanding', 25);
    expect(resp.items).toHaveLength(1);
    expect(stub.calls[0].url).toBe('/queue?type=AmountOutstanding&limit=25&offset=0');
    expect(stub.calls[0].method).toBe('GET');
  });

  it('POSTs confirm feedback with exactly the documented body', async () => {
    const stub = new StubService();
    stub.on('POST', '/feedback',
      { schema_version: 1, audit_id: 7, item_id: 'x', state: 'confirmed' });
    const api = new ApiClient('http://svc:1/', stub.fetch);
    await api.postFeedback({ item: 'x', action: 'confirm' });
    expect(stub.postBodies('/feedback')).toEqual([{ item: 'x', action: 'confirm' }]);
  });

  it('POSTs correct feedback with field and new_value verbatim', async () => {
    const stub = new StubService();
    stub.on('POST', '/feedback',
      { schema_version: 1, audit_id: 8, item_id: 'x', state: 'corrected' });
    const api = new ApiClient('http://svc:1', stub.fetch);
    await api.postFeedback({
      item: 'x', action: 'correct', field: 'amount_outstanding', new_value: 100000,
    });
    expect(stub.postBodies('/feedback')).toEqual([
      { item: 'x', action: 'correct', field: 'amount_outstanding', new_value: 100000 },
    ]);
  });

  it('surfaces service errors with status and message', async () => {
    const stub = new StubService();
    stub.on('GET', '/queue?type=Nope&limit=50&offset=0',
      { error: "unknown exception type 'Nope'" }, 400);
    const api = new ApiClient('http://svc:1', stub.fetch);
    const err = await api.getQueue('Nope').catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.message).toContain('unknown exception type');
  });

  it('encodes item ids in panel urls', async () => {
    const stub = new StubService();
    const api = new ApiClient('http://svc:1', stub.fetch);
    await api.getExplanation('run:T:ID:2019-09').catch(() => null);
    expect(stub.calls[0].url).toBe('/explain/run%3AT%3AID%3A2019-09');
  });

  it('posts retrain cutoff when given', async () => {
    const stub = new StubService();
    stub.on('POST', '/retrain', { job_id: 'j', status: 'completed' });
    const api = new ApiClient('http://svc:1', stub.fetch);
    await api.postRetrain('2019-10');
    await api.postRetrain();
    expect(stub.postBodies('/retrain')).toEqual([{ cutoff: '2019-10' }, {}]);
  });
});
