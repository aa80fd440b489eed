export interface QueueItem {
  id: string;
  instruction: string;
  image: string;
  bbox: [number, number, number, number];
  width: number;
  height: number;
}

export interface QueuePage {
  items: QueueItem[];
  next_cursor: string | null;
  pending_total: number;
}

export interface Stats {
  pending: number;
  accepted: number;
  rejected: number;
}

export interface DecisionResult extends Stats {
  ok: boolean;
}

export type Verdict = 'accept' | 'reject';

export interface Decision {
  id: string;
  verdict: Verdict;
  note?: string;
  reviewer?: string;
}

export interface ApiConfig {
  baseUrl?: string;
  token?: string | null;
  fetchFn?: typeof fetch;
}

export class ApiError extends Error {
  status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = 'ApiError';
    this.status = status;
  }
}

function formatDetail(payload: unknown): string {
  if (payload !== null && typeof payload === 'object' && 'detail' in payload) {
    const detail = (payload as { detail: unknown }).detail;
    if (typeof detail === 'string') {
      return detail;
    }
    if (Array.isArray(detail)) {
      // validation errors arrive as a list of {loc, msg, type} objects
      return detail
        .map((entry) =>
          entry !== null && typeof entry === 'object' && 'msg' in entry
            ? String((entry as { msg: unknown }).msg)
            : JSON.stringify(entry),
        )
        .join('; ');
    }
  }
  return 'request failed';
}

async function request<T>(cfg: ApiConfig, path: string, init?: RequestInit): Promise<T> {
  const fetchFn =
    cfg.fetchFn ?? ((input: RequestInfo | URL, options?: RequestInit) => fetch(input, options));
  const headers: Record<string, string> = {
    ...(init?.headers as Record<string, string> | undefined),
  };
  if (cfg.token) {
    headers['Authorization'] = `Bearer ${cfg.token}`;
  }
  const resp = await fetchFn(`${cfg.baseUrl ?? ''}${path}`, { ...init, headers });
  if (!resp.ok) {
    let payload: unknown = null;
    try {
      payload = await resp.json();
    } catch {
      // non-JSON error body; fall through to the generic message
    }
    throw new ApiError(resp.status, formatDetail(payload));
  }
  return (await resp.json()) as T;
}

export function fetchQueue(cfg: ApiConfig, cursor = '', limit = 50): Promise<QueuePage> {
  const params = new URLSearchParams();
  if (cursor !== '') {
    params.set('cursor', cursor);
  }
  params.set('limit', String(limit));
  return request<QueuePage>(cfg, `/api/queue?${params.toString()}`);
}

export function fetchStats(cfg: ApiConfig): Promise<Stats> {
  return request<Stats>(cfg, '/api/stats');
}

export function postDecision(cfg: ApiConfig, decision: Decision): Promise<DecisionResult> {
  return request<DecisionResult>(cfg, '/api/decision', {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(decision),
  });
}

export interface RetryPolicy {
  /** Total tries, including the first one. */
  attempts: number;
  /** Delay before the second try; doubles after each further failure. */
  baseDelayMs: number;
  sleep?: (ms: number) => Promise<void>;
}

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Post a decision, retrying with exponential backoff. Connection drops and
 * 5xx responses are retried; a 4xx means the request itself is wrong, so it
 * surfaces immediately without burning retries.
 */
export async function submitDecision(
  cfg: ApiConfig,
  decision: Decision,
  policy: RetryPolicy,
): Promise<DecisionResult> {
  if (policy.attempts < 1) {
    throw new RangeError(`attempts must be at least 1, got ${policy.attempts}`);
  }
  const sleep = policy.sleep ?? defaultSleep;
  let lastError: unknown = null;
  for (let attempt = 0; attempt < policy.attempts; attempt++) {
    if (attempt > 0) {
      await sleep(policy.baseDelayMs * 2 ** (attempt - 1));
    }
    try {
      return await postDecision(cfg, decision);
    } catch (error) {
      if (error instanceof ApiError && error.status < 500) {
        throw error;
      }
      lastError = error;
    }
  }
  throw lastError;
}
