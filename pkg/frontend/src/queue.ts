import {
  ApiConfig,
  ApiError,
  Decision,
  DecisionResult,
  QueueItem,
  RetryPolicy,
  Verdict,
  fetchQueue,
  fetchStats,
  submitDecision,
} from './api.js';

export interface PendingDecision {
  id: string;
  verdict: Verdict;
  note?: string;
}

export interface LocalDecision extends PendingDecision {
  at: number;
}

/**
 * Client-side queue state. Everything here is rebuilt from the HTTP API on
 * load, so a page refresh loses nothing but the in-flight note text. An item
 * leaves the queue only after the server confirmed its decision; a decision
 * that could not reach the server is parked in pendingDecision for retry.
 */
export class ReviewQueue {
  items: QueueItem[] = [];
  focus = 0;
  banner: string | null = null;
  pendingTotal = 0;
  accepted = 0;
  rejected = 0;
  pendingDecision: PendingDecision | null = null;
  log: LocalDecision[] = [];

  private cursor = '';
  private exhausted = false;
  private decided = new Set<string>();

  constructor(
    private cfg: ApiConfig,
    private policy: RetryPolicy,
    private pageSize = 50,
  ) {}

  get current(): QueueItem | null {
    return this.items[this.focus] ?? null;
  }

  get done(): boolean {
    return this.exhausted && this.items.length === 0;
  }

  async load(): Promise<void> {
    const stats = await fetchStats(this.cfg);
    this.accepted = stats.accepted;
    this.rejected = stats.rejected;
    this.pendingTotal = stats.pending;
    this.items = [];
    this.cursor = '';
    this.exhausted = false;
    this.focus = 0;
    this.banner = null;
    await this.fill();
  }

  /** Pull pages until a buffer's worth of undecided items is local. */
  private async fill(): Promise<void> {
    while (!this.exhausted && this.items.length < this.pageSize) {
      const requestCursor = this.cursor;
      const page = await fetchQueue(this.cfg, requestCursor, this.pageSize);
      // the server already excludes decided ids, but a page fetched just
      // before our own decision landed may still carry one, and an
      // out-of-order page may repeat an item the buffer already holds
      const have = new Set(this.items.map((item) => item.id));
      const fresh = page.items.filter(
        (item) => !this.decided.has(item.id) && !have.has(item.id),
      );
      this.items.push(...fresh);
      if (requestCursor === '') {
        // pages fetched with a cursor report only the tail's pending count
        this.pendingTotal = page.pending_total;
      }
      if (page.next_cursor === null) {
        this.exhausted = true;
      } else {
        this.cursor = page.next_cursor;
      }
    }
  }

  /** Decide the focused item. Resolves true when the server accepted it. */
  async decide(verdict: Verdict, note?: string): Promise<boolean> {
    const item = this.current;
    if (item === null) {
      return false;
    }
    const decision: PendingDecision = { id: item.id, verdict };
    if (note !== undefined && note !== '') {
      decision.note = note;
    }
    return this.push(decision);
  }

  /** Resubmit the decision parked by a failed submission. */
  async retryPending(): Promise<boolean> {
    const pending = this.pendingDecision;
    if (pending === null) {
      return false;
    }
    return this.push(pending);
  }

  /** Move focus to the next item without deciding, wrapping at the end. */
  skip(): void {
    if (this.items.length > 1) {
      this.focus = (this.focus + 1) % this.items.length;
    }
  }

  /** Latest local verdict per id, in submission order. */
  effective(): Map<string, Verdict> {
    const latest = new Map<string, Verdict>();
    for (const entry of this.log) {
      latest.set(entry.id, entry.verdict);
    }
    return latest;
  }

  private async push(decision: PendingDecision): Promise<boolean> {
    const body: Decision = { id: decision.id, verdict: decision.verdict };
    if (decision.note !== undefined) {
      body.note = decision.note;
    }
    try {
      const result = await submitDecision(this.cfg, body, this.policy);
      this.applyResult(decision, result);
    } catch (error) {
      if (error instanceof ApiError && error.status < 500) {
        // the server refused this decision; retrying identical input is
        // pointless, so show why and stay put
        this.banner = `${error.status}: ${error.message}`;
        this.pendingDecision = null;
      } else {
        this.banner = 'connection lost; decision kept, press retry';
        this.pendingDecision = decision;
      }
      return false;
    }
    if (!this.exhausted && this.items.length < Math.ceil(this.pageSize / 2)) {
      await this.fill();
    }
    return true;
  }

  private applyResult(decision: PendingDecision, result: DecisionResult): void {
    this.decided.add(decision.id);
    this.log.push({ ...decision, at: Date.now() });
    this.accepted = result.accepted;
    this.rejected = result.rejected;
    this.pendingTotal = result.pending;
    this.banner = null;
    this.pendingDecision = null;
    const index = this.items.findIndex((item) => item.id === decision.id);
    if (index >= 0) {
      this.items.splice(index, 1);
      if (this.focus > index) {
        this.focus -= 1;
      }
    }
    if (this.focus >= this.items.length) {
      this.focus = 0;
    }
  }
}
