/**
 * Threat feed poller: cursor-based incremental polling with duplicate
 * suppression. On network failure it shows the disconnected banner, keeps
 * the cursor, and retries with exponential backoff; reconnecting resumes
 * exactly where it left off.
 */

import { AdminApi, ThreatRow } from "./api.js";

export interface FeedState {
  rows: ThreatRow[];
  cursor: number;
  disconnected: boolean;
  lastError: string | null;
}

export const DEFAULT_POLL_INTERVAL_MS = 2_000;
export const MAX_BACKOFF_MS = 30_000;

export class ThreatFeed {
  readonly state: FeedState = { rows: [], cursor: 0, disconnected: false, lastError: null };
  private readonly seen = new Set<string>();
  private failures = 0;

  constructor(
    private readonly api: AdminApi,
    readonly pollIntervalMs: number = DEFAULT_POLL_INTERVAL_MS,
  ) {}

  /** One poll. Appends only never-seen threats; the cursor only advances. */
  async tick(): Promise<ThreatRow[]> {
    let page;
    try {
      page = await this.api.threatsSince(this.state.cursor);
    } catch (err) {
      this.failures += 1;
      this.state.disconnected = true;
      this.state.lastError = err instanceof Error ? err.message : String(err);
      return [];
    }
    this.failures = 0;
    this.state.disconnected = false;
    this.state.lastError = null;
    const fresh: ThreatRow[] = [];
    for (const item of page.items) {
      if (!this.seen.has(item.threat_id)) {
        this.seen.add(item.threat_id);
        this.state.rows.push(item);
        fresh.push(item);
      }
    }
    if (page.cursor > this.state.cursor) {
      this.state.cursor = page.cursor;
    }
    return fresh;
  }

  /** Delay before the next tick: the poll interval, or backoff while down. */
  nextDelayMs(): number {
    if (this.failures === 0) {
      return this.pollIntervalMs;
    }
    const backoff = this.pollIntervalMs * 2 ** this.failures;
    return Math.min(backoff, MAX_BACKOFF_MS);
  }
}
