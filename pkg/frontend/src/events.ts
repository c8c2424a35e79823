/** Incremental event polling for one run, with sequence deduplication. */

import { ApiClient, RunEvent } from "./api.js";

export class EventPoller {
  private cursor = 0;
  private seen = new Set<number>();
  readonly events: RunEvent[] = [];

  constructor(
    private client: ApiClient,
    private runId: string,
  ) {}

  /** Fetch anything newer than the cursor; returns only unseen events. */
  async poll(): Promise<RunEvent[]> {
    const batch = await this.client.getEvents(this.runId, this.cursor);
    const fresh: RunEvent[] = [];
    for (const event of batch) {
      if (this.seen.has(event.seq)) continue;
      this.seen.add(event.seq);
      this.events.push(event);
      fresh.push(event);
      if (event.seq + 1 > this.cursor) this.cursor = event.seq + 1;
    }
    return fresh;
  }

  /** True once a terminal event has arrived. */
  get finished(): boolean {
    return this.events.some((e) => e.kind === "terminal");
  }
}
