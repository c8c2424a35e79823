import { describe, expect, it, vi } from "vitest";

import { ApiClient, RunEvent } from "../src/api.js";
import { EventPoller } from "../src/events.js";

function clientReturning(batches: RunEvent[][]): {
  client: ApiClient;
  calls: number[];
} {
  const calls: number[] = [];
  let i = 0;
  const fetchMock = vi.fn(async (url: string) => {
    calls.push(Number(new URL(url, "http://x").searchParams.get("since")));
    const batch = batches[Math.min(i, batches.length - 1)];
    i += 1;
    return new Response(JSON.stringify(batch));
  });
  return { client: new ApiClient("", null, fetchMock), calls };
}

function event(seq: number, kind = "phase_started"): RunEvent {
  return { seq, run_id: "r1", kind, payload: {} };
}

describe("EventPoller", () => {
  it("advances the cursor past the last sequence number", async () => {
    const { client, calls } = clientReturning([
      [event(0), event(1)],
      [event(2)],
    ]);
    const poller = new EventPoller(client, "r1");

    expect((await poller.poll()).map((e) => e.seq)).toEqual([0, 1]);
    expect((await poller.poll()).map((e) => e.seq)).toEqual([2]);
    expect(calls).toEqual([0, 2]);
  });

  it("drops duplicate sequence numbers on overlapping batches", async () => {
    const { client } = clientReturning([
      [event(0), event(1)],
      [event(1), event(2)],
    ]);
    const poller = new EventPoller(client, "r1");
    await poller.poll();
    const fresh = await poller.poll();

    expect(fresh.map((e) => e.seq)).toEqual([2]);
    expect(poller.events.map((e) => e.seq)).toEqual([0, 1, 2]);
  });

  it("reports finished only after a terminal event", async () => {
    const { client } = clientReturning([
      [event(0, "phase_started")],
      [event(1, "terminal")],
    ]);
    const poller = new EventPoller(client, "r1");
    await poller.poll();
    expect(poller.finished).toBe(false);
    await poller.poll();
    expect(poller.finished).toBe(true);
  });
});
