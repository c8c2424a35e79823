import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("lists runs and sends the bearer token", async () => {
    const fetchMock = vi.fn(async () => jsonResponse([{ run_id: "r1" }]));
    const client = new ApiClient("http://api", "secret", fetchMock);
    const runs = await client.listRuns();

    expect(runs).toEqual([{ run_id: "r1" }]);
    expect(fetchMock).toHaveBeenCalledWith("http://api/runs", {
      headers: { Authorization: "Bearer secret" },
    });
  });

  it("omits the Authorization header without a token", async () => {
    const fetchMock = vi.fn(async () => jsonResponse([]));
    await new ApiClient("", null, fetchMock).listRuns();
    expect(fetchMock).toHaveBeenCalledWith("/runs", { headers: {} });
  });

  it("posts checkpoint decisions as JSON", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ accepted: true }));
    const client = new ApiClient("", null, fetchMock);
    await client.decideCheckpoint("r1", "approve", "reviewer");

    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("/runs/r1/checkpoint");
    expect(init?.method).toBe("POST");
    expect(JSON.parse(String(init?.body))).toEqual({
      decision: "approve",
      decided_by: "reviewer",
    });
  });

  it("surfaces the service error detail with the status code", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse({ detail: "checkpoint is not pending" }, 409),
    );
    const client = new ApiClient("", null, fetchMock);
    const err = await client
      .decideCheckpoint("r1", "reject")
      .catch((e: unknown) => e);

    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).message).toBe("checkpoint is not pending");
  });

  it("fetches artifacts as text and encodes ids in paths", async () => {
    const fetchMock = vi.fn(async () => new Response("# Plan\n"));
    const client = new ApiClient("", null, fetchMock);
    const text = await client.getArtifact("a/b", "plan");

    expect(text).toBe("# Plan\n");
    expect(fetchMock.mock.calls[0][0]).toBe("/runs/a%2Fb/artifacts/plan");
  });
});
