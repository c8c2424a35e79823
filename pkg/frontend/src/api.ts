/** Typed client for the run-ledger HTTP API. */

export interface RunSummary {
  run_id: string;
  task_id: string | null;
  repo_id: string | null;
  config: string | null;
  status: string | null;
  phase: string | null;
  checkpoint: string | null;
  outcome: string | null;
  failure_category: string | null;
  judge_composite: number | null;
  needs_review: boolean | null;
  live: boolean;
}

export interface RunDetail {
  run_id: string;
  live: boolean;
  config?: string | null;
  status?: string | null;
  phase?: string | null;
  checkpoint?: string | null;
  [key: string]: unknown;
}

export interface RunEvent {
  seq: number;
  run_id: string;
  kind: string;
  payload: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private token: string | null = null,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private headers(json = false): Record<string, string> {
    const h: Record<string, string> = {};
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    if (json) h["Content-Type"] = "application/json";
    return h;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return res;
  }

  async listRuns(): Promise<RunSummary[]> {
    const res = await this.request("/runs", { headers: this.headers() });
    return res.json();
  }

  async getRun(runId: string): Promise<RunDetail> {
    const res = await this.request(`/runs/${encodeURIComponent(runId)}`, {
      headers: this.headers(),
    });
    return res.json();
  }

  async getArtifact(runId: string, kind: string): Promise<string> {
    const res = await this.request(
      `/runs/${encodeURIComponent(runId)}/artifacts/${encodeURIComponent(kind)}`,
      { headers: this.headers() },
    );
    return res.text();
  }

  async getEvents(runId: string, since: number): Promise<RunEvent[]> {
    const res = await this.request(
      `/events?run=${encodeURIComponent(runId)}&since=${since}`,
      { headers: this.headers() },
    );
    return res.json();
  }

  async decideCheckpoint(
    runId: string,
    decision: "approve" | "reject",
    decidedBy = "dashboard",
  ): Promise<void> {
    await this.request(`/runs/${encodeURIComponent(runId)}/checkpoint`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ decision, decided_by: decidedBy }),
    });
  }
}
