// Thin typed client for the curation service; fetch is injectable so the
// view-model tests run in plain node.

import type { DecisionBody, QueueNextResponse, Stats } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceUnavailable extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "ServiceUnavailable";
  }
}

export class DecisionConflict extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "DecisionConflict";
  }
}

export class DecisionRejected extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "DecisionRejected";
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceUnavailable(`service unreachable: ${String(err)}`);
    }
    if (response.status === 503) {
      throw new ServiceUnavailable(`service unavailable (503)`);
    }
    return response;
  }

  async queueNext(reviewer: string): Promise<QueueNextResponse> {
    const response = await this.request(
      `/api/queue/next?reviewer=${encodeURIComponent(reviewer)}`,
    );
    if (!response.ok) {
      throw new ServiceUnavailable(`queue fetch failed (${response.status})`);
    }
    return (await response.json()) as QueueNextResponse;
  }

  async stats(): Promise<Stats> {
    const response = await this.request("/api/stats");
    if (!response.ok) {
      throw new ServiceUnavailable(`stats fetch failed (${response.status})`);
    }
    return (await response.json()) as Stats;
  }

  async decide(body: DecisionBody): Promise<void> {
    const response = await this.request("/api/decision", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (response.ok) {
      return;
    }
    const detail = await response
      .json()
      .then((obj: { detail?: unknown }) => String(obj.detail ?? response.status))
      .catch(() => String(response.status));
    if (response.status === 409) {
      throw new DecisionConflict(detail);
    }
    if (response.status === 404 || response.status === 422) {
      throw new DecisionRejected(detail);
    }
    throw new ServiceUnavailable(`decision failed (${response.status}): ${detail}`);
  }
}
