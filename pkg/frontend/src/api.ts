/** Typed client for the appraisal service. All state mutations go through here. */

import type {
  AnomaliesPage,
  AnomalyJson,
  AppraisePayload,
  RulesPage,
  RuleJson,
  RuleStatus,
  SeriesResponse,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, err instanceof Error ? err.message : "network failure");
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail ?? body);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string; rules: number; anomalies: number }> {
    return this.request("/healthz");
  }

  listRules(status?: RuleStatus): Promise<RulesPage> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    return this.request(`/rules${query}`);
  }

  getRule(ruleId: string): Promise<RuleJson> {
    return this.request(`/rules/${encodeURIComponent(ruleId)}`);
  }

  appraise(ruleId: string, payload: AppraisePayload): Promise<{ ok: boolean; rules: RuleJson[] }> {
    return this.request(`/rules/${encodeURIComponent(ruleId)}/appraise`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  listAnomalies(opts: { ruleId?: string; page?: number; pageSize?: number } = {}): Promise<AnomaliesPage> {
    const params = new URLSearchParams();
    if (opts.ruleId) params.set("rule_id", opts.ruleId);
    if (opts.page) params.set("page", String(opts.page));
    params.set("page_size", String(opts.pageSize ?? 50));
    return this.request(`/anomalies?${params.toString()}`);
  }

  series(eventId: string, pad = 12): Promise<SeriesResponse> {
    return this.request(`/anomalies/${encodeURIComponent(eventId)}/series?pad=${pad}`);
  }
}

/** Minimal SSE reader over fetch streaming; works in browsers and Node. */
export interface EventStreamHandle {
  close(): void;
  done: Promise<void>;
}

export function openEventStream(
  baseUrl: string,
  onEvent: (event: AnomalyJson) => void,
  onStateChange?: (connected: boolean) => void,
  fetchImpl: FetchLike = (input, init) => fetch(input, init),
): EventStreamHandle {
  const controller = new AbortController();
  const done = (async () => {
    try {
      const response = await fetchImpl(`${baseUrl}/events`, { signal: controller.signal });
      if (!response.ok || !response.body) throw new ApiError(response.status, "event stream failed");
      onStateChange?.(true);
      const reader = response.body.getReader();
      const decoder = new TextDecoder();
      let buffer = "";
      for (;;) {
        const { value, done: finished } = await reader.read();
        if (finished) break;
        buffer += decoder.decode(value, { stream: true });
        let cut;
        while ((cut = buffer.indexOf("\n\n")) >= 0) {
          const message = buffer.slice(0, cut);
          buffer = buffer.slice(cut + 2);
          for (const event of parseSseMessage(message)) onEvent(event);
        }
      }
    } catch (err) {
      if (!controller.signal.aborted) throw err;
    } finally {
      onStateChange?.(false);
    }
  })();
  return { close: () => controller.abort(), done: done.catch(() => undefined) };
}

/** Parse one SSE message block; comments and non-data lines are ignored. */
export function parseSseMessage(message: string): AnomalyJson[] {
  const events: AnomalyJson[] = [];
  for (const line of message.split("\n")) {
    if (line.startsWith("data: ")) {
      try {
        events.push(JSON.parse(line.slice("data: ".length)) as AnomalyJson);
      } catch {
        /* skip malformed payloads rather than killing the stream */
      }
    }
  }
  return events;
}
