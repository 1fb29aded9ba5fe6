/** Application state. The API is the single source of truth: every mutation
 * goes through the client and the store re-derives from what comes back. */

import { ApiClient, ApiError } from "./api.js";
import type {
  AnomalyJson,
  AppraisePayload,
  RuleJson,
  RuleStatus,
  SeriesResponse,
} from "./types.js";

export type StatusFilter = RuleStatus | "all";

export interface DetailState {
  eventId: string;
  loading: boolean;
  error: string | null;
  series: SeriesResponse | null;
}

export interface AppState {
  connected: boolean;
  serviceError: string | null;
  /** Event-stream lag indicator: true when a live event arrived but the queue
   * refresh it triggered has not landed yet. */
  stale: boolean;
  fields: string[];
  rules: RuleJson[];
  statusFilter: StatusFilter;
  selectedRuleIds: string[];
  anomalies: AnomalyJson[];
  anomaliesTotal: number;
  detail: DetailState | null;
  actionError: string | null;
  lastEvent: AnomalyJson | null;
}

export function initialState(): AppState {
  return {
    connected: false,
    serviceError: null,
    stale: false,
    fields: [],
    rules: [],
    statusFilter: "unappraised",
    selectedRuleIds: [],
    anomalies: [],
    anomaliesTotal: 0,
    detail: null,
    actionError: null,
    lastEvent: null,
  };
}

/** Count-descending with rule id as the tiebreak; mirrors the service order. */
export function sortRules(rules: RuleJson[]): RuleJson[] {
  return [...rules].sort((a, b) => b.count - a.count || (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
}

export function filterByStatus(rules: RuleJson[], filter: StatusFilter): RuleJson[] {
  return filter === "all" ? rules : rules.filter((r) => r.status === filter);
}

/** Union of the occurrences of every selected rule, newest first, deduped. */
export function mergeAnomalyPages(pages: AnomalyJson[][]): AnomalyJson[] {
  const seen = new Set<string>();
  const merged: AnomalyJson[] = [];
  for (const page of pages) {
    for (const item of page) {
      if (!seen.has(item.event_id)) {
        seen.add(item.event_id);
        merged.push(item);
      }
    }
  }
  merged.sort((a, b) => Date.parse(b.t_start) - Date.parse(a.t_start) || (a.event_id < b.event_id ? -1 : 1));
  return merged;
}

/** Build split masks from per-field checkbox toggles. */
export function masksFromToggles(groups: boolean[][]): number[][] {
  const masks: number[][] = [];
  for (const toggles of groups) {
    const mask = toggles.flatMap((on, i) => (on ? [i] : []));
    if (mask.length) masks.push(mask);
  }
  return masks;
}

type Listener = (state: AppState) => void;

export class Store {
  state: AppState = initialState();
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(patch: Partial<AppState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  setConnected(connected: boolean): void {
    this.emit({ connected });
  }

  async refreshRules(): Promise<void> {
    try {
      const page = await this.api.listRules();
      this.emit({
        rules: sortRules(page.rules),
        fields: page.fields,
        serviceError: null,
        stale: false,
      });
    } catch (err) {
      this.emit({ serviceError: err instanceof Error ? err.message : String(err) });
    }
  }

  setStatusFilter(filter: StatusFilter): void {
    this.emit({ statusFilter: filter });
  }

  /** Toggle a rule checkbox; the anomaly list refetches the union. */
  async toggleRule(ruleId: string): Promise<void> {
    const selected = this.state.selectedRuleIds.includes(ruleId)
      ? this.state.selectedRuleIds.filter((id) => id !== ruleId)
      : [...this.state.selectedRuleIds, ruleId];
    this.emit({ selectedRuleIds: selected });
    await this.refreshAnomalies();
  }

  async refreshAnomalies(): Promise<void> {
    const selected = this.state.selectedRuleIds;
    try {
      if (!selected.length) {
        this.emit({ anomalies: [], anomaliesTotal: 0 });
        return;
      }
      const pages = await Promise.all(
        selected.map((id) => this.api.listAnomalies({ ruleId: id, pageSize: 200 })),
      );
      const merged = mergeAnomalyPages(pages.map((p) => p.items));
      this.emit({ anomalies: merged, anomaliesTotal: merged.length, serviceError: null });
    } catch (err) {
      this.emit({ serviceError: err instanceof Error ? err.message : String(err) });
    }
  }

  /** Submit an appraisal action; the queue is re-derived from the API response
   * (optimistic rendering confirmed against what the service returns). */
  async submitAppraisal(ruleId: string, payload: AppraisePayload): Promise<boolean> {
    try {
      const result = await this.api.appraise(ruleId, payload);
      this.emit({
        rules: sortRules(result.rules),
        actionError: null,
        selectedRuleIds: this.state.selectedRuleIds.filter((id) =>
          result.rules.some((r) => r.id === id),
        ),
      });
      await this.refreshAnomalies();
      return true;
    } catch (err) {
      if (err instanceof ApiError) {
        this.emit({ actionError: `${payload.action} failed: ${err.detail}` });
      } else {
        this.emit({ actionError: err instanceof Error ? err.message : String(err) });
      }
      return false;
    }
  }

  /** A live event arrived on the stream: flag the queue stale and re-derive. */
  async onLiveEvent(event: AnomalyJson): Promise<void> {
    this.emit({ lastEvent: event, stale: true });
    await this.refreshRules();
    if (this.state.selectedRuleIds.length) await this.refreshAnomalies();
  }

  async openDetail(eventId: string, pad = 12): Promise<void> {
    this.emit({ detail: { eventId, loading: true, error: null, series: null } });
    await this.loadDetail(eventId, pad);
  }

  /** Retry hook for the detail panel's error placeholder. */
  async loadDetail(eventId: string, pad = 12): Promise<void> {
    try {
      const series = await this.api.series(eventId, pad);
      this.emit({ detail: { eventId, loading: false, error: null, series } });
    } catch (err) {
      this.emit({
        detail: {
          eventId,
          loading: false,
          error: err instanceof Error ? err.message : String(err),
          series: null,
        },
      });
    }
  }

  closeDetail(): void {
    this.emit({ detail: null });
  }
}
