/** DOM wiring: boot, render loop, event delegation, live event stream. */

import { ApiClient, openEventStream } from "./api.js";
import { masksFromToggles, Store } from "./store.js";
import type { AppraisePayload, ExtendedCondition } from "./types.js";
import {
  renderAnomalyList,
  renderAppraisalForm,
  renderBanner,
  renderDetail,
  renderRuleQueue,
} from "./views.js";

const BASE_URL =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8765";

const api = new ApiClient(BASE_URL);
const store = new Store(api);

const el = (id: string): HTMLElement => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
};

let formRuleId: string | null = null;

function render(): void {
  el("banner").innerHTML = renderBanner(store.state);
  el("queue").innerHTML = renderRuleQueue(store.state);
  el("anomalies").innerHTML = renderAnomalyList(store.state);
  el("detail").innerHTML = renderDetail(store.state);
  const host = el("form-host");
  if (formRuleId) {
    const rule = store.state.rules.find((r) => r.id === formRuleId);
    host.innerHTML = rule
      ? renderAppraisalForm(rule, store.state.fields, store.state.rules)
      : "";
  } else {
    host.innerHTML = "";
  }
}

function collectPayload(form: HTMLFormElement): AppraisePayload {
  const data = new FormData(form);
  const action = String(data.get("action") ?? "assign") as AppraisePayload["action"];
  if (action === "whitelist") return { action };
  if (action === "combine") {
    return { action, target_rule_id: String(data.get("target_rule_id") ?? "") };
  }
  if (action === "split") {
    const groups: boolean[][] = [[], []];
    form.querySelectorAll<HTMLInputElement>("input.mask").forEach((input) => {
      const group = Number(input.dataset.group);
      const index = Number(input.dataset.index);
      (groups[group] ??= [])[index] = input.checked;
    });
    return { action, masks: masksFromToggles(groups.map((g) => Array.from(g, (v) => !!v))) };
  }
  const severity = String(data.get("severity") ?? "");
  const actions = String(data.get("actions") ?? "")
    .split(",")
    .map((s) => s.trim())
    .filter(Boolean);
  const extended: ExtendedCondition[] = [];
  const durationGt = String(data.get("duration_gt") ?? "");
  if (durationGt) extended.push({ type: "duration", op: ">", k: Number(durationGt) });
  return {
    action: "assign",
    response: {
      kind: "custom",
      severity: severity || null,
      actions,
      notes: String(data.get("notes") ?? ""),
    },
    ...(extended.length ? { extended } : {}),
  };
}

function wireEvents(): void {
  document.body.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.matches("button.tab")) {
      store.setStatusFilter((target as HTMLButtonElement).dataset.filter as never);
    } else if (target.matches("button.act[data-act=appraise]")) {
      formRuleId = target.dataset.ruleId ?? null;
      render();
    } else if (target.matches("button.cancel")) {
      formRuleId = null;
      render();
    } else if (target.matches("button.retry")) {
      const eventId = target.dataset.eventId;
      if (eventId) void store.loadDetail(eventId);
    }
  });

  document.body.addEventListener("change", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.matches("input.rule-select")) {
      const ruleId = (target as HTMLInputElement).dataset.ruleId;
      if (ruleId) void store.toggleRule(ruleId);
    } else if (target.matches("input.anomaly-select")) {
      const eventId = (target as HTMLInputElement).dataset.eventId;
      if (eventId) void store.openDetail(eventId);
    }
  });

  document.body.addEventListener("submit", (ev) => {
    const form = ev.target as HTMLFormElement;
    if (!form.matches("form.appraise-form")) return;
    ev.preventDefault();
    const ruleId = form.dataset.ruleId;
    if (!ruleId) return;
    void store.submitAppraisal(ruleId, collectPayload(form)).then((ok) => {
      if (ok) formRuleId = null;
      render();
    });
  });
}

async function boot(): Promise<void> {
  store.subscribe(render);
  wireEvents();
  await store.refreshRules();
  openEventStream(
    BASE_URL,
    (event) => void store.onLiveEvent(event),
    (connected) => store.setConnected(connected),
  );
}

void boot();
