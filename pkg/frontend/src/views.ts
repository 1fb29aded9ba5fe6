/** Pure HTML renderers; main.ts owns the DOM glue. */

import { renderChartSvg } from "./chart.js";
import { conditionSymbol, conditionTitle } from "./glyphs.js";
import type { AppState, StatusFilter } from "./store.js";
import type { AnomalyJson, RuleJson } from "./types.js";
import { filterByStatus } from "./store.js";

const esc = (text: string): string =>
  text.replace(/[&<>"']/g, (c) => `&#${c.charCodeAt(0)};`);

export function renderBanner(state: AppState): string {
  const bits: string[] = [];
  if (state.serviceError) {
    bits.push(`<div class="banner error">service unreachable: ${esc(state.serviceError)}</div>`);
  }
  if (state.stale) {
    bits.push(`<div class="banner stale">live event received, refreshing queue…</div>`);
  }
  if (state.actionError) {
    bits.push(`<div class="banner action-error" data-field="action">${esc(state.actionError)}</div>`);
  }
  const dot = state.connected ? "live" : "offline";
  bits.push(`<div class="conn ${dot}">event stream: ${dot}</div>`);
  return bits.join("");
}

function ruleRow(rule: RuleJson, selected: boolean): string {
  const glyphs = rule.conditions
    .map(
      (g) =>
        `<span class="cond cond-${g === "+" ? "gt" : g === "-" ? "lt" : g === "0" ? "ap" : "dc"}" title="${conditionTitle(g)}">${conditionSymbol(g)}</span>`,
    )
    .join("");
  const extended = rule.extended
    .map((e) =>
      e.type === "duration" ? `dur${e.op}${e.k}` : `f${e.lhs}${e.op}${e.coeff}f${e.rhs}`,
    )
    .join(", ");
  const severity = rule.response.severity ?? "";
  return `<tr class="rule-row" data-rule-id="${esc(rule.id)}">
    <td><input type="checkbox" class="rule-select" data-rule-id="${esc(rule.id)}" ${selected ? "checked" : ""}></td>
    <td class="rule-id">${esc(rule.id)}</td>
    <td class="conds">${glyphs}</td>
    <td class="extended">${esc(extended)}</td>
    <td class="count">${rule.count}</td>
    <td class="status status-${rule.status}">${rule.status}</td>
    <td class="severity">${esc(severity)}</td>
    <td class="actions">
      <button class="act" data-act="appraise" data-rule-id="${esc(rule.id)}" ${rule.status !== "unappraised" ? "disabled" : ""}>appraise</button>
    </td>
  </tr>`;
}

export function renderRuleQueue(state: AppState): string {
  const rules = filterByStatus(state.rules, state.statusFilter);
  const tabs = (["unappraised", "appraised", "whitelisted", "all"] as StatusFilter[])
    .map(
      (f) =>
        `<button class="tab ${f === state.statusFilter ? "active" : ""}" data-filter="${f}">${f}</button>`,
    )
    .join("");
  if (!rules.length) {
    return `${tabs}<div class="empty-state">no ${
      state.statusFilter === "all" ? "" : state.statusFilter + " "
    }rules</div>`;
  }
  const head = state.fields.length
    ? `<th></th><th>rule</th><th>${state.fields.map(esc).join(" ")}</th><th>extended</th><th>count</th><th>status</th><th>severity</th><th></th>`
    : "";
  return `${tabs}<table class="rule-table">
    <thead><tr>${head}</tr></thead>
    <tbody>${rules.map((r) => ruleRow(r, state.selectedRuleIds.includes(r.id))).join("")}</tbody>
  </table>`;
}

/** The appraisal form for one rule: response fields, per-field split
 * checkboxes, and a combine target picker restricted to appraised rules. */
export function renderAppraisalForm(rule: RuleJson, fields: string[], appraised: RuleJson[]): string {
  const fieldToggles = (group: number) =>
    fields
      .map(
        (name, i) =>
          `<label class="mask-toggle"><input type="checkbox" class="mask" data-group="${group}" data-index="${i}">${esc(name)}</label>`,
      )
      .join("");
  const targets = appraised
    .filter((r) => r.status === "appraised")
    .map((r) => `<option value="${esc(r.id)}">${esc(r.id)} (${r.conditions.join("")})</option>`)
    .join("");
  return `<form class="appraise-form" data-rule-id="${esc(rule.id)}">
    <h3>appraise ${esc(rule.id)}</h3>
    <fieldset class="assign-box">
      <legend><label><input type="radio" name="action" value="assign" checked> assign response</label></legend>
      <select name="severity">
        <option value="">severity…</option>
        <option>info</option><option>minor</option><option>major</option><option>critical</option>
      </select>
      <input name="actions" placeholder="actions, comma separated">
      <input name="notes" placeholder="notes">
      <input name="duration_gt" type="number" min="1" placeholder="duration &gt; n (optional)">
    </fieldset>
    <fieldset class="split-box">
      <legend><label><input type="radio" name="action" value="split"> split</label></legend>
      <div class="mask-group">part 1: ${fieldToggles(0)}</div>
      <div class="mask-group">part 2: ${fieldToggles(1)}</div>
    </fieldset>
    <fieldset class="combine-box">
      <legend><label><input type="radio" name="action" value="combine"> combine into</label></legend>
      <select name="target_rule_id">${targets || "<option value=''>no appraised rules yet</option>"}</select>
    </fieldset>
    <fieldset class="whitelist-box">
      <legend><label><input type="radio" name="action" value="whitelist"> whitelist</label></legend>
      <span class="hint">null response; matching occurrences raise no alarms</span>
    </fieldset>
    <div class="form-actions">
      <button type="submit">submit</button>
      <button type="button" class="cancel">cancel</button>
    </div>
  </form>`;
}

export function renderAnomalyList(state: AppState): string {
  if (!state.selectedRuleIds.length) {
    return `<div class="empty-state">select rules to list their occurrences</div>`;
  }
  if (!state.anomalies.length) {
    return `<div class="empty-state">no occurrences for the selected rules</div>`;
  }
  const rows = state.anomalies
    .map(
      (a) => `<tr>
      <td><input type="radio" name="anomaly" class="anomaly-select" data-event-id="${esc(a.event_id)}" ${
        state.detail?.eventId === a.event_id ? "checked" : ""
      }></td>
      <td>${esc(a.cell_id)}</td>
      <td>${esc(a.t_start)}</td>
      <td>${a.duration}</td>
      <td class="conds">${a.vector.map((g) => conditionSymbol(g)).join(" ")}</td>
      <td>${esc(a.matched_rule_id ?? "—")}</td>
    </tr>`,
    )
    .join("");
  return `<table class="anomaly-table">
    <thead><tr><th></th><th>cell</th><th>start</th><th>duration</th><th>vector</th><th>rule</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

export function renderDetail(state: AppState): string {
  const detail = state.detail;
  if (!detail) return "";
  if (detail.loading) {
    return `<div class="detail loading">loading series for ${esc(detail.eventId)}…</div>`;
  }
  if (detail.error || !detail.series) {
    return `<div class="detail error">
      <p>could not load the series window: ${esc(detail.error ?? "no data")}</p>
      <button class="retry" data-event-id="${esc(detail.eventId)}">retry</button>
    </div>`;
  }
  const { event, series, interval_seconds } = detail.series;
  const charts = series
    .map((s) => renderChartSvg(s, event.t_start, event.t_end, interval_seconds))
    .join("");
  return `<div class="detail">
    <h3>${esc(event.cell_id)} · ${esc(event.t_start)} → ${esc(event.t_end)} · duration ${event.duration}</h3>
    <p class="vector">vector: ${event.vector.map((g) => conditionSymbol(g)).join(" ")}</p>
    ${charts}
  </div>`;
}

export function anomaliesForEvent(state: AppState, eventId: string): AnomalyJson | undefined {
  return state.anomalies.find((a) => a.event_id === eventId);
}
