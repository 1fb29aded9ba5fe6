/** Wire shapes of the appraisal service API. */

export type ConditionGlyph = "+" | "-" | "0" | "x";
export type RuleStatus = "unappraised" | "appraised" | "whitelisted";

export interface ExtendedDuration {
  type: "duration";
  op: ">" | ">=" | "<" | "<=";
  k: number;
}

export interface ExtendedField {
  type: "field";
  lhs: number;
  op: ">" | "<";
  coeff: number;
  rhs: number;
}

export type ExtendedCondition = ExtendedDuration | ExtendedField;

export interface ResponseBody {
  kind: "null" | "default_alarm" | "custom";
  severity: string | null;
  priority: number | null;
  actions: string[];
  notes: string;
}

export interface RuleJson {
  id: string;
  conditions: ConditionGlyph[];
  extended: ExtendedCondition[];
  count: number;
  status: RuleStatus;
  response: ResponseBody;
  created_at: string;
}

export interface RulesPage {
  rules: RuleJson[];
  fields: string[];
}

export interface AnomalyJson {
  event_id: string;
  cell_id: string;
  group_id: string;
  t_start: string;
  t_end: string;
  duration: number;
  vector: ConditionGlyph[];
  matched_rule_id: string | null;
  response_taken: ResponseBody;
  emitted_at: string;
  supersedes: string | null;
  aggregated: (number | null)[];
}

export interface AnomaliesPage {
  items: AnomalyJson[];
  total: number;
  page: number;
  page_size: number;
}

export interface SeriesPoint {
  t: string;
  value: number | null;
}

export interface KpiSeries {
  kpi: string;
  ref: number | null;
  points: SeriesPoint[];
}

export interface SeriesResponse {
  event: AnomalyJson;
  interval_seconds: number;
  series: KpiSeries[];
}

export type AppraiseAction = "assign" | "split" | "combine" | "whitelist";

export interface AppraisePayload {
  action: AppraiseAction;
  response?: Partial<ResponseBody>;
  masks?: number[][];
  target_rule_id?: string;
  extended?: ExtendedCondition[];
  actor?: string;
}
