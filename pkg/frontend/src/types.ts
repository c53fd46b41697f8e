// Wire types for the review service (see the README endpoint table).

export type ExceptionType =
  | 'AmountOutstanding'
  | 'CouponDate'
  | 'SecurityStatus'
  | 'MaturityDate'
  | 'IssueDate'
  | 'DividendAmount'
  | 'ESAI2010';

export const EXCEPTION_TYPES: ExceptionType[] = [
  'AmountOutstanding', 'CouponDate', 'SecurityStatus', 'MaturityDate',
  'IssueDate', 'DividendAmount', 'ESAI2010',
];

// snapshot field the reviewer edits when correcting an exception of a type
export const FIELD_OF_TYPE: Record<ExceptionType, string> = {
  AmountOutstanding: 'amount_outstanding',
  CouponDate: 'coupon_date',
  SecurityStatus: 'security_status',
  MaturityDate: 'maturity_date',
  IssueDate: 'issue_date',
  DividendAmount: 'dividend_amount',
  ESAI2010: 'esa2010',
};

export const NUMERIC_FIELDS = new Set([
  'amount_outstanding', 'market_cap', 'price', 'coupon_rate', 'dividend_amount',
]);

export type ReviewState = 'open' | 'confirmed' | 'corrected';

export interface QueueItem {
  item_id: string;
  position: number;
  instrument_id: string;
  ref_month: string;
  exception_type: ExceptionType;
  probability: number;
  amount_outstanding: number;
  rank_score: number;
  state: ReviewState;
  links: { explanation: string; counterfactual: string; exemplars: string };
}

export interface QueueResponse {
  schema_version: number;
  run_id: string;
  model_version: string | null;
  total: number;
  items: QueueItem[];
}

export interface Contribution {
  feature: string;
  value: number;
}

export interface ExplainResponse {
  schema_version: number;
  run_id: string;
  item_id: string;
  base: number;
  margin: number;
  contributions: Contribution[];
  proposal: { exception_type: string; top_feature: string } | null;
}

export interface CounterfactualChange {
  feature: string;
  from: string;
  to: string;
}

export interface Counterfactual {
  cost: number;
  original_class: number;
  new_class: number;
  changes: CounterfactualChange[];
}

export interface CounterfactualResponse {
  schema_version: number;
  item_id: string;
  budget_exhausted: boolean;
  counterfactuals: Counterfactual[];
}

export interface Exemplar {
  row_id: string;
  distance: number;
  label: number | null;
}

export interface ExemplarsResponse {
  schema_version: number;
  item_id: string;
  exemplars: Exemplar[];
}

export interface FeedbackResponse {
  schema_version: number;
  audit_id: number;
  item_id: string;
  state: ReviewState;
}

export interface MonitoringResponse {
  schema_version: number;
  monitored_type: string;
  uncertainty: {
    baseline_q99: number;
    latest_month_mean_std: number;
    alarm: boolean;
    ensemble_size: number;
  };
  drift: {
    window: number;
    k: number;
    months: string[];
    flags: { feature: string; month: string }[];
  };
}

export type ConfirmBody = { item: string; action: 'confirm' };
export type CorrectBody = {
  item: string;
  action: 'correct';
  field: string;
  new_value: string | number;
};
export type FeedbackBody = ConfirmBody | CorrectBody;
