/** Wire types for the rating service, mirroring its API reference. */

export const METRICS = [
  "understandability",
  "coherence",
  "relevance",
  "conciseness",
  "clinical_utility",
] as const;

export type Metric = (typeof METRICS)[number];

export type Score = 1 | 2 | 3 | 4 | 5;

/** One-line rubric shown as a tooltip so every rater applies the same scale. */
export const METRIC_HELP: Record<Metric, string> = {
  understandability: "How easily a clinician can read and understand the text",
  coherence: "Whether the text holds together without contradiction",
  relevance: "Whether the content addresses the findings it summarizes",
  conciseness: "Whether the text says what it needs without padding",
  clinical_utility: "How useful the text is for clinical decision making",
};

export interface RatingItem {
  item_id: string;
  findings: string;
  candidate_impression: string;
  reference_impression?: string;
}

export interface NextResponse {
  done: boolean;
  scored: number;
  total: number;
  item?: RatingItem;
}

export interface RatingPayload {
  item_id: string;
  submission_id: string;
  scores: Record<Metric, number>;
}

export interface RatingResponse {
  status: "accepted" | "duplicate";
}
