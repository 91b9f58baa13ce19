/** The rating session state machine, free of DOM dependencies.
 *
 * Forward only: once a rating is acknowledged the item is gone; there
 * is no navigation back and no local record of past scores. Each item
 * gets a fresh random submission id; the id is reused across retries
 * of the same item so the service can absorb duplicates.
 */

import {
  AuthError,
  ConflictError,
  ServiceClient,
  TransportError,
  ValidationError,
} from "./api.js";
import type { Metric, RatingItem, Score } from "./types.js";
import { METRICS } from "./types.js";

export type SessionState =
  | { kind: "login"; error?: string }
  | { kind: "loading" }
  | {
      kind: "rating";
      item: RatingItem;
      scored: number;
      total: number;
      scores: Partial<Record<Metric, Score>>;
      submissionId: string;
      submitting: boolean;
      error?: string;
    }
  | { kind: "done"; submitted: number }
  | { kind: "fatal"; message: string };

export type ClientFactory = (
  baseUrl: string,
  studyId: string,
  token: string,
) => ServiceClient;

export function randomSubmissionId(): string {
  const bytes = new Uint8Array(16);
  crypto.getRandomValues(bytes);
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function canSubmit(scores: Partial<Record<Metric, Score>>): boolean {
  return METRICS.every((metric) => scores[metric] !== undefined);
}

export class RatingSession {
  private state: SessionState = { kind: "login" };
  private client: ServiceClient | null = null;
  private submitted = 0;

  constructor(
    private readonly makeClient: ClientFactory,
    private readonly onChange: (state: SessionState) => void,
    private readonly newSubmissionId: () => string = randomSubmissionId,
  ) {
    this.emit();
  }

  current(): SessionState {
    return this.state;
  }

  private emit(): void {
    this.onChange(this.state);
  }

  private set(state: SessionState): void {
    this.state = state;
    this.emit();
  }

  async login(baseUrl: string, studyId: string, token: string): Promise<void> {
    if (!baseUrl.trim() || !studyId.trim() || !token.trim()) {
      this.set({ kind: "login", error: "all three fields are required" });
      return;
    }
    this.client = this.makeClient(baseUrl.trim(), studyId.trim(), token.trim());
    this.submitted = 0;
    this.set({ kind: "loading" });
    await this.fetchNext();
  }

  private async fetchNext(): Promise<void> {
    if (!this.client) return;
    try {
      const next = await this.client.next();
      if (next.done || !next.item) {
        this.set({ kind: "done", submitted: this.submitted });
        return;
      }
      this.set({
        kind: "rating",
        item: next.item,
        scored: next.scored,
        total: next.total,
        scores: {},
        submissionId: this.newSubmissionId(),
        submitting: false,
      });
    } catch (error) {
      this.handleFetchError(error, () => this.fetchNext());
    }
  }

  setScore(metric: Metric, value: Score): void {
    if (this.state.kind !== "rating" || this.state.submitting) return;
    this.set({
      ...this.state,
      scores: { ...this.state.scores, [metric]: value },
      error: undefined,
    });
  }

  async submit(): Promise<void> {
    if (this.state.kind !== "rating" || !this.client) return;
    if (this.state.submitting || !canSubmit(this.state.scores)) return;
    const rating = this.state;
    this.set({ ...rating, submitting: true, error: undefined });
    try {
      // accepted and duplicate both mean the rating is stored once
      await this.client.submitRating({
        item_id: rating.item.item_id,
        submission_id: rating.submissionId,
        scores: rating.scores as Record<Metric, number>,
      });
      this.submitted += 1;
      this.set({ kind: "loading" });
      await this.fetchNext();
    } catch (error) {
      if (error instanceof ValidationError) {
        // keep the scores and the submission id; the rater can adjust and retry
        this.set({ ...rating, submitting: false, error: error.message });
      } else if (error instanceof ConflictError) {
        // scored from elsewhere under another submission; move on without counting
        this.set({ kind: "loading" });
        await this.fetchNext();
      } else if (error instanceof TransportError) {
        // same submission id on retry; the service deduplicates
        this.set({
          ...rating,
          submitting: false,
          error: "could not reach the service; your scores are kept, submit again",
        });
      } else if (error instanceof AuthError) {
        this.set({ kind: "login", error: "token expired or invalid; enter it again" });
      } else {
        this.set({ kind: "fatal", message: String(error) });
      }
    }
  }

  private handleFetchError(error: unknown, _retry: () => Promise<void>): void {
    if (error instanceof AuthError) {
      this.set({ kind: "login", error: "token expired or invalid; enter it again" });
    } else if (error instanceof TransportError) {
      this.set({
        kind: "fatal",
        message: "could not reach the service; reload to try again",
      });
    } else {
      this.set({ kind: "fatal", message: String(error) });
    }
  }
}
