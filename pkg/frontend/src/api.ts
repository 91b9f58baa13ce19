/** Typed client over the rating service's HTTP routes.
 *
 * The fetch function is injectable so tests can script the service.
 * Errors are split by how the session must react: AuthError sends the
 * rater back to token entry, ValidationError renders inline,
 * ConflictError means the cell was already scored elsewhere, and
 * TransportError is retryable with the same submission id.
 */

import type { NextResponse, RatingPayload, RatingResponse } from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown>; text(): Promise<string> }>;

export class AuthError extends Error {}
export class ValidationError extends Error {}
export class ConflictError extends Error {}
export class TransportError extends Error {}

async function detailOf(response: { json(): Promise<unknown> }): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
  } catch {
    return "request rejected";
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly studyId: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private url(suffix: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}/studies/${this.studyId}/${suffix}`;
  }

  private async request(
    suffix: string,
    init: { method?: string; body?: string },
  ): Promise<unknown> {
    let response;
    try {
      response = await this.fetchFn(this.url(suffix), {
        ...init,
        headers: {
          "x-rater-token": this.token,
          "content-type": "application/json",
        },
      });
    } catch (error) {
      throw new TransportError(error instanceof Error ? error.message : String(error));
    }
    if (response.status === 401 || response.status === 403) {
      throw new AuthError(await detailOf(response));
    }
    if (response.status === 404) {
      throw new AuthError("study not found; check the study id");
    }
    if (response.status === 409) {
      throw new ConflictError(await detailOf(response));
    }
    if (response.status === 422 || response.status === 400) {
      throw new ValidationError(await detailOf(response));
    }
    if (response.status >= 500) {
      throw new TransportError(`service error ${response.status}`);
    }
    return response.json();
  }

  async next(): Promise<NextResponse> {
    return (await this.request("next", { method: "GET" })) as NextResponse;
  }

  async submitRating(payload: RatingPayload): Promise<RatingResponse> {
    return (await this.request("ratings", {
      method: "POST",
      body: JSON.stringify(payload),
    })) as RatingResponse;
  }
}
