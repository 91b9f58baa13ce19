import { beforeEach, describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { render, escapeHtml } from "../src/render.js";
import {
  RatingSession,
  canSubmit,
  randomSubmissionId,
  type SessionState,
} from "../src/session.js";
import { METRICS, type Metric, type Score } from "../src/types.js";
import { FakeService } from "./fakeservice.js";

interface Harness {
  service: FakeService;
  session: RatingSession;
  states: SessionState[];
  pages: string[];
}

function makeHarness(nItems = 3): Harness {
  const service = new FakeService(nItems);
  const states: SessionState[] = [];
  const pages: string[] = [];
  const session = new RatingSession(
    (baseUrl, studyId, token) =>
      new ServiceClient(baseUrl, studyId, token, service.fetch),
    (state) => {
      states.push(state);
      pages.push(render(state));
    },
  );
  return { service, session, states, pages };
}

async function login(h: Harness): Promise<void> {
  await h.session.login("http://svc.test", h.service.studyId, h.service.token);
}

function setAll(h: Harness, value: Score): void {
  for (const metric of METRICS) {
    h.session.setScore(metric, value);
  }
}

function lastPage(h: Harness): string {
  const page = h.pages[h.pages.length - 1];
  if (page === undefined) throw new Error("no page rendered");
  return page;
}

describe("three-item session", () => {
  let h: Harness;
  beforeEach(() => {
    h = makeHarness(3);
  });

  it("walks 1/3, 2/3, 3/3, then done", async () => {
    await login(h);
    const seen: string[] = [];
    for (let round = 0; round < 3; round++) {
      expect(h.session.current().kind).toBe("rating");
      seen.push(lastPage(h));
      setAll(h, 5);
      await h.session.submit();
    }
    expect(seen[0]).toContain("Item 1 of 3");
    expect(seen[1]).toContain("Item 2 of 3");
    expect(seen[2]).toContain("Item 3 of 3");
    const state = h.session.current();
    expect(state).toEqual({ kind: "done", submitted: 3 });
    expect(lastPage(h)).toContain("You submitted 3 ratings");
    expect(h.service.storedCount()).toBe(3);
  });

  it("sends the exact five-metric payload", async () => {
    await login(h);
    setAll(h, 5);
    await h.session.submit();
    const body = h.service.postBodies[0] as { scores: Record<string, number> };
    expect(body.scores).toEqual({
      understandability: 5,
      coherence: 5,
      relevance: 5,
      conciseness: 5,
      clinical_utility: 5,
    });
  });

  it("uses a fresh submission id per item", async () => {
    await login(h);
    const ids = new Set<string>();
    for (let round = 0; round < 3; round++) {
      const state = h.session.current();
      if (state.kind !== "rating") throw new Error("expected rating state");
      ids.add(state.submissionId);
      setAll(h, 3);
      await h.session.submit();
    }
    expect(ids.size).toBe(3);
  });
});

describe("submit gating", () => {
  it("disables submit until all five metrics are set", async () => {
    const h = makeHarness(1);
    await login(h);
    expect(lastPage(h)).toContain('<button id="submit" type="button" disabled>');
    // four of five is still not enough
    const four = METRICS.slice(0, 4) as Metric[];
    for (const metric of four) h.session.setScore(metric, 2);
    expect(lastPage(h)).toContain('<button id="submit" type="button" disabled>');
    await h.session.submit();
    expect(h.service.storedCount()).toBe(0);
    h.session.setScore("clinical_utility", 2);
    expect(lastPage(h)).toContain('<button id="submit" type="button">');
    await h.session.submit();
    expect(h.service.storedCount()).toBe(1);
  });

  it("canSubmit requires every metric", () => {
    expect(canSubmit({})).toBe(false);
    expect(
      canSubmit({
        understandability: 1,
        coherence: 2,
        relevance: 3,
        conciseness: 4,
      }),
    ).toBe(false);
    expect(
      canSubmit({
        understandability: 1,
        coherence: 2,
        relevance: 3,
        conciseness: 4,
        clinical_utility: 5,
      }),
    ).toBe(true);
  });
});

describe("idempotency", () => {
  it("double-click stores exactly one rating", async () => {
    const h = makeHarness(1);
    await login(h);
    setAll(h, 4);
    const first = h.session.submit();
    const second = h.session.submit();
    await Promise.all([first, second]);
    expect(h.service.storedCount()).toBe(1);
    expect(h.service.postBodies.length).toBe(1);
    expect(h.session.current()).toEqual({ kind: "done", submitted: 1 });
  });

  it("retries a lost response with the same submission id and absorbs the duplicate", async () => {
    const h = makeHarness(1);
    await login(h);
    const before = h.session.current();
    if (before.kind !== "rating") throw new Error("expected rating state");
    const submissionId = before.submissionId;
    setAll(h, 3);
    h.service.dropResponseOnce = true;
    await h.session.submit();
    const after = h.session.current();
    if (after.kind !== "rating") throw new Error("expected rating state after failure");
    expect(after.error).toContain("submit again");
    expect(after.scores).toEqual(
      Object.fromEntries(METRICS.map((metric) => [metric, 3])),
    );
    expect(after.submissionId).toBe(submissionId);
    expect(lastPage(h)).toContain("submit again");

    await h.session.submit();
    expect(h.service.storedCount()).toBe(1);
    const bodies = h.service.postBodies as { submission_id: string }[];
    expect(bodies.length).toBe(2);
    expect(bodies[0]?.submission_id).toBe(submissionId);
    expect(bodies[1]?.submission_id).toBe(submissionId);
    expect(h.session.current()).toEqual({ kind: "done", submitted: 1 });
  });

  it("moves past a cell scored from another tab without counting it", async () => {
    const h = makeHarness(2);
    await login(h);
    const state = h.session.current();
    if (state.kind !== "rating") throw new Error("expected rating state");
    // another tab scores the same cell under a different submission id
    h.service.ratings.set(state.item.item_id, {
      submissionId: "other-tab",
      scores: Object.fromEntries(METRICS.map((m) => [m, 2])),
    });
    setAll(h, 4);
    await h.session.submit();
    const next = h.session.current();
    if (next.kind !== "rating") throw new Error("expected second item");
    expect(next.scored).toBe(1);
    setAll(h, 4);
    await h.session.submit();
    expect(h.session.current()).toEqual({ kind: "done", submitted: 1 });
  });
});

describe("error handling", () => {
  it("validation error renders inline and preserves scores", async () => {
    const h = makeHarness(1);
    await login(h);
    setAll(h, 5);
    // sabotage the payload path: force a score the service rejects
    const state = h.session.current();
    if (state.kind !== "rating") throw new Error("expected rating state");
    (state.scores as Record<string, number>).relevance = 9;
    await h.session.submit();
    const after = h.session.current();
    if (after.kind !== "rating") throw new Error("expected rating state");
    expect(after.error).toContain("invalid score for relevance");
    expect(after.scores.understandability).toBe(5);
    expect(lastPage(h)).toContain("invalid score for relevance");
    expect(h.service.storedCount()).toBe(0);
  });

  it("expired token returns to entry with a prompt", async () => {
    const h = makeHarness(1);
    h.service.expireToken = true;
    await login(h);
    const state = h.session.current();
    expect(state.kind).toBe("login");
    expect(lastPage(h)).toContain("token expired or invalid");
  });

  it("wrong token returns to entry", async () => {
    const h = makeHarness(1);
    await h.session.login("http://svc.test", h.service.studyId, "wrong");
    expect(h.session.current().kind).toBe("login");
  });

  it("blank login fields are rejected locally", async () => {
    const h = makeHarness(1);
    await h.session.login("", "", "");
    const state = h.session.current();
    expect(state.kind).toBe("login");
    expect(lastPage(h)).toContain("all three fields are required");
  });

  it("an unreachable service on first load is fatal with advice", async () => {
    const h = makeHarness(1);
    h.service.refuseOnce = true;
    await login(h);
    expect(h.session.current().kind).toBe("fatal");
    expect(lastPage(h)).toContain("reload to try again");
  });
});

describe("blinding", () => {
  it("no rendered page ever contains a model label or report id", async () => {
    const h = makeHarness(3);
    await login(h);
    for (let round = 0; round < 3; round++) {
      setAll(h, (round + 1) as Score);
      await h.session.submit();
    }
    expect(h.session.current().kind).toBe("done");
    const needles = ["zzmodelA", "zzmodelB", "zzreport0", "zzreport1", "zzreport2"];
    for (const page of h.pages) {
      for (const needle of needles) {
        expect(page).not.toContain(needle);
      }
    }
    // sanity: the scan would catch a leak if one happened
    expect(h.pages.length).toBeGreaterThan(5);
    expect(escapeHtml("zzmodelA")).toBe("zzmodelA");
  });

  it("findings and candidate text are shown to the rater", async () => {
    const h = makeHarness(1);
    await login(h);
    const page = lastPage(h);
    expect(page).toContain("Opaque findings body number 0");
    expect(page).toContain("Opaque candidate impression number 0");
  });

  it("markup in study text is escaped, not executed", () => {
    const page = render({
      kind: "rating",
      item: {
        item_id: "item0",
        findings: '<script>alert("x")</script>',
        candidate_impression: "plain",
      },
      scored: 0,
      total: 1,
      scores: {},
      submissionId: "s",
      submitting: false,
    });
    expect(page).not.toContain("<script>alert");
    expect(page).toContain("&lt;script&gt;");
  });
});

describe("submission ids", () => {
  it("are 32 hex characters and unique", () => {
    const seen = new Set<string>();
    for (let index = 0; index < 64; index++) {
      const id = randomSubmissionId();
      expect(id).toMatch(/^[0-9a-f]{32}$/);
      seen.add(id);
    }
    expect(seen.size).toBe(64);
  });
});
