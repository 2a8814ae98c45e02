import { describe, expect, it } from "vitest";

import { ApiError, normalizeTurn, ServiceClient } from "../src/api.js";
import { FakeService, makeItems } from "./fake_service.js";

function clientFor(service: FakeService): ServiceClient {
  return new ServiceClient("http://fake", service.fetch);
}

describe("normalizeTurn", () => {
  const entries = [
    { item_id: "a", score: 0.9 },
    { item_id: "b", score: 0.7 },
  ];

  it("accepts live-turn payloads keyed by results", () => {
    const view = normalizeTurn({ turn: 1, truth_rank: 2, results: entries });
    expect(view.results.map((r) => r.item_id)).toEqual(["a", "b"]);
  });

  it("accepts history payloads keyed by candidates", () => {
    const view = normalizeTurn({
      turn: 3,
      truth_rank: null,
      candidates: entries,
    });
    expect(view.turn).toBe(3);
    expect(view.truth_rank).toBeNull();
    expect(view.results.length).toBe(2);
  });

  it("rejects payloads with neither key", () => {
    expect(() => normalizeTurn({ turn: 1, truth_rank: null })).toThrow(
      ApiError,
    );
  });
});

describe("ServiceClient", () => {
  it("lists captions with the patch-grid size", async () => {
    const client = clientFor(new FakeService(makeItems(3)));
    const index = await client.listCaptions();
    expect(index.captions.length).toBe(6);
    expect(index.captions[0]).toEqual({
      caption_id: "item00000_c0",
      text: "caption 0 describing item00000",
      item_id: "item00000",
    });
    expect(index.patches_per_item).toBe(9);
  });

  it("creates sessions and normalizes the first turn", async () => {
    const client = clientFor(new FakeService(makeItems(8)));
    const created = await client.createSession("item00002_c1", "prf_extended");
    expect(created.sessionId).toMatch(/^fake-/);
    expect(created.truthItemId).toBe("item00002");
    expect(created.turn.turn).toBe(1);
    expect(created.turn.results.length).toBe(5);
  });

  it("surfaces {code, message} errors as ApiError", async () => {
    const client = clientFor(new FakeService(makeItems(2)));
    const error = await client
      .createSession("missing_c9", "none")
      .then(() => null)
      .catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(404);
    expect((error as ApiError).message).toContain("missing_c9");
    expect((error as ApiError).unreachable).toBe(false);
  });

  it("maps network failure to an unreachable ApiError", async () => {
    const service = new FakeService(makeItems(2));
    service.offline = true;
    const client = clientFor(service);
    const error = await client
      .listCaptions()
      .then(() => null)
      .catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(0);
    expect((error as ApiError).unreachable).toBe(true);
  });

  it("round-trips feedback and history turns through one shape", async () => {
    const client = clientFor(new FakeService(makeItems(8)));
    const created = await client.createSession("item00001_c0", "prf_extended");
    const outcome = await client.sendFeedback(created.sessionId, {
      item_marks: [
        { item_id: created.turn.results[0].item_id, mark: "relevant" },
      ],
      region_boxes: [],
      explicit_caption_id: null,
    });
    expect(outcome.turn.turn).toBe(2);
    expect(outcome.saliency).toBeNull();

    const history = await client.getSession(created.sessionId);
    expect(history.turns.length).toBe(2);
    expect(history.turns[0].results).toEqual(created.turn.results);
    expect(history.turns[1].results).toEqual(outcome.turn.results);
    expect(history.feedback.length).toBe(1);
  });

  it("fetches item metadata", async () => {
    const client = clientFor(new FakeService(makeItems(2)));
    const item = await client.getItem("item00001");
    expect(item.image_ref).toBe("synthetic://item00001");
    expect(item.captions.length).toBe(2);
  });
});
