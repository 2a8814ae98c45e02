import { describe, expect, it } from "vitest";

import type { FeedbackBody, SessionHistory, TurnView } from "../src/api.js";
import {
  addBox,
  appendTurn,
  canSubmit,
  draftHasFeedback,
  emptyDraft,
  feedbackToRequest,
  patchHeat,
  rankTrajectory,
  removeBox,
  toggleMark,
  viewFromCreate,
  viewFromHistory,
} from "../src/state.js";

function turn(n: number, ids: string[], truthRank: number | null): TurnView {
  return {
    turn: n,
    truth_rank: truthRank,
    results: ids.map((item_id, i) => ({ item_id, score: 1 - i / 10 })),
  };
}

describe("feedback draft", () => {
  it("toggles marks: same clears, other replaces", () => {
    let draft = emptyDraft();
    draft = toggleMark(draft, "a", "relevant");
    expect(draft.marks.get("a")).toBe("relevant");
    draft = toggleMark(draft, "a", "irrelevant");
    expect(draft.marks.get("a")).toBe("irrelevant");
    draft = toggleMark(draft, "a", "irrelevant");
    expect(draft.marks.has("a")).toBe(false);
  });

  it("is immutable under edits", () => {
    const before = emptyDraft();
    const after = toggleMark(before, "a", "relevant");
    expect(before.marks.size).toBe(0);
    expect(after.marks.size).toBe(1);
    const withBox = addBox(after, {
      itemId: "a",
      patches: [0, 1],
      polarity: "relevant",
    });
    expect(after.boxes.length).toBe(0);
    expect(withBox.boxes.length).toBe(1);
    expect(removeBox(withBox, 0).boxes.length).toBe(0);
    expect(withBox.boxes.length).toBe(1);
  });

  it("drops empty boxes", () => {
    const draft = addBox(emptyDraft(), {
      itemId: "a",
      patches: [],
      polarity: "relevant",
    });
    expect(draft.boxes.length).toBe(0);
  });

  it("reports feedback presence from any channel", () => {
    expect(draftHasFeedback(emptyDraft())).toBe(false);
    expect(draftHasFeedback(toggleMark(emptyDraft(), "a", "relevant"))).toBe(
      true,
    );
    expect(
      draftHasFeedback(
        addBox(emptyDraft(), { itemId: "a", patches: [3], polarity: "relevant" }),
      ),
    ).toBe(true);
    expect(
      draftHasFeedback({ ...emptyDraft(), explicitCaptionId: "x_c1" }),
    ).toBe(true);
  });

  it("serializes to the wire shape", () => {
    let draft = toggleMark(emptyDraft(), "b", "irrelevant");
    draft = toggleMark(draft, "a", "relevant");
    draft = addBox(draft, { itemId: "a", patches: [4, 5], polarity: "irrelevant" });
    const body = feedbackToRequest(draft);
    expect(body.item_marks).toContainEqual({ item_id: "a", mark: "relevant" });
    expect(body.item_marks).toContainEqual({
      item_id: "b",
      mark: "irrelevant",
    });
    expect(body.region_boxes).toEqual([
      { item_id: "a", patches: [4, 5], polarity: "irrelevant" },
    ]);
    expect(body.explicit_caption_id).toBeNull();
  });
});

describe("canSubmit", () => {
  it("always allows non-explicit strategies", () => {
    for (const s of ["none", "prf_extended", "grf", "afs", "afs_prf"]) {
      expect(canSubmit(s, emptyDraft())).toBe(true);
    }
  });

  it("blocks explicit refinement with an empty draft", () => {
    expect(canSubmit("explicit", emptyDraft())).toBe(false);
    expect(canSubmit("explicit", toggleMark(emptyDraft(), "a", "relevant"))).toBe(
      true,
    );
    expect(
      canSubmit("explicit", {
        ...emptyDraft(),
        explicitCaptionId: "item_c1",
      }),
    ).toBe(true);
  });
});

describe("session view", () => {
  const feedback: FeedbackBody = {
    item_marks: [{ item_id: "b", mark: "relevant" }],
    region_boxes: [{ item_id: "c", patches: [0, 3], polarity: "irrelevant" }],
    explicit_caption_id: null,
  };

  it("live appends equal a rebuild from stored history", () => {
    const t1 = turn(1, ["a", "b", "c"], 3);
    const t2 = turn(2, ["b", "a", "c"], 1);
    const live = appendTurn(
      viewFromCreate("s1", "q_c0", "q", "prf_extended", t1),
      t2,
      feedback,
    );
    const history: SessionHistory = {
      session_id: "s1",
      query_id: "q_c0",
      truth_item_id: "q",
      strategy: "prf_extended",
      params: {},
      seed: 0,
      created: 1,
      updated: 2,
      feedback: [feedback],
      turns: [t1, t2],
    };
    expect(viewFromHistory(history)).toEqual(live);
  });

  it("an unrefined session shows exactly one turn", () => {
    const view = viewFromCreate("s1", "q_c0", "q", "none", turn(1, ["a"], 1));
    expect(view.turns.length).toBe(1);
    expect(view.feedback.length).toBe(0);
  });

  it("rebuilding is defensive: mutating the view leaves history intact", () => {
    const history: SessionHistory = {
      session_id: "s1",
      query_id: "q_c0",
      truth_item_id: "q",
      strategy: "none",
      params: {},
      seed: 0,
      created: 1,
      updated: 1,
      feedback: [feedback],
      turns: [turn(1, ["a", "b"], 2), turn(2, ["b", "a"], 1)],
    };
    const view = viewFromHistory(history);
    view.turns[0].results[0].score = -1;
    view.feedback[0].region_boxes[0].patches.push(99);
    expect(history.turns[0].results[0].score).toBe(1);
    expect(history.feedback[0].region_boxes[0].patches).toEqual([0, 3]);
  });

  it("extracts the ground-truth rank trajectory", () => {
    let view = viewFromCreate("s", "q_c0", "q", "none", turn(1, ["a"], 4));
    view = appendTurn(view, turn(2, ["a"], 2), feedback);
    view = appendTurn(view, turn(3, ["a"], null), feedback);
    expect(rankTrajectory(view)).toEqual([4, 2, null]);
  });
});

describe("saliency lookup", () => {
  it("finds per-item patch heat by turn", () => {
    const saliency = new Map([
      [
        2,
        {
          mode: "afs",
          items: [
            { item_id: "a", score: 0.5, image_score: 0.5, patches: [0.1, 0.9] },
          ],
        },
      ],
    ]);
    expect(patchHeat(saliency, 2, "a")).toEqual([0.1, 0.9]);
    expect(patchHeat(saliency, 2, "b")).toBeNull();
    expect(patchHeat(saliency, 1, "a")).toBeNull();
  });
});
