/**
 * Pure session view-model.
 *
 * The rendered UI is a function of (a) the session history the service
 * reports and (b) the local feedback draft for the next turn.  Building
 * the view turn-by-turn as responses arrive and rebuilding it from a
 * GET of the stored history must agree exactly; that equality is what
 * makes reloads safe, and it is pinned by tests.
 */

import type {
  FeedbackBody,
  Mark,
  SaliencyPayload,
  SessionHistory,
  TurnView,
} from "./api.js";

export interface RegionBoxDraft {
  itemId: string;
  patches: number[];
  polarity: Mark;
}

export interface FeedbackDraft {
  marks: Map<string, Mark>;
  boxes: RegionBoxDraft[];
  explicitCaptionId: string | null;
}

export interface SessionView {
  sessionId: string;
  queryId: string;
  truthItemId: string | null;
  strategy: string;
  turns: TurnView[];
  feedback: FeedbackBody[];
}

export function emptyDraft(): FeedbackDraft {
  return { marks: new Map(), boxes: [], explicitCaptionId: null };
}

/** Toggle one item's mark: same mark clears it, any other replaces it. */
export function toggleMark(
  draft: FeedbackDraft,
  itemId: string,
  mark: Mark,
): FeedbackDraft {
  const marks = new Map(draft.marks);
  if (marks.get(itemId) === mark) {
    marks.delete(itemId);
  } else {
    marks.set(itemId, mark);
  }
  return { ...draft, marks };
}

export function addBox(
  draft: FeedbackDraft,
  box: RegionBoxDraft,
): FeedbackDraft {
  if (box.patches.length === 0) {
    return draft;
  }
  return { ...draft, boxes: [...draft.boxes, box] };
}

export function removeBox(draft: FeedbackDraft, index: number): FeedbackDraft {
  return { ...draft, boxes: draft.boxes.filter((_, i) => i !== index) };
}

export function draftHasFeedback(draft: FeedbackDraft): boolean {
  return (
    draft.marks.size > 0 ||
    draft.boxes.length > 0 ||
    draft.explicitCaptionId !== null
  );
}

/**
 * Whether "Refine" may be pressed.  Strategies other than explicit
 * accept an empty round (it degenerates to an automatic feedback turn);
 * explicit refinement is meaningless without any user signal.
 */
export function canSubmit(strategy: string, draft: FeedbackDraft): boolean {
  return strategy !== "explicit" || draftHasFeedback(draft);
}

export function feedbackToRequest(draft: FeedbackDraft): FeedbackBody {
  return {
    item_marks: [...draft.marks.entries()].map(([item_id, mark]) => ({
      item_id,
      mark,
    })),
    region_boxes: draft.boxes.map((b) => ({
      item_id: b.itemId,
      patches: [...b.patches],
      polarity: b.polarity,
    })),
    explicit_caption_id: draft.explicitCaptionId,
  };
}

export function viewFromCreate(
  sessionId: string,
  queryId: string,
  truthItemId: string | null,
  strategy: string,
  firstTurn: TurnView,
): SessionView {
  return {
    sessionId,
    queryId,
    truthItemId,
    strategy,
    turns: [firstTurn],
    feedback: [],
  };
}

/** Append one refined turn; pure, the previous view is untouched. */
export function appendTurn(
  view: SessionView,
  turn: TurnView,
  feedback: FeedbackBody,
): SessionView {
  return {
    ...view,
    turns: [...view.turns, turn],
    feedback: [...view.feedback, feedback],
  };
}

/** Rebuild the same view from a stored history document. */
export function viewFromHistory(history: SessionHistory): SessionView {
  return {
    sessionId: history.session_id,
    queryId: history.query_id,
    truthItemId: history.truth_item_id,
    strategy: history.strategy,
    turns: history.turns.map((t) => ({
      turn: t.turn,
      truth_rank: t.truth_rank,
      results: t.results.map((r) => ({ ...r })),
    })),
    feedback: history.feedback.map((f) => ({
      item_marks: f.item_marks.map((m) => ({ ...m })),
      region_boxes: f.region_boxes.map((b) => ({
        ...b,
        patches: [...b.patches],
      })),
      explicit_caption_id: f.explicit_caption_id,
    })),
  };
}

/** Ground-truth rank per turn, for the debug trajectory. */
export function rankTrajectory(view: SessionView): (number | null)[] {
  return view.turns.map((t) => t.truth_rank);
}

/** Saliency payloads keyed by turn number; only live turns have one. */
export type SaliencyByTurn = Map<number, SaliencyPayload>;

export function patchHeat(
  saliency: SaliencyByTurn,
  turn: number,
  itemId: string,
): number[] | null {
  const payload = saliency.get(turn);
  if (!payload) {
    return null;
  }
  const entry = payload.items.find((i) => i.item_id === itemId);
  return entry ? entry.patches : null;
}
