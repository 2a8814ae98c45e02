/**
 * DOM layer: renders one AppModel snapshot into the root element.
 *
 * Rendering is wholesale replacement; every user gesture flows through
 * a handler that updates the model and re-renders.  No DOM node holds
 * state the model does not.
 */

import type { CaptionRef, Mark, TurnView } from "./api.js";
import { tileVisual } from "./placeholder.js";
import { gridSide, snapBoxToPatches } from "./regions.js";
import type { FeedbackDraft, SaliencyByTurn, SessionView } from "./state.js";
import { canSubmit, patchHeat } from "./state.js";

export type Phase = "loading" | "offline" | "picker" | "session";

export interface AppModel {
  phase: Phase;
  captions: CaptionRef[];
  search: string;
  strategy: string;
  debug: boolean;
  saliencyOn: boolean;
  boxPolarity: Mark;
  patchesPerItem: number;
  view: SessionView | null;
  draft: FeedbackDraft;
  saliency: SaliencyByTurn;
  busy: boolean;
  error: string | null;
}

export interface Handlers {
  onRetry(): void;
  onStrategyChange(strategy: string): void;
  onToggleDebug(on: boolean): void;
  onToggleSaliency(on: boolean): void;
  onSearch(query: string): void;
  onSelectCaption(captionId: string): void;
  onToggleMark(itemId: string, mark: Mark): void;
  onDrawBox(itemId: string, patches: number[]): void;
  onRemoveBox(index: number): void;
  onPolarityChange(polarity: Mark): void;
  onExplicitChoice(captionId: string | null): void;
  onRefine(): void;
  onNewSession(): void;
}

export const STRATEGY_CHOICES = [
  "none",
  "prf_extended",
  "original",
  "grf",
  "explicit",
  "afs",
  "afs_prf",
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function button(
  className: string,
  label: string,
  onClick: () => void,
  disabled = false,
): HTMLButtonElement {
  const b = el("button", className, label);
  b.type = "button";
  b.disabled = disabled;
  b.addEventListener("click", onClick);
  return b;
}

function renderTopbar(model: AppModel, handlers: Handlers): HTMLElement {
  const bar = el("header", "topbar");
  bar.appendChild(el("h1", "brand", "refrank"));

  const controls = el("div", "controls");
  const strategy = el("select", "strategy-select") as HTMLSelectElement;
  for (const name of STRATEGY_CHOICES) {
    const option = el("option", undefined, name) as HTMLOptionElement;
    option.value = name;
    strategy.appendChild(option);
  }
  strategy.value = model.strategy;
  strategy.disabled = model.phase === "session";
  strategy.addEventListener("change", () =>
    handlers.onStrategyChange(strategy.value),
  );
  const strategyLabel = el("label", "control", "strategy ");
  strategyLabel.appendChild(strategy);
  controls.appendChild(strategyLabel);

  const debug = el("input", "debug-toggle") as HTMLInputElement;
  debug.type = "checkbox";
  debug.checked = model.debug;
  debug.addEventListener("change", () => handlers.onToggleDebug(debug.checked));
  const debugLabel = el("label", "control", "debug ");
  debugLabel.appendChild(debug);
  controls.appendChild(debugLabel);

  const sal = el("input", "saliency-toggle") as HTMLInputElement;
  sal.type = "checkbox";
  sal.checked = model.saliencyOn;
  sal.addEventListener("change", () => handlers.onToggleSaliency(sal.checked));
  const salLabel = el("label", "control", "saliency ");
  salLabel.appendChild(sal);
  controls.appendChild(salLabel);

  if (model.phase === "session") {
    controls.appendChild(
      button("new-session", "new session", handlers.onNewSession),
    );
  }
  bar.appendChild(controls);
  return bar;
}

function renderBanner(handlers: Handlers): HTMLElement {
  const banner = el("div", "banner offline-banner");
  banner.appendChild(
    el("span", "banner-text", "service unreachable — is it running?"),
  );
  banner.appendChild(button("retry", "retry", handlers.onRetry));
  return banner;
}

function renderPicker(model: AppModel, handlers: Handlers): HTMLElement {
  const panel = el("section", "picker");
  panel.appendChild(el("h2", undefined, "pick a query caption"));

  const search = el("input", "caption-search") as HTMLInputElement;
  search.type = "search";
  search.placeholder = "filter captions";
  search.value = model.search;
  search.addEventListener("input", () => handlers.onSearch(search.value));
  panel.appendChild(search);

  const needle = model.search.trim().toLowerCase();
  const list = el("ul", "caption-list");
  for (const caption of model.captions) {
    if (needle && !caption.text.toLowerCase().includes(needle)) {
      continue;
    }
    const row = el("li", "caption-row");
    const pick = button("caption-pick", caption.text, () =>
      handlers.onSelectCaption(caption.caption_id),
    );
    pick.dataset.captionId = caption.caption_id;
    row.appendChild(pick);
    row.appendChild(el("span", "caption-id", caption.caption_id));
    list.appendChild(row);
  }
  panel.appendChild(list);
  return panel;
}

function attachBoxDrawing(
  overlay: HTMLElement,
  itemId: string,
  patches: number,
  handlers: Handlers,
): void {
  let start: { x: number; y: number } | null = null;
  let rubber: HTMLElement | null = null;

  const localPoint = (event: MouseEvent) => {
    const rect = overlay.getBoundingClientRect();
    return {
      x: event.clientX - rect.left,
      y: event.clientY - rect.top,
      w: rect.width,
      h: rect.height,
    };
  };

  overlay.addEventListener("mousedown", (event) => {
    const p = localPoint(event);
    start = { x: p.x, y: p.y };
    rubber = el("div", "rubber-band");
    overlay.appendChild(rubber);
    event.preventDefault();
  });

  overlay.addEventListener("mousemove", (event) => {
    if (!start || !rubber) {
      return;
    }
    const p = localPoint(event);
    const x = Math.min(start.x, p.x);
    const y = Math.min(start.y, p.y);
    rubber.style.left = `${x}px`;
    rubber.style.top = `${y}px`;
    rubber.style.width = `${Math.abs(p.x - start.x)}px`;
    rubber.style.height = `${Math.abs(p.y - start.y)}px`;
  });

  overlay.addEventListener("mouseup", (event) => {
    if (!start) {
      return;
    }
    const p = localPoint(event);
    if (p.w > 0 && p.h > 0) {
      const snapped = snapBoxToPatches(
        { x0: start.x, y0: start.y, x1: p.x, y1: p.y },
        p.w,
        p.h,
        patches,
      );
      handlers.onDrawBox(itemId, snapped);
    }
    start = null;
    rubber?.remove();
    rubber = null;
  });
}

function renderTile(
  model: AppModel,
  handlers: Handlers,
  turn: TurnView,
  itemId: string,
  score: number,
  interactive: boolean,
): HTMLElement {
  const view = model.view as SessionView;
  const tile = el("div", "tile");
  tile.dataset.itemId = itemId;
  if (model.debug && itemId === view.truthItemId) {
    tile.classList.add("truth-frame");
  }

  const media = el("div", "tile-media");
  const visual = tileVisual(itemId);
  if (visual.kind === "color") {
    media.style.background = visual.value;
  } else {
    const img = el("img", "tile-image") as HTMLImageElement;
    img.src = visual.value;
    img.alt = itemId;
    media.appendChild(img);
  }

  const side = gridSide(model.patchesPerItem);
  const overlay = el("div", "patch-overlay");
  overlay.style.gridTemplateColumns = `repeat(${side}, 1fr)`;
  const marked = new Map<number, Mark>();
  for (const box of model.draft.boxes) {
    if (box.itemId !== itemId || !interactive) {
      continue;
    }
    for (const patch of box.patches) {
      marked.set(patch, box.polarity);
    }
  }
  const heat = model.saliencyOn
    ? patchHeat(model.saliency, turn.turn, itemId)
    : null;
  for (let i = 0; i < model.patchesPerItem; i++) {
    const cell = el("div", "patch-cell");
    cell.dataset.patch = String(i);
    const polarity = marked.get(i);
    if (polarity) {
      cell.classList.add(
        polarity === "relevant" ? "patch-marked-rel" : "patch-marked-irr",
      );
    }
    if (heat && i < heat.length) {
      const shade = el("div", "heat-cell");
      shade.style.opacity = String(0.75 * heat[i]);
      shade.dataset.heat = heat[i].toFixed(4);
      cell.appendChild(shade);
    }
    overlay.appendChild(cell);
  }
  if (interactive) {
    overlay.classList.add("drawable");
    attachBoxDrawing(overlay, itemId, model.patchesPerItem, handlers);
  }
  media.appendChild(overlay);
  tile.appendChild(media);

  const meta = el("div", "tile-meta");
  meta.appendChild(el("span", "item-id", itemId));
  meta.appendChild(el("span", "score", score.toFixed(4)));
  tile.appendChild(meta);

  if (interactive) {
    const markRow = el("div", "mark-controls");
    const current = model.draft.marks.get(itemId);
    const rel = button("mark-btn mark-relevant", "relevant", () =>
      handlers.onToggleMark(itemId, "relevant"),
    );
    if (current === "relevant") {
      rel.classList.add("active");
    }
    const irr = button("mark-btn mark-irrelevant", "irrelevant", () =>
      handlers.onToggleMark(itemId, "irrelevant"),
    );
    if (current === "irrelevant") {
      irr.classList.add("active");
    }
    markRow.appendChild(rel);
    markRow.appendChild(irr);
    tile.appendChild(markRow);
  }
  return tile;
}

function renderTurnPanel(
  model: AppModel,
  handlers: Handlers,
  turn: TurnView,
  interactive: boolean,
): HTMLElement {
  const panel = el("section", "turn-panel");
  panel.dataset.turn = String(turn.turn);
  if (interactive) {
    panel.classList.add("latest");
  }
  const head = el("div", "turn-head");
  head.appendChild(el("h3", undefined, `turn ${turn.turn}`));
  if (model.debug && turn.truth_rank !== null) {
    head.appendChild(el("span", "truth-rank", `truth at #${turn.truth_rank}`));
  }
  panel.appendChild(head);

  const grid = el("div", "grid");
  for (const entry of turn.results) {
    grid.appendChild(
      renderTile(model, handlers, turn, entry.item_id, entry.score, interactive),
    );
  }
  panel.appendChild(grid);
  return panel;
}

function explicitChoices(model: AppModel): CaptionRef[] {
  const view = model.view as SessionView;
  const owner = model.captions.find(
    (c) => c.caption_id === view.queryId,
  )?.item_id;
  if (!owner) {
    return [];
  }
  return model.captions.filter(
    (c) => c.item_id === owner && c.caption_id !== view.queryId,
  );
}

function renderFeedbackBar(model: AppModel, handlers: Handlers): HTMLElement {
  const view = model.view as SessionView;
  const bar = el("div", "feedback-bar");

  const polarity = el("div", "polarity-toggle");
  polarity.appendChild(el("span", "polarity-label", "box polarity:"));
  for (const mark of ["relevant", "irrelevant"] as Mark[]) {
    const b = button(`polarity-btn polarity-${mark}`, mark, () =>
      handlers.onPolarityChange(mark),
    );
    if (model.boxPolarity === mark) {
      b.classList.add("active");
    }
    polarity.appendChild(b);
  }
  bar.appendChild(polarity);

  if (model.draft.boxes.length > 0) {
    const chips = el("div", "box-chips");
    model.draft.boxes.forEach((box, index) => {
      const chip = el(
        "span",
        `box-chip box-${box.polarity}`,
        `${box.itemId}: patches ${box.patches.join(",")}`,
      );
      chip.appendChild(button("chip-remove", "×", () =>
        handlers.onRemoveBox(index),
      ));
      chips.appendChild(chip);
    });
    bar.appendChild(chips);
  }

  if (view.strategy === "explicit") {
    const choices = explicitChoices(model);
    const select = el("select", "explicit-select") as HTMLSelectElement;
    const auto = el("option", undefined, "automatic") as HTMLOptionElement;
    auto.value = "";
    select.appendChild(auto);
    for (const caption of choices) {
      const option = el("option", undefined, caption.text) as HTMLOptionElement;
      option.value = caption.caption_id;
      select.appendChild(option);
    }
    select.value = model.draft.explicitCaptionId ?? "";
    select.addEventListener("change", () =>
      handlers.onExplicitChoice(select.value === "" ? null : select.value),
    );
    const label = el("label", "control explicit-control", "next caption ");
    label.appendChild(select);
    bar.appendChild(label);
  }

  const refine = button(
    "refine",
    model.busy ? "refining…" : "refine",
    handlers.onRefine,
    model.busy || !canSubmit(view.strategy, model.draft),
  );
  bar.appendChild(refine);

  if (model.error) {
    bar.appendChild(el("span", "feedback-error", model.error));
  }
  return bar;
}

function renderSession(model: AppModel, handlers: Handlers): HTMLElement {
  const view = model.view as SessionView;
  const section = el("section", "session");

  const meta = el("div", "session-meta");
  const queryText =
    model.captions.find((c) => c.caption_id === view.queryId)?.text ??
    view.queryId;
  meta.appendChild(el("span", "query-text", `query: ${queryText}`));
  meta.appendChild(el("span", "strategy-name", `strategy: ${view.strategy}`));
  meta.appendChild(el("span", "session-id", view.sessionId));
  section.appendChild(meta);

  const history = el("div", "history");
  view.turns.forEach((turn, index) => {
    const interactive = index === view.turns.length - 1;
    history.appendChild(renderTurnPanel(model, handlers, turn, interactive));
  });
  section.appendChild(history);

  section.appendChild(renderFeedbackBar(model, handlers));

  if (model.debug) {
    const ranks = view.turns
      .map((t) => (t.truth_rank === null ? "?" : `#${t.truth_rank}`))
      .join(" → ");
    section.appendChild(
      el("div", "trajectory", `ground-truth rank by turn: ${ranks}`),
    );
  }
  return section;
}

export function render(
  root: HTMLElement,
  model: AppModel,
  handlers: Handlers,
): void {
  root.textContent = "";
  root.appendChild(renderTopbar(model, handlers));
  if (model.phase === "offline") {
    root.appendChild(renderBanner(handlers));
    return;
  }
  if (model.phase === "loading") {
    root.appendChild(el("div", "loading", "loading…"));
    return;
  }
  if (model.phase === "picker") {
    if (model.error) {
      root.appendChild(el("div", "banner error-banner", model.error));
    }
    root.appendChild(renderPicker(model, handlers));
    return;
  }
  root.appendChild(renderSession(model, handlers));
}
