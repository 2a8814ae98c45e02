/**
 * Controller: owns the model, talks to the service, re-renders on every
 * change.  One session per browser tab: the live session id is kept in
 * sessionStorage, and booting with one present restores the whole view
 * from the service's stored history rather than local state.
 */

import { ApiError, ServiceClient } from "./api.js";
import type { Mark } from "./api.js";
import type { AppModel, Handlers } from "./render.js";
import { render } from "./render.js";
import {
  addBox,
  appendTurn,
  canSubmit,
  emptyDraft,
  feedbackToRequest,
  removeBox,
  toggleMark,
  viewFromCreate,
  viewFromHistory,
} from "./state.js";

export const SESSION_KEY = "refrank.session_id";
const DEFAULT_PATCHES = 9;

function initialModel(): AppModel {
  return {
    phase: "loading",
    captions: [],
    search: "",
    strategy: "prf_extended",
    debug: false,
    saliencyOn: false,
    boxPolarity: "relevant",
    patchesPerItem: DEFAULT_PATCHES,
    view: null,
    draft: emptyDraft(),
    saliency: new Map(),
    busy: false,
    error: null,
  };
}

export interface Controller {
  model: AppModel;
  boot(): Promise<void>;
  handlers: Handlers;
}

export function createController(
  root: HTMLElement,
  client: ServiceClient,
  storage: Storage = sessionStorage,
): Controller {
  const model = initialModel();

  const repaint = () => render(root, model, handlers);

  const fail = (error: unknown): void => {
    if (error instanceof ApiError && error.unreachable) {
      model.phase = "offline";
    } else {
      model.error = error instanceof Error ? error.message : String(error);
    }
    repaint();
  };

  const loadCaptions = async (): Promise<void> => {
    const index = await client.listCaptions();
    model.captions = index.captions;
    model.patchesPerItem = index.patches_per_item;
  };

  const restoreSession = async (sessionId: string): Promise<boolean> => {
    try {
      const history = await client.getSession(sessionId);
      model.view = viewFromHistory(history);
      model.strategy = history.strategy;
      model.phase = "session";
      return true;
    } catch (error) {
      if (error instanceof ApiError && !error.unreachable) {
        /* stale id (service restarted): fall back to the picker */
        storage.removeItem(SESSION_KEY);
        return false;
      }
      throw error;
    }
  };

  const boot = async (): Promise<void> => {
    model.phase = "loading";
    model.error = null;
    repaint();
    try {
      await loadCaptions();
      const stored = storage.getItem(SESSION_KEY);
      if (stored !== null && (await restoreSession(stored))) {
        repaint();
        return;
      }
      model.phase = "picker";
      repaint();
    } catch (error) {
      fail(error);
    }
  };

  const handlers: Handlers = {
    onRetry: () => {
      void boot();
    },

    onStrategyChange: (strategy) => {
      model.strategy = strategy;
      repaint();
    },

    onToggleDebug: (on) => {
      model.debug = on;
      repaint();
    },

    onToggleSaliency: (on) => {
      model.saliencyOn = on;
      repaint();
    },

    onSearch: (query) => {
      model.search = query;
      repaint();
    },

    onSelectCaption: (captionId) => {
      if (model.busy) {
        return;
      }
      model.busy = true;
      model.error = null;
      repaint();
      void client
        .createSession(captionId, model.strategy)
        .then((created) => {
          model.view = viewFromCreate(
            created.sessionId,
            captionId,
            created.truthItemId,
            model.strategy,
            created.turn,
          );
          model.draft = emptyDraft();
          model.saliency = new Map();
          model.phase = "session";
          storage.setItem(SESSION_KEY, created.sessionId);
        })
        .catch((error) => {
          if (error instanceof ApiError && !error.unreachable) {
            model.error = error.message;
          } else {
            model.phase = "offline";
          }
        })
        .finally(() => {
          model.busy = false;
          repaint();
        });
    },

    onToggleMark: (itemId, mark: Mark) => {
      model.draft = toggleMark(model.draft, itemId, mark);
      repaint();
    },

    onDrawBox: (itemId, patches) => {
      model.draft = addBox(model.draft, {
        itemId,
        patches,
        polarity: model.boxPolarity,
      });
      repaint();
    },

    onRemoveBox: (index) => {
      model.draft = removeBox(model.draft, index);
      repaint();
    },

    onPolarityChange: (polarity) => {
      model.boxPolarity = polarity;
      repaint();
    },

    onExplicitChoice: (captionId) => {
      model.draft = { ...model.draft, explicitCaptionId: captionId };
      repaint();
    },

    onRefine: () => {
      const view = model.view;
      if (!view || model.busy || !canSubmit(view.strategy, model.draft)) {
        return;
      }
      const body = feedbackToRequest(model.draft);
      model.busy = true;
      model.error = null;
      repaint();
      void client
        .sendFeedback(view.sessionId, body)
        .then((outcome) => {
          model.view = appendTurn(view, outcome.turn, body);
          model.draft = emptyDraft();
          if (outcome.saliency) {
            model.saliency = new Map(model.saliency);
            model.saliency.set(outcome.turn.turn, outcome.saliency);
          }
        })
        .catch((error) => {
          if (error instanceof ApiError && !error.unreachable) {
            model.error = error.message;
          } else {
            model.phase = "offline";
          }
        })
        .finally(() => {
          model.busy = false;
          repaint();
        });
    },

    onNewSession: () => {
      storage.removeItem(SESSION_KEY);
      model.view = null;
      model.draft = emptyDraft();
      model.saliency = new Map();
      model.error = null;
      model.phase = "picker";
      repaint();
    },
  };

  repaint();
  return { model, boot, handlers };
}

/** Service base URL: ?api=... wins, else same host on port 8123. */
export function resolveApiBase(location: Location): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  if (fromQuery) {
    return fromQuery.replace(/\/+$/, "");
  }
  const host = location.hostname || "localhost";
  return `${location.protocol === "https:" ? "https" : "http"}://${host}:8123`;
}
