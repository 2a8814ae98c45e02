/**
 * Typed client for the retrieval session service.
 *
 * All reads and writes go through this module; the rest of the app never
 * touches fetch directly.  Live turn responses carry their ranking under
 * `results`, stored history turns under `candidates`; both normalize to
 * the same TurnView here so downstream code sees a single shape.
 */

export interface CaptionRef {
  caption_id: string;
  text: string;
  item_id: string;
}

export interface CaptionIndex {
  captions: CaptionRef[];
  patches_per_item: number;
}

export interface ResultEntry {
  item_id: string;
  score: number;
}

export interface TurnView {
  turn: number;
  truth_rank: number | null;
  results: ResultEntry[];
}

export interface SaliencyItem {
  item_id: string;
  score: number;
  image_score: number;
  caption_score?: number;
  patches: number[];
  tokens?: number[];
}

export interface SaliencyPayload {
  mode: string;
  items: SaliencyItem[];
}

export type Mark = "relevant" | "irrelevant";

export interface ItemMarkBody {
  item_id: string;
  mark: Mark;
}

export interface RegionBoxBody {
  item_id: string;
  patches: number[];
  polarity: Mark;
}

export interface FeedbackBody {
  item_marks: ItemMarkBody[];
  region_boxes: RegionBoxBody[];
  explicit_caption_id: string | null;
}

export interface SessionHistory {
  session_id: string;
  query_id: string;
  truth_item_id: string | null;
  strategy: string;
  params: Record<string, number>;
  seed: number;
  created: number;
  updated: number;
  feedback: FeedbackBody[];
  turns: TurnView[];
}

export interface ItemMetadata {
  item_id: string;
  image_ref: string;
  captions: { caption_id: string; text: string }[];
  synthetic_caption: string;
}

export interface CreatedSession {
  sessionId: string;
  truthItemId: string | null;
  turn: TurnView;
}

export interface FeedbackOutcome {
  turn: TurnView;
  saliency: SaliencyPayload | null;
}

/** Service-level failure; status 0 means the service was unreachable. */
export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }

  get unreachable(): boolean {
    return this.status === 0;
  }
}

type RawTurn = {
  turn: number;
  truth_rank: number | null;
  results?: ResultEntry[];
  candidates?: ResultEntry[];
};

export function normalizeTurn(raw: RawTurn): TurnView {
  const entries = raw.results ?? raw.candidates;
  if (!entries) {
    throw new ApiError(0, "turn payload has neither results nor candidates");
  }
  return {
    turn: raw.turn,
    truth_rank: raw.truth_rank,
    results: entries.map((e) => ({ item_id: e.item_id, score: e.score })),
  };
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch {
      throw new ApiError(0, "service unreachable");
    }
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null;
    }
    if (!response.ok) {
      const message =
        body && typeof body === "object" && "message" in body
          ? String((body as { message: unknown }).message)
          : `request failed with status ${response.status}`;
      throw new ApiError(response.status, message);
    }
    return body;
  }

  private post(path: string, payload: unknown): Promise<unknown> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async health(): Promise<boolean> {
    const body = (await this.request("/healthz")) as { status?: string };
    return body?.status === "ok";
  }

  async listCaptions(): Promise<CaptionIndex> {
    return (await this.request("/captions")) as CaptionIndex;
  }

  async createSession(
    queryId: string,
    strategy: string,
    params: Record<string, number> = {},
  ): Promise<CreatedSession> {
    const body = (await this.post("/sessions", {
      query_id: queryId,
      strategy,
      params,
    })) as RawTurn & { session_id: string; truth_item_id: string | null };
    return {
      sessionId: body.session_id,
      truthItemId: body.truth_item_id,
      turn: normalizeTurn(body),
    };
  }

  async sendFeedback(
    sessionId: string,
    feedback: FeedbackBody,
  ): Promise<FeedbackOutcome> {
    const body = (await this.post(
      `/sessions/${sessionId}/feedback`,
      feedback,
    )) as RawTurn & { saliency?: SaliencyPayload };
    return { turn: normalizeTurn(body), saliency: body.saliency ?? null };
  }

  async getSession(sessionId: string): Promise<SessionHistory> {
    const body = (await this.request(`/sessions/${sessionId}`)) as Omit<
      SessionHistory,
      "turns"
    > & { turns: RawTurn[] };
    return { ...body, turns: body.turns.map(normalizeTurn) };
  }

  async getItem(itemId: string): Promise<ItemMetadata> {
    return (await this.request(`/items/${itemId}`)) as ItemMetadata;
  }
}
