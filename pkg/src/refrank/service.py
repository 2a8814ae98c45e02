"""HTTP session API for interactive human-in-the-loop retrieval.

Each session wraps the interactive session drive: turn 1 ranks the raw
query, and every feedback round refines the previous embedding with
whatever marks arrived before ranking the result as the next turn.  The
flat session log plus ``replay_session`` reproduces every ranking
offline, because both run the same session-module steps.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .rocchio import RocchioParams
from .session import (STRATEGIES, SessionConfig, SessionState, TurnResult,
                      interactive_start, interactive_turn)
from .store import EmbeddingStore
from .summarizer import Summarizer, saliency_items
from .validation import resolve_seed

ROCCHIO_KEYS = ("alpha", "beta", "gamma", "tau", "k")
SESSION_KEYS = ("anchor", "explicit_mode", "k_display")
SUMMARIZER_STRATEGIES = ("afs", "afs_prf")


class CreateSessionRequest(BaseModel):
    query_id: str | None = None
    caption_id: str | None = None
    strategy: str = "none"
    params: dict = Field(default_factory=dict)


class ItemMark(BaseModel):
    item_id: str
    mark: Literal["relevant", "irrelevant"]


class RegionBox(BaseModel):
    item_id: str
    patches: list[int]
    polarity: Literal["relevant", "irrelevant"] = "relevant"


class FeedbackRequest(BaseModel):
    item_marks: list[ItemMark] = Field(default_factory=list)
    region_boxes: list[RegionBox] = Field(default_factory=list)
    explicit_caption_id: str | None = None


def build_session_config(strategy: str, params: dict) -> SessionConfig:
    """Validate a raw params payload into a SessionConfig."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; one of {STRATEGIES}")
    unknown = sorted(set(params) - set(ROCCHIO_KEYS) - set(SESSION_KEYS))
    if unknown:
        raise ValueError(f"unknown params {unknown}")
    weights = {key: float(params[key])
               for key in ("alpha", "beta", "gamma", "tau") if key in params}
    if "k" in params:
        weights["k"] = int(params["k"])
    extras = {key: params[key] for key in SESSION_KEYS if key in params}
    if "k_display" in extras:
        extras["k_display"] = int(extras["k_display"])
    return SessionConfig(strategy=strategy, params=RocchioParams(**weights),
                         **extras)


@dataclass
class ApiSession:
    """One live session: wrapped state plus bookkeeping for replay."""

    session_id: str
    strategy: str
    params: dict
    config: SessionConfig
    state: SessionState
    created: float
    updated: float
    feedback_log: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _turn_payload(result: TurnResult) -> dict:
    return {
        "turn": result.turn,
        "truth_rank": result.truth_rank,
        "results": [{"item_id": item_id, "score": float(score)}
                    for item_id, score in result.candidates.entries],
    }


def _session_payload(session: ApiSession, seed: int) -> dict:
    data = session.state.to_dict()
    data.update({
        "session_id": session.session_id,
        "strategy": session.strategy,
        "params": dict(session.params),
        "seed": seed,
        "created": session.created,
        "updated": session.updated,
        "feedback": list(session.feedback_log),
    })
    return data


def _region_entries(boxes) -> dict[str, list]:
    regions: dict[str, list] = {}
    for box in boxes:
        entries = regions.setdefault(box["item_id"], [])
        for patch in box["patches"]:
            if box.get("polarity", "relevant") == "relevant":
                entries.append(patch)
            else:
                entries.append((patch, False))
    return regions


class ServiceEngine:
    """Store, optional summarizer, and the live session registry."""

    def __init__(self, store: EmbeddingStore,
                 summarizer: Summarizer | None = None,
                 session_log: str | Path | None = None,
                 seed: int | None = None):
        self.store = store
        self.summarizer = summarizer
        self.session_log = Path(session_log) if session_log else None
        self.seed = resolve_seed(seed)
        self.sessions: dict[str, ApiSession] = {}
        self._registry_lock = threading.Lock()

    def register(self, session: ApiSession) -> None:
        with self._registry_lock:
            self.sessions[session.session_id] = session

    def get(self, session_id: str) -> ApiSession:
        with self._registry_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    def flush(self) -> None:
        """Persist every session's history as one flat JSON document."""
        if self.session_log is None:
            return
        ordered = sorted(self.sessions.values(), key=lambda s: s.created)
        payload = {"sessions": [_session_payload(s, self.seed)
                                for s in ordered]}
        self.session_log.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(payload, indent=2, sort_keys=True, default=float)
        self.session_log.write_text(text + "\n")


def replay_session(store: EmbeddingStore, payload: dict,
                   summarizer: Summarizer | None = None) -> list[list[str]]:
    """Re-run one flat session record offline; per-turn ranked item ids.

    A live session and its replay agree exactly: both drive the same
    interactive session steps with the same seed.
    """
    config = build_session_config(payload["strategy"], payload["params"])
    state, first = interactive_start(store, payload["query_id"], config,
                                     seed=payload["seed"])
    turns = [first]
    for fb in payload["feedback"]:
        relevant = [m["item_id"] for m in fb["item_marks"]
                    if m["mark"] == "relevant"]
        irrelevant = [m["item_id"] for m in fb["item_marks"]
                      if m["mark"] == "irrelevant"]
        turns.append(interactive_turn(
            state, config, store, summarizer,
            relevant=relevant, irrelevant=irrelevant,
            regions=_region_entries(fb["region_boxes"]),
            explicit_caption_id=fb.get("explicit_caption_id")))
    return [[item_id for item_id, _ in t.candidates.entries] for t in turns]


def create_app(store: EmbeddingStore, summarizer: Summarizer | None = None,
               session_log: str | Path | None = None,
               seed: int | None = None) -> FastAPI:
    """Build the FastAPI app around one store and optional summarizer."""
    engine = ServiceEngine(store, summarizer, session_log, seed)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        engine.flush()

    app = FastAPI(title="refrank feedback service", lifespan=lifespan)
    app.state.engine = engine
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        return JSONResponse(status_code=exc.status_code,
                            content={"code": exc.status_code,
                                     "message": str(exc.detail)})

    @app.exception_handler(RequestValidationError)
    async def body_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"code": 422, "message": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/captions")
    def list_captions():
        return {"captions": [
            {"caption_id": caption.caption_id, "text": caption.text,
             "item_id": item.item_id}
            for item in engine.store.items for caption in item.captions
        ], "patches_per_item": int(engine.store.image_tokens.shape[1])}

    @app.post("/sessions")
    def create_session(body: CreateSessionRequest):
        query = body.query_id or body.caption_id
        if query is None:
            raise HTTPException(400, "provide query_id or caption_id")
        if (body.strategy in SUMMARIZER_STRATEGIES
                and engine.summarizer is None):
            raise HTTPException(
                409, f"strategy {body.strategy!r} is unavailable: no "
                     "summarizer checkpoint is loaded")
        try:
            config = build_session_config(body.strategy, body.params)
        except (TypeError, ValueError) as exc:
            raise HTTPException(400, str(exc))
        try:
            state, first = interactive_start(engine.store, query, config,
                                             seed=engine.seed)
        except KeyError as exc:
            raise HTTPException(404, str(exc))
        now = time.time()
        session = ApiSession(
            session_id=uuid.uuid4().hex, strategy=body.strategy,
            params=dict(body.params), config=config, state=state,
            created=now, updated=now)
        engine.register(session)
        return {"session_id": session.session_id,
                "truth_item_id": state.truth_item_id,
                **_turn_payload(first)}

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, body: FeedbackRequest):
        session = engine.get(session_id)
        patches_per_item = engine.store.image_tokens.shape[1]
        with session.lock:
            shown = set(session.state.history[-1].candidates.item_ids)
            for mark in body.item_marks:
                if mark.item_id not in shown:
                    raise HTTPException(
                        422, f"item {mark.item_id!r} was not shown in the "
                             "previous turn")
            for box in body.region_boxes:
                if box.item_id not in shown:
                    raise HTTPException(
                        422, f"item {box.item_id!r} was not shown in the "
                             "previous turn")
                for patch in box.patches:
                    if not 0 <= patch < patches_per_item:
                        raise HTTPException(
                            422, f"patch index {patch} out of range for "
                                 f"{patches_per_item} patches")
            if body.explicit_caption_id is not None:
                if session.strategy != "explicit":
                    raise HTTPException(
                        422, "explicit_caption_id requires the explicit "
                             "strategy")
                try:
                    engine.store.caption_row(body.explicit_caption_id)
                except KeyError as exc:
                    raise HTTPException(422, str(exc))
            relevant = [m.item_id for m in body.item_marks
                        if m.mark == "relevant"]
            irrelevant = [m.item_id for m in body.item_marks
                          if m.mark == "irrelevant"]
            boxes = [{"item_id": b.item_id, "patches": list(b.patches),
                      "polarity": b.polarity} for b in body.region_boxes]
            feedback_ids = list(
                session.state.history[-1].candidates.item_ids
                [:session.config.params.k])
            try:
                result = interactive_turn(
                    session.state, session.config, engine.store,
                    engine.summarizer, relevant=relevant,
                    irrelevant=irrelevant, regions=_region_entries(boxes),
                    explicit_caption_id=body.explicit_caption_id)
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            session.feedback_log.append({
                "item_marks": [{"item_id": m.item_id, "mark": m.mark}
                               for m in body.item_marks],
                "region_boxes": boxes,
                "explicit_caption_id": body.explicit_caption_id,
            })
            session.updated = time.time()
            payload = {"session_id": session.session_id,
                       **_turn_payload(result)}
            if session.strategy in SUMMARIZER_STRATEGIES:
                include = session.strategy == "afs"
                output, seq = engine.summarizer.summarize(
                    engine.store, session.state.query_caption_row,
                    feedback_ids, include)
                payload["saliency"] = {
                    "mode": session.strategy,
                    "items": saliency_items(output, seq, include),
                }
        return payload

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = engine.get(session_id)
        with session.lock:
            return _session_payload(session, engine.seed)

    @app.get("/items/{item_id}")
    def get_item(item_id: str):
        if not engine.store.has_item(item_id):
            raise HTTPException(404, f"unknown item_id {item_id!r}")
        item = engine.store.item(item_id)
        return {
            "item_id": item.item_id,
            "image_ref": item.image_ref,
            "captions": [{"caption_id": c.caption_id, "text": c.text}
                         for c in item.captions],
            "synthetic_caption": item.synthetic_caption,
        }

    return app
