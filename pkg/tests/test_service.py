"""HTTP service behavior: endpoints, errors, replay, and concurrency."""

import json
import signal
import socket
import subprocess
import sys
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from refrank.ranking import rank
from refrank.service import create_app, replay_session
from refrank.session import SessionConfig, run_multi_turn, start_session
from refrank.store import write_store
from refrank.summarizer import Summarizer, TrainConfig
from refrank.summarizer.sequence import AFSConfig
from refrank.synth import SynthConfig, generate

SEED = 11


@pytest.fixture(scope="module")
def store():
    return generate(SynthConfig(n_items=12, captions_per_item=3, seed=7))


@pytest.fixture(scope="module")
def summarizer(store):
    return Summarizer.fit(store, AFSConfig.from_store(store, seed=5),
                          TrainConfig(epochs=4, seed=5))


@pytest.fixture(scope="module")
def client(store, summarizer):
    app = create_app(store, summarizer=summarizer, seed=SEED)
    with TestClient(app) as live:
        yield live


@pytest.fixture(scope="module")
def bare_client(store):
    app = create_app(store, seed=SEED)
    with TestClient(app) as live:
        yield live


def create_session(client, caption_id, strategy="none", params=None):
    response = client.post("/sessions", json={
        "query_id": caption_id, "strategy": strategy,
        "params": params or {},
    })
    assert response.status_code == 200, response.text
    return response.json()


class TestSessionCreation:
    def test_health(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}

    def test_caption_listing_matches_store(self, client, store):
        body = client.get("/captions").json()
        expected = [
            {"caption_id": c.caption_id, "text": c.text,
             "item_id": item.item_id}
            for item in store.items for c in item.captions]
        assert body["captions"] == expected
        assert len(body["captions"]) == 36
        assert body["patches_per_item"] == store.image_tokens.shape[1]

    def test_error_bodies_carry_code_and_message(self, client):
        response = client.post("/sessions", json={"query_id": "nope"})
        body = response.json()
        assert body["code"] == 404
        assert "nope" in body["message"]

    def test_browser_clients_allowed_cross_origin(self, client):
        response = client.get("/captions",
                              headers={"Origin": "http://localhost:9999"})
        assert response.headers["access-control-allow-origin"] == "*"

    def test_first_turn_ranks_raw_query(self, client, store):
        created = create_session(client, "item00003_c0")
        row = store.caption_row("item00003_c0")
        query = np.asarray(store.caption_embeddings[row], dtype=np.float64)
        expected = rank(query, store, 10, "item00003_c0")
        assert created["turn"] == 1
        assert [r["item_id"] for r in created["results"]] == \
            list(expected.item_ids)
        assert created["truth_item_id"] == "item00003"

    def test_session_ids_are_distinct(self, client):
        ids = {create_session(client, "item00000_c0")["session_id"]
               for _ in range(5)}
        assert len(ids) == 5

    def test_caption_id_alias(self, client):
        response = client.post("/sessions", json={
            "caption_id": "item00001_c0", "strategy": "prf_extended"})
        assert response.status_code == 200
        assert response.json()["truth_item_id"] == "item00001"

    def test_missing_query_rejected(self, client):
        response = client.post("/sessions", json={"strategy": "none"})
        assert response.status_code == 400

    def test_unknown_query_rejected(self, client):
        response = client.post("/sessions", json={"query_id": "nope"})
        assert response.status_code == 404

    def test_unknown_strategy_rejected(self, client):
        response = client.post("/sessions", json={
            "query_id": "item00000_c0", "strategy": "bogus"})
        assert response.status_code == 400

    def test_unknown_param_rejected(self, client):
        response = client.post("/sessions", json={
            "query_id": "item00000_c0", "strategy": "prf_extended",
            "params": {"aleph": 1.0}})
        assert response.status_code == 400

    def test_invalid_param_value_rejected(self, client):
        response = client.post("/sessions", json={
            "query_id": "item00000_c0", "strategy": "prf_extended",
            "params": {"tau": 0.0}})
        assert response.status_code == 400

    def test_afs_without_checkpoint_conflicts(self, bare_client):
        response = bare_client.post("/sessions", json={
            "query_id": "item00000_c0", "strategy": "afs"})
        assert response.status_code == 409
        assert "no summarizer checkpoint" in response.json()["message"]
        for strategy in ("none", "prf_extended", "grf", "explicit"):
            assert create_session(bare_client, "item00000_c0",
                                  strategy)["turn"] == 1


class TestFeedback:
    def test_empty_round_runs_automatic_refinement(self, client, store):
        created = create_session(client, "item00004_c1", "prf_extended")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback", json={})
        assert response.status_code == 200, response.text
        second = response.json()
        assert second["turn"] == 2
        state = start_session(store, "item00004_c1", seed=SEED)
        offline = run_multi_turn(state, SessionConfig(strategy="prf_extended"),
                                 store, 2)
        assert [r["item_id"] for r in second["results"]] == \
            list(offline[1].candidates.item_ids)
        assert second["truth_rank"] == offline[1].truth_rank

    def test_marking_truth_weakly_improves_rank(self, client, store):
        before, after = [], []
        for i in range(10):
            caption = f"item{i:05d}_c0"
            created = create_session(client, caption, "explicit")
            truth = created["truth_item_id"]
            shown = [r["item_id"] for r in created["results"]]
            if truth not in shown:
                continue
            response = client.post(
                f"/sessions/{created['session_id']}/feedback",
                json={"item_marks": [{"item_id": truth,
                                      "mark": "relevant"}]})
            assert response.status_code == 200, response.text
            before.append(created["truth_rank"])
            after.append(response.json()["truth_rank"])
        assert len(before) >= 5
        assert np.mean(after) <= np.mean(before)
        assert min(b - a for a, b in zip(after, before)) >= -1

    def test_unshown_item_mark_rejected(self, client):
        created = create_session(client, "item00000_c0", "prf_extended")
        shown = {r["item_id"] for r in created["results"]}
        missing = next(f"item{i:05d}" for i in range(12)
                       if f"item{i:05d}" not in shown)
        response = client.post(
            f"/sessions/{created['session_id']}/feedback",
            json={"item_marks": [{"item_id": missing, "mark": "relevant"}]})
        assert response.status_code == 422
        assert "was not shown" in response.json()["message"]

    def test_out_of_range_patch_rejected(self, client):
        created = create_session(client, "item00000_c0", "afs")
        target = created["results"][0]["item_id"]
        response = client.post(
            f"/sessions/{created['session_id']}/feedback",
            json={"region_boxes": [{"item_id": target, "patches": [99]}]})
        assert response.status_code == 422
        assert "out of range" in response.json()["message"]

    def test_region_polarity_accepted(self, client):
        created = create_session(client, "item00005_c0", "afs")
        first, second = (r["item_id"] for r in created["results"][:2])
        response = client.post(
            f"/sessions/{created['session_id']}/feedback",
            json={"region_boxes": [
                {"item_id": first, "patches": [0, 1]},
                {"item_id": second, "patches": [4], "polarity": "irrelevant"},
            ]})
        assert response.status_code == 200, response.text
        assert response.json()["turn"] == 2

    def test_saliency_payload_for_summarizer_strategies(self, client, store):
        created = create_session(client, "item00002_c0", "afs")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback", json={})
        saliency = response.json()["saliency"]
        assert saliency["mode"] == "afs"
        assert [e["item_id"] for e in saliency["items"]] == \
            [r["item_id"] for r in created["results"][:5]]
        for entry in saliency["items"]:
            assert len(entry["patches"]) == store.image_tokens.shape[1]
            assert "tokens" in entry

    def test_image_only_saliency_mode(self, client):
        created = create_session(client, "item00002_c0", "afs_prf")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback", json={})
        saliency = response.json()["saliency"]
        assert saliency["mode"] == "afs_prf"
        assert all("tokens" not in e for e in saliency["items"])

    def test_no_saliency_for_plain_strategies(self, client):
        created = create_session(client, "item00002_c0", "prf_extended")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback", json={})
        assert "saliency" not in response.json()

    def test_explicit_caption_choice(self, client):
        created = create_session(client, "item00006_c0", "explicit")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback",
            json={"explicit_caption_id": "item00006_c2"})
        assert response.status_code == 200, response.text
        assert response.json()["turn"] == 2

    def test_explicit_caption_needs_explicit_strategy(self, client):
        created = create_session(client, "item00006_c0", "prf_extended")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback",
            json={"explicit_caption_id": "item00006_c2"})
        assert response.status_code == 422
        assert "explicit" in response.json()["message"]

    def test_unknown_explicit_caption_rejected(self, client):
        created = create_session(client, "item00006_c0", "explicit")
        response = client.post(
            f"/sessions/{created['session_id']}/feedback",
            json={"explicit_caption_id": "ghost"})
        assert response.status_code == 422

    def test_unknown_session_rejected(self, client):
        response = client.post("/sessions/deadbeef/feedback", json={})
        assert response.status_code == 404


class TestSessionReads:
    def test_history_tracks_every_turn(self, client):
        created = create_session(client, "item00007_c0", "prf_extended")
        sid = created["session_id"]
        client.post(f"/sessions/{sid}/feedback", json={})
        client.post(f"/sessions/{sid}/feedback", json={})
        payload = client.get(f"/sessions/{sid}").json()
        assert payload["session_id"] == sid
        assert payload["strategy"] == "prf_extended"
        assert payload["seed"] == SEED
        assert [t["turn"] for t in payload["turns"]] == [1, 2, 3]
        assert len(payload["feedback"]) == 2
        assert payload["updated"] >= payload["created"]

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/deadbeef").status_code == 404

    def test_item_metadata_verbatim(self, client, store):
        record = store.items[8]
        payload = client.get(f"/items/{record.item_id}").json()
        assert payload["item_id"] == record.item_id
        assert payload["image_ref"] == record.image_ref
        assert payload["synthetic_caption"] == record.synthetic_caption
        assert payload["captions"] == [
            {"caption_id": c.caption_id, "text": c.text}
            for c in record.captions]

    def test_unknown_item_404(self, client):
        assert client.get("/items/item99999").status_code == 404


class TestReplay:
    def test_marked_session_replays_identically(self, client, store):
        created = create_session(client, "item00009_c0", "prf_extended")
        sid = created["session_id"]
        shown = [r["item_id"] for r in created["results"]]
        client.post(f"/sessions/{sid}/feedback", json={
            "item_marks": [{"item_id": shown[0], "mark": "relevant"},
                           {"item_id": shown[-1], "mark": "irrelevant"}]})
        client.post(f"/sessions/{sid}/feedback", json={})
        payload = client.get(f"/sessions/{sid}").json()
        live = [[c["item_id"] for c in t["candidates"]]
                for t in payload["turns"]]
        assert replay_session(store, payload) == live

    def test_region_session_replays_identically(self, client, store,
                                                summarizer):
        created = create_session(client, "item00010_c1", "afs")
        sid = created["session_id"]
        target = created["results"][0]["item_id"]
        client.post(f"/sessions/{sid}/feedback", json={
            "region_boxes": [{"item_id": target, "patches": [2, 5]},
                             {"item_id": target, "patches": [8],
                              "polarity": "irrelevant"}]})
        payload = client.get(f"/sessions/{sid}").json()
        live = [[c["item_id"] for c in t["candidates"]]
                for t in payload["turns"]]
        assert replay_session(store, payload, summarizer) == live


class TestConcurrency:
    def test_parallel_sessions_stay_isolated(self, client, store):
        captions = [f"item{i % 12:05d}_c{i % 3}" for i in range(32)]
        sessions = [(create_session(client, cap, "prf_extended"), cap)
                    for cap in captions]

        def drive(entry):
            created, caption = entry
            sid = created["session_id"]
            shown = [r["item_id"] for r in created["results"]]
            first = client.post(f"/sessions/{sid}/feedback", json={
                "item_marks": [{"item_id": shown[0], "mark": "relevant"}]})
            second = client.post(f"/sessions/{sid}/feedback", json={})
            assert first.status_code == second.status_code == 200
            return sid, caption

        with ThreadPoolExecutor(max_workers=8) as pool:
            driven = list(pool.map(drive, sessions))
        for sid, caption in driven:
            payload = client.get(f"/sessions/{sid}").json()
            assert payload["query_id"] == caption
            assert len(payload["turns"]) == 3
            live = [[c["item_id"] for c in t["candidates"]]
                    for t in payload["turns"]]
            assert replay_session(store, payload) == live


class TestPersistence:
    def test_shutdown_flushes_session_log(self, store, tmp_path):
        log = tmp_path / "sessions.json"
        app = create_app(store, session_log=log, seed=SEED)
        with TestClient(app) as live:
            created = create_session(live, "item00000_c0", "prf_extended")
            live.post(f"/sessions/{created['session_id']}/feedback", json={})
            create_session(live, "item00001_c0")
        payload = json.loads(log.read_text())
        assert len(payload["sessions"]) == 2
        logged = payload["sessions"][0]
        assert logged["query_id"] == "item00000_c0"
        assert len(logged["feedback"]) == 1
        live_turns = [[c["item_id"] for c in t["candidates"]]
                      for t in logged["turns"]]
        assert replay_session(store, logged) == live_turns


class TestServeCommand:
    def test_serve_round_trip_and_flush(self, store, tmp_path):
        store_dir = tmp_path / "store"
        write_store(store, store_dir)
        log = tmp_path / "sessions.json"
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        process = subprocess.Popen(
            [sys.executable, "-c",
             "from refrank.cli import main; main()",
             "serve", "--store", str(store_dir), "--port", str(port),
             "--session-log", str(log), "--seed", str(SEED)],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        base = f"http://127.0.0.1:{port}"
        try:
            for _ in range(100):
                try:
                    with urllib.request.urlopen(f"{base}/healthz",
                                                timeout=1) as response:
                        if json.load(response)["status"] == "ok":
                            break
                except OSError:
                    time.sleep(0.2)
            else:
                pytest.fail("service never became healthy")
            request = urllib.request.Request(
                f"{base}/sessions",
                data=json.dumps({"query_id": "item00000_c0",
                                 "strategy": "prf_extended"}).encode(),
                headers={"Content-Type": "application/json"})
            with urllib.request.urlopen(request, timeout=5) as response:
                created = json.load(response)
            assert created["turn"] == 1
        finally:
            process.send_signal(signal.SIGTERM)
            assert process.wait(timeout=15) in (0, -signal.SIGTERM)
        payload = json.loads(log.read_text())
        assert [s["query_id"] for s in payload["sessions"]] == \
            ["item00000_c0"]
