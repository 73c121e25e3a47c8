import itertools
import json
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from perceptlab.imagecore import ImageGrid, save_image
from perceptlab.psyserve import (
    ConflictError,
    StudyError,
    StudySet,
    StudyStore,
    create_app,
    seeded_trial_order,
)


@pytest.fixture
def store(tmp_path):
    st = StudyStore(tmp_path)
    set_dir = os.path.join(st.sets_dir, "demo")
    os.makedirs(set_dir)
    entries = []
    for i in range(8):
        name = f"s{i}.png"
        save_image(ImageGrid(np.full((8, 8, 1), i / 8), "display01"), os.path.join(set_dir, name))
        entries.append((name, "illusion" if i < 4 else "control"))
    st.install_set("demo", entries)
    return st


# --- trial order ------------------------------------------------------------------

def test_order_is_a_complete_permutation():
    order = seeded_trial_order(80, 123)
    assert sorted(order) == list(range(80))


def test_same_seed_same_order():
    assert seeded_trial_order(80, 9) == seeded_trial_order(80, 9)
    assert seeded_trial_order(80, 9) != seeded_trial_order(80, 10)


def test_permutation_uniformity_chi_square_style():
    counts = {p: 0 for p in itertools.permutations(range(4))}
    n = 10000
    for seed in range(n):
        counts[seeded_trial_order(4, seed)] += 1
    expected = n / 24
    sigma = np.sqrt(n * (1 / 24) * (23 / 24))
    for perm, c in counts.items():
        assert abs(c - expected) < 4 * sigma, f"order {perm} count {c}"


# --- sessions ----------------------------------------------------------------------

def test_create_session_persists_before_acceptance(store):
    rec = store.create_session("demo", "obs1", 5)
    assert sorted(rec.trial_order) == list(range(8))
    path = os.path.join(store.sessions_dir, f"{rec.session_id}.jsonl")
    head = json.loads(open(path).readline())
    assert head["type"] == "session" and head["trial_order"] == list(rec.trial_order)


def test_unknown_set_and_duplicate_open_session(store):
    with pytest.raises(StudyError):
        store.create_session("nope", "obs1", 0)
    store.create_session("demo", "obs1", 0)
    with pytest.raises(ConflictError):
        store.create_session("demo", "obs1", 1)
    # a different observer is fine, and same seed gives the identical order
    a = store.get_session(store.create_session("demo", "obs2", 0).session_id)
    b = store.get_session(store.create_session("demo", "obs3", 0).session_id)
    assert a.trial_order == b.trial_order


def test_responses_strictly_sequential(store):
    rec = store.create_session("demo", "obs1", 7)
    ack = store.record_response(rec.session_id, 0, "different", 350.0)
    assert ack == {"ok": True, "remaining": 7, "status": "open"}
    with pytest.raises(ConflictError):
        store.record_response(rec.session_id, 0, "same", 10.0)  # duplicate
    with pytest.raises(ConflictError):
        store.record_response(rec.session_id, 2, "same", 10.0)  # out of order
    with pytest.raises(StudyError):
        store.record_response(rec.session_id, 1, "probably", 10.0)
    with pytest.raises(StudyError):
        store.record_response("ghost", 0, "same", 10.0)


def test_duplicate_leaves_log_unchanged(store):
    rec = store.create_session("demo", "obs1", 7)
    store.record_response(rec.session_id, 0, "different", 350.0)
    path = os.path.join(store.sessions_dir, f"{rec.session_id}.jsonl")
    before = open(path).read()
    with pytest.raises(ConflictError):
        store.record_response(rec.session_id, 0, "same", 10.0)
    assert open(path).read() == before


def test_append_only_log_and_exactly_once(store):
    rec = store.create_session("demo", "obs1", 3)
    path = os.path.join(store.sessions_dir, f"{rec.session_id}.jsonl")
    prefix = open(path).read()
    for i in range(8):
        store.record_response(rec.session_id, i, "same", 1.0)
        content = open(path).read()
        assert content.startswith(prefix)  # never rewrites prior lines
        prefix = content
    lines = [json.loads(l) for l in open(path)]
    trial_indices = [l["trial_index"] for l in lines if l["type"] == "response"]
    assert sorted(trial_indices) == list(range(8))
    assert store.get_session(rec.session_id).status == "complete"


def test_restart_resumes_at_first_unanswered(store, tmp_path):
    rec = store.create_session("demo", "obs1", 11)
    for i in range(3):
        store.record_response(rec.session_id, i, "different", 5.0)
    revived = StudyStore(tmp_path)
    got = revived.get_session(rec.session_id)
    assert got.status == "open"
    assert got.next_trial == 3
    assert got.trial_order == rec.trial_order
    # the revived store continues the session seamlessly
    for i in range(3, 8):
        revived.record_response(rec.session_id, i, "same", 5.0)
    assert revived.get_session(rec.session_id).status == "complete"


def test_session_summary_rates(store):
    rec = store.create_session("demo", "obs1", 2)
    empty = store.session_summary(rec.session_id)
    assert empty["illusion_different_rate"] is None
    assert empty["n_illusion_answered"] == 0
    labels = store.get_set("demo").labels
    for i in range(8):
        stim = rec.trial_order[i]
        store.record_response(rec.session_id, i, "different", 1.0)
    full = store.session_summary(rec.session_id)
    assert full["illusion_different_rate"] == 100.0
    assert full["control_different_rate"] == 100.0


def test_summary_arithmetic_30_of_40():
    order = tuple(range(40))
    sset = StudySet("s", tuple((f"i{n}.png", "illusion") for n in range(40)))
    from perceptlab.psyserve import SessionRecord, Response

    rec = SessionRecord("sid", "o", "s", 0, order)
    for i in range(40):
        rec.responses.append(Response(i, "different" if i < 30 else "same", 1.0, 0.0))
    counts = sum(r.judgment == "different" for r in rec.responses)
    assert 100.0 * counts / 40 == 75.0


# --- HTTP layer ---------------------------------------------------------------------

def test_http_full_session_flow(store):
    client = TestClient(create_app(store))
    sets = client.get("/sets").json()
    assert sets == [{"id": "demo", "size": 8}]
    created = client.post("/sessions", json={"set": "demo", "observer": "web1", "seed": 4})
    assert created.status_code == 201
    sid = created.json()["session_id"]

    assert client.get(f"/sessions/{sid}/summary").status_code == 409  # open: no labels leak

    seen_urls = []
    for i in range(8):
        view = client.get(f"/sessions/{sid}/next").json()
        assert view["trial_index"] == i
        seen_urls.append(view["image_url"])
        img = client.get(view["image_url"])
        assert img.status_code == 200
        ack = client.post(
            f"/sessions/{sid}/responses",
            json={"trial_index": i, "judgment": "same", "rt_ms": 123.0},
        ).json()
        assert ack["remaining"] == 7 - i
    assert client.get(f"/sessions/{sid}/next").status_code == 409
    summary = client.get(f"/sessions/{sid}/summary").json()
    assert summary["status"] == "complete"
    assert summary["illusion_different_rate"] == 0.0
    # no label strings anywhere in the trial-facing responses
    assert all("illusion" not in u and "control" not in u for u in seen_urls)


def test_http_error_shapes(store):
    client = TestClient(create_app(store))
    r = client.get("/sessions/ghost/next")
    assert r.status_code == 404
    assert set(r.json()) == {"error", "detail"}
    r = client.post("/sessions", json={"set": "demo"})
    assert r.status_code == 422
    r = client.post("/sessions", json={"set": "ghost", "observer": "x"})
    assert r.status_code == 404


def test_http_image_traversal_blocked(store):
    client = TestClient(create_app(store))
    r = client.get("/static/stimuli/demo/../../sessions/x.jsonl")
    assert r.status_code in (404, 422)


def test_concurrent_duplicate_submit_stores_exactly_one(store):
    import threading

    rec = store.create_session("demo", "obs-race", 1)
    results = []

    def submit():
        try:
            store.record_response(rec.session_id, 0, "different", 1.0)
            results.append("ok")
        except ConflictError:
            results.append("conflict")

    threads = [threading.Thread(target=submit) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count("ok") == 1
    assert len(store.get_session(rec.session_id).responses) == 1
