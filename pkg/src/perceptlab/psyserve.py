"""HTTP session service for the same/different psychophysics study.

Trial order is a seeded uniform permutation; trials are served strictly
sequentially and every response is appended (with fsync) to a per-session
JSONL log before it is acknowledged, so a crashed service resumes each session
at its first unanswered trial. No endpoint reveals illusion/control labels to
an open session's client: set listings carry ids and sizes only and summaries
are served for completed sessions only.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

JUDGMENTS = ("same", "different")


class StudyError(ValueError):
    """Unknown set/session or an invalid study operation."""


class ConflictError(ValueError):
    """Out-of-order, duplicate, or otherwise conflicting request."""


@dataclass(frozen=True)
class StudySet:
    set_id: str
    entries: tuple   # of (image_filename, label) with label in {illusion, control}

    def __post_init__(self):
        if not self.entries:
            raise StudyError(f"study set {self.set_id!r} is empty")
        for name, label in self.entries:
            if label not in ("illusion", "control"):
                raise StudyError(f"set {self.set_id!r}: unknown label {label!r} for {name!r}")

    @property
    def labels(self) -> list:
        return [label for _, label in self.entries]


@dataclass(frozen=True)
class Response:
    trial_index: int
    judgment: str
    rt_ms: float
    timestamp: float


@dataclass
class SessionRecord:
    session_id: str
    observer_id: str
    set_id: str
    seed: int
    trial_order: tuple
    responses: list = field(default_factory=list)

    @property
    def n_trials(self) -> int:
        return len(self.trial_order)

    @property
    def remaining(self) -> int:
        return self.n_trials - len(self.responses)

    @property
    def status(self) -> str:
        return "complete" if self.remaining == 0 else "open"

    @property
    def next_trial(self) -> int | None:
        return None if self.remaining == 0 else len(self.responses)


def seeded_trial_order(n: int, seed: int) -> tuple:
    """Uniform permutation of range(n) from the seed (Fisher-Yates)."""
    order = list(range(n))
    random.Random(seed).shuffle(order)
    return tuple(order)


class StudyStore:
    """Filesystem-backed study sets and append-only session logs."""

    def __init__(self, data_dir: str | os.PathLike):
        self.data_dir = os.fspath(data_dir)
        self.sets_dir = os.path.join(self.data_dir, "sets")
        self.sessions_dir = os.path.join(self.data_dir, "sessions")
        os.makedirs(self.sets_dir, exist_ok=True)
        os.makedirs(self.sessions_dir, exist_ok=True)
        self._sets: dict = {}
        self._sessions: dict = {}
        self._locks: dict = {}
        self._store_lock = threading.Lock()
        self._load_sets()
        self._recover_sessions()

    # -- sets ---------------------------------------------------------------

    def _load_sets(self):
        for set_id in sorted(os.listdir(self.sets_dir)):
            meta = os.path.join(self.sets_dir, set_id, "set.json")
            if os.path.exists(meta):
                with open(meta, encoding="utf-8") as fh:
                    payload = json.load(fh)
                entries = tuple((e["image"], e["label"]) for e in payload["stimuli"])
                self._sets[payload["id"]] = StudySet(payload["id"], entries)

    def install_set(self, set_id: str, entries) -> StudySet:
        """Register a set whose images already live in sets/<set_id>/."""
        sset = StudySet(set_id, tuple(entries))
        set_dir = os.path.join(self.sets_dir, set_id)
        os.makedirs(set_dir, exist_ok=True)
        for name, _ in sset.entries:
            if not os.path.exists(os.path.join(set_dir, name)):
                raise StudyError(f"set {set_id!r}: image {name!r} missing from {set_dir}")
        with open(os.path.join(set_dir, "set.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {"id": set_id, "stimuli": [{"image": n, "label": l} for n, l in sset.entries]},
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")
        self._sets[set_id] = sset
        return sset

    def get_set(self, set_id: str) -> StudySet:
        if set_id not in self._sets:
            raise StudyError(f"unknown study set {set_id!r}")
        return self._sets[set_id]

    def list_sets(self) -> list:
        return [{"id": s.set_id, "size": len(s.entries)} for s in self._sets.values()]

    def image_path(self, set_id: str, filename: str) -> str:
        self.get_set(set_id)
        base = os.path.realpath(os.path.join(self.sets_dir, set_id))
        path = os.path.realpath(os.path.join(base, filename))
        if not path.startswith(base + os.sep) or not os.path.exists(path):
            raise StudyError(f"no such stimulus image {filename!r} in set {set_id!r}")
        return path

    # -- sessions -----------------------------------------------------------

    def _session_path(self, session_id: str) -> str:
        return os.path.join(self.sessions_dir, f"{session_id}.jsonl")

    def _append(self, session_id: str, record: dict):
        with open(self._session_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _recover_sessions(self):
        for fname in sorted(os.listdir(self.sessions_dir)):
            if not fname.endswith(".jsonl"):
                continue
            with open(os.path.join(self.sessions_dir, fname), encoding="utf-8") as fh:
                lines = [json.loads(line) for line in fh if line.strip()]
            if not lines or lines[0].get("type") != "session":
                continue
            head = lines[0]
            rec = SessionRecord(
                session_id=head["session_id"],
                observer_id=head["observer_id"],
                set_id=head["set_id"],
                seed=head["seed"],
                trial_order=tuple(head["trial_order"]),
            )
            for line in lines[1:]:
                if line.get("type") == "response":
                    rec.responses.append(
                        Response(line["trial_index"], line["judgment"], line["rt_ms"], line["timestamp"])
                    )
            self._sessions[rec.session_id] = rec

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._store_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def create_session(self, set_id: str, observer_id: str, seed: int) -> SessionRecord:
        sset = self.get_set(set_id)
        if not observer_id:
            raise StudyError("observer id must be nonempty")
        with self._store_lock:
            for rec in self._sessions.values():
                if rec.observer_id == observer_id and rec.set_id == set_id and rec.status == "open":
                    raise ConflictError(
                        f"observer {observer_id!r} already has open session {rec.session_id} on {set_id!r}"
                    )
            rec = SessionRecord(
                session_id=uuid.uuid4().hex,
                observer_id=observer_id,
                set_id=set_id,
                seed=int(seed),
                trial_order=seeded_trial_order(len(sset.entries), int(seed)),
            )
            self._append(
                rec.session_id,
                {
                    "type": "session",
                    "session_id": rec.session_id,
                    "observer_id": rec.observer_id,
                    "set_id": rec.set_id,
                    "seed": rec.seed,
                    "trial_order": list(rec.trial_order),
                },
            )
            self._sessions[rec.session_id] = rec
            return rec

    def get_session(self, session_id: str) -> SessionRecord:
        if session_id not in self._sessions:
            raise StudyError(f"unknown session {session_id!r}")
        return self._sessions[session_id]

    def record_response(self, session_id: str, trial_index: int, judgment: str, rt_ms: float) -> dict:
        rec = self.get_session(session_id)
        if judgment not in JUDGMENTS:
            raise StudyError(f"invalid judgment {judgment!r}; expected one of {JUDGMENTS}")
        with self._lock_for(session_id):
            if rec.status == "complete":
                raise ConflictError(f"session {session_id} is already complete")
            expected = rec.next_trial
            if trial_index != expected:
                raise ConflictError(
                    f"trial {trial_index} is not next (expected {expected}); "
                    "responses are strictly sequential and answered trials cannot be revisited"
                )
            response = Response(int(trial_index), judgment, float(rt_ms), time.time())
            self._append(
                session_id,
                {
                    "type": "response",
                    "trial_index": response.trial_index,
                    "judgment": response.judgment,
                    "rt_ms": response.rt_ms,
                    "timestamp": response.timestamp,
                },
            )
            rec.responses.append(response)
            return {"ok": True, "remaining": rec.remaining, "status": rec.status}

    def next_trial_view(self, session_id: str) -> dict:
        rec = self.get_session(session_id)
        if rec.next_trial is None:
            raise ConflictError(f"session {session_id} is complete")
        sset = self.get_set(rec.set_id)
        stim_idx = rec.trial_order[rec.next_trial]
        image, _ = sset.entries[stim_idx]
        return {
            "trial_index": rec.next_trial,
            "image_url": f"/static/stimuli/{rec.set_id}/{image}",
            "remaining": rec.remaining,
            "n_trials": rec.n_trials,
        }

    def session_summary(self, session_id: str) -> dict:
        rec = self.get_session(session_id)
        labels = self.get_set(rec.set_id).labels
        counts = {"illusion": [0, 0], "control": [0, 0]}  # [different, answered]
        for resp in rec.responses:
            label = labels[rec.trial_order[resp.trial_index]]
            counts[label][1] += 1
            counts[label][0] += resp.judgment == "different"
        def rate(c):
            return None if c[1] == 0 else 100.0 * c[0] / c[1]
        return {
            "session_id": rec.session_id,
            "observer_id": rec.observer_id,
            "set_id": rec.set_id,
            "status": rec.status,
            "n_trials": rec.n_trials,
            "n_answered": len(rec.responses),
            "illusion_different_rate": rate(counts["illusion"]),
            "control_different_rate": rate(counts["control"]),
            "n_illusion_answered": counts["illusion"][1],
            "n_control_answered": counts["control"][1],
        }

    def sessions_for_set(self, set_id: str) -> list:
        return [rec for rec in self._sessions.values() if rec.set_id == set_id]


# ---------------------------------------------------------------------------
# HTTP layer

def create_app(store: StudyStore, ui_dir: str | os.PathLike | None = None):
    """FastAPI app over a StudyStore; optionally serves the observer UI at /."""
    app = FastAPI(title="perceptlab psychophysics service")

    def error(status: int, exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(StudyError)
    async def _study_error(request: Request, exc: StudyError):
        status = 404 if "unknown" in str(exc) else 422
        return error(status, exc)

    @app.exception_handler(ConflictError)
    async def _conflict(request: Request, exc: ConflictError):
        return error(409, exc)

    @app.get("/sets")
    def list_sets():
        return store.list_sets()

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.json()
        for key in ("set", "observer"):
            if key not in body:
                raise StudyError(f"missing field {key!r} in session request")
        rec = store.create_session(body["set"], body["observer"], int(body.get("seed", 0)))
        return {
            "session_id": rec.session_id,
            "set": rec.set_id,
            "observer": rec.observer_id,
            "n_trials": rec.n_trials,
            "remaining": rec.remaining,
        }

    @app.get("/sessions/{session_id}/next")
    def next_trial(session_id: str):
        return store.next_trial_view(session_id)

    @app.post("/sessions/{session_id}/responses")
    async def submit_response(session_id: str, request: Request):
        body = await request.json()
        for key in ("trial_index", "judgment"):
            if key not in body:
                raise StudyError(f"missing field {key!r} in response")
        return store.record_response(
            session_id, int(body["trial_index"]), body["judgment"], float(body.get("rt_ms", 0.0))
        )

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str):
        rec = store.get_session(session_id)
        if rec.status != "complete":
            raise ConflictError("summary is available only for completed sessions")
        return store.session_summary(session_id)

    @app.get("/static/stimuli/{set_id}/{filename}")
    def stimulus_image(set_id: str, filename: str):
        return FileResponse(store.image_path(set_id, filename), media_type="image/png")

    if ui_dir is not None:
        ui_dir = os.fspath(ui_dir)

        @app.get("/")
        def index():
            return FileResponse(os.path.join(ui_dir, "index.html"), media_type="text/html")

        @app.get("/ui/{path:path}")
        def ui_asset(path: str):
            base = os.path.realpath(ui_dir)
            full = os.path.realpath(os.path.join(base, path))
            if not full.startswith(base + os.sep) or not os.path.isfile(full):
                raise StudyError(f"unknown asset {path!r}")
            media = "text/javascript" if full.endswith(".js") else "text/plain"
            if full.endswith(".html"):
                media = "text/html"
            elif full.endswith(".css"):
                media = "text/css"
            return FileResponse(full, media_type=media)

    return app
