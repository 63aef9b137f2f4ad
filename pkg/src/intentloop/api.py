"""HTTP facade over the refinement engine for the web UI and scripts.

All error responses carry a JSON body of the form {"error": <kind>,
"detail": <message>}; engine exceptions map onto status codes (validation
400, unknown reference 404, wrong state 409, unknown intent 422) and no
stack trace ever reaches a client. Sessions are persisted one JSON file
each, so a restarted service serves identical session views.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import Body, FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .errors import (
    IntentLoopError,
    StateError,
    TransportError,
    UnknownIntentError,
    UnknownReferenceError,
    ValidationError,
)
from .nlu import ComplexRequest
from .ontology import AspectValue, SemanticFrame
from .session import Engine, Session, session_log_path, write_interaction_log

logger = logging.getLogger(__name__)

_STATUS_BY_ERROR = (
    (UnknownIntentError, 422, "unknown_intent"),
    (StateError, 409, "wrong_state"),
    (UnknownReferenceError, 404, "not_found"),
    (TransportError, 502, "provider_failure"),
    (ValidationError, 400, "validation"),
)


@dataclass
class AppSettings:
    """Service knobs, environment-overridable."""

    port: int = 8000
    store_dir: str = "sessions"
    cors_origins: tuple[str, ...] = ()
    search_key: str | None = None
    lm_endpoint: str | None = None

    @classmethod
    def from_env(cls, env=os.environ) -> "AppSettings":
        origins = tuple(
            o.strip() for o in env.get("INTENTLOOP_CORS", "").split(",") if o.strip()
        )
        return cls(
            port=int(env.get("INTENTLOOP_PORT", "8000")),
            store_dir=env.get("INTENTLOOP_STORE", "sessions"),
            cors_origins=origins,
            search_key=env.get("INTENTLOOP_SEARCH_KEY"),
            lm_endpoint=env.get("INTENTLOOP_LM_ENDPOINT"),
        )


class SessionStore:
    """One JSON file per session under a directory."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        safe = "".join(c for c in session_id if c.isalnum() or c in "-_")
        if not safe:
            raise ValidationError("invalid session id")
        return self.directory / f"{safe}.json"

    def save(self, session: Session) -> None:
        payload = serialize_session(session)
        path = self._path(session.id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def load(self, session_id: str, engine: Engine) -> Session | None:
        path = self._path(session_id)
        if not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        return deserialize_session(payload, engine)

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))


def serialize_session(session: Session) -> dict:
    frame = session.frame
    slots = []
    for slot, aspect in frame.mentioned_slots:
        slots.append(
            {
                "slot_id": slot.id,
                "aspect": None
                if aspect is None
                else {"raw_span": aspect.raw_span, "normalized": aspect.normalized},
            }
        )
    return {
        "id": session.id,
        "request": {
            "text": session.request.text,
            "location": session.request.location,
            "received_at": session.request.received_at,
        },
        "frame": {
            "topic_id": frame.topic_id,
            "intent_id": frame.intent_id,
            "slots": slots,
            "ics": frame.ics,
            "location": frame.location,
            "provenance": frame.provenance,
            "new_candidates": list(frame.new_candidates),
        },
        "state": session.state,
        "threshold": session.threshold,
        "distribution": session.distribution,
        "step": session.step,
        "selected": list(session.selected),
        "rejected": list(session.rejected),
        "shown_all": list(session.shown_all),
        "last_shown": list(session.last_shown),
        "created_at": session.created_at,
        "updated_at": session.updated_at,
        "diagnostic": session.diagnostic,
        "records": [r.to_json_dict() for r in session.records],
    }


def deserialize_session(payload: dict, engine: Engine) -> Session:
    from .session import InteractionRecord

    f = payload["frame"]
    mentioned = []
    for item in f["slots"]:
        slot = engine.ontology.slot(f["topic_id"], f["intent_id"], item["slot_id"])
        aspect = None
        if item.get("aspect"):
            aspect = AspectValue(
                slot_id=slot.id,
                raw_span=item["aspect"]["raw_span"],
                normalized=item["aspect"].get("normalized"),
            )
        mentioned.append((slot, aspect))
    frame = SemanticFrame(
        topic_id=f["topic_id"],
        intent_id=f["intent_id"],
        mentioned_slots=mentioned,
        ics=f["ics"],
        location=f.get("location"),
        provenance=f.get("provenance", "provider"),
        new_candidates=list(f.get("new_candidates", [])),
    )
    request = ComplexRequest(
        text=payload["request"]["text"],
        location=payload["request"].get("location"),
        received_at=payload["request"].get("received_at"),
    )
    session = Session(
        id=payload["id"],
        request=request,
        frame=frame,
        state=payload["state"],
        threshold=payload["threshold"],
        distribution=dict(payload["distribution"]),
        step=payload["step"],
        selected=list(payload["selected"]),
        rejected=list(payload["rejected"]),
        shown_all=list(payload["shown_all"]),
        last_shown=list(payload["last_shown"]),
        created_at=payload["created_at"],
        updated_at=payload["updated_at"],
        diagnostic=payload.get("diagnostic"),
        records=[
            InteractionRecord(
                session_id=r["session_id"],
                step=r["step"],
                topic_id=r["topic_id"],
                intent_id=r["intent_id"],
                context_scheme=r["context_scheme"],
                input_slot_ids=tuple(r["input_slot_ids"]),
                shown_slot_ids=tuple(r["shown_slot_ids"]),
                selected_slot_ids=tuple(r["selected_slot_ids"]),
                rejected_slot_ids=tuple(r["rejected_slot_ids"]),
                ics_before=r["ics_before"],
                ics_after=r["ics_after"],
                timestamp=r["timestamp"],
            )
            for r in payload.get("records", [])
        ],
    )
    if session.state == "refining":
        session.context = engine._build_context(session)
    return session


def session_view(session: Session, engine: Engine) -> dict:
    """Wire form of a session; never includes model internals."""
    frame = session.frame
    slots = []
    for slot, aspect in frame.mentioned_slots:
        slots.append(
            {
                "slot_id": slot.id,
                "label": slot.label,
                "aspect": None if aspect is None else aspect.raw_span,
            }
        )
    suggestions = []
    for slot_id in session.last_shown:
        slot = engine.ontology.slot(frame.topic_id, frame.intent_id, slot_id)
        suggestions.append({"slot_id": slot.id, "label": slot.label})
    return {
        "id": session.id,
        "frame": {
            "topic_id": frame.topic_id,
            "intent_id": frame.intent_id,
            "slots": slots,
            "location": frame.location,
            "provenance": frame.provenance,
        },
        "ics": frame.ics,
        "threshold": session.threshold,
        "step": session.step,
        "max_steps": engine.config.max_steps,
        "state": session.state,
        "selected": list(session.selected),
        "rejected": list(session.rejected),
        "suggestions": suggestions,
    }


def create_app(
    engine: Engine,
    settings: AppSettings | None = None,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    settings = settings if settings is not None else AppSettings.from_env()
    app = FastAPI(title="intentloop", docs_url=None, redoc_url=None)
    store = SessionStore(settings.store_dir)
    locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    if settings.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(settings.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def lock_for(session_id: str) -> threading.Lock:
        with locks_guard:
            return locks.setdefault(session_id, threading.Lock())

    def find_session(session_id: str) -> Session:
        session = engine.sessions.get(session_id)
        if session is None:
            session = store.load(session_id, engine)
            if session is not None:
                engine.sessions[session_id] = session
        if session is None:
            raise UnknownReferenceError(f"no session {session_id}")
        return session

    def persist(session: Session) -> None:
        store.save(session)
        if session.records:
            log_path = session_log_path(store.directory / "logs", session)
            write_interaction_log(session.records, log_path)

    @app.exception_handler(IntentLoopError)
    def handle_domain_error(request: Request, exc: IntentLoopError):
        for cls, status, kind in _STATUS_BY_ERROR:
            if isinstance(exc, cls):
                return JSONResponse(
                    status_code=status, content={"error": kind, "detail": str(exc)}
                )
        return JSONResponse(
            status_code=400, content={"error": "validation", "detail": str(exc)}
        )

    @app.exception_handler(Exception)
    def handle_unexpected(request: Request, exc: Exception):
        logger.exception("unhandled error")
        return JSONResponse(
            status_code=500,
            content={"error": "internal", "detail": "internal server error"},
        )

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ValidationError("text must be a non-empty string")
        location = body.get("location")
        if location is not None and not isinstance(location, str):
            raise ValidationError("location must be a string")
        request = ComplexRequest(text=text, location=location)
        session = engine.start_session(request)
        persist(session)
        return session_view(session, engine)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_view(find_session(session_id), engine)

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, body: dict = Body(...)):
        selected = body.get("selected", [])
        rejected = body.get("rejected", [])
        for name, value in (("selected", selected), ("rejected", rejected)):
            if not isinstance(value, list) or any(not isinstance(s, str) for s in value):
                raise ValidationError(f"{name} must be a list of slot ids")
        session = find_session(session_id)
        with lock_for(session_id):
            engine.apply_feedback(session, selected, rejected)
            persist(session)
        return session_view(session, engine)

    @app.post("/sessions/{session_id}/retrieve")
    def post_retrieve(session_id: str):
        session = find_session(session_id)
        with lock_for(session_id):
            ranked = engine.retrieve(session)
            persist(session)
        return {
            "session_id": session_id,
            "state": session.state,
            "suggestions": [
                {
                    "title": r.document.title,
                    "url": r.document.url,
                    "snippet": r.document.snippet,
                    "score": r.score,
                    "matched_slots": list(r.matched_slot_ids),
                }
                for r in ranked
            ],
        }

    @app.get("/ontology")
    def get_ontology():
        topics = []
        for topic in engine.ontology.topics():
            intents = []
            for intent in engine.ontology.intents(topic.id):
                slots = [
                    {"id": s.id, "label": s.label, "curated": s.curated}
                    for s in engine.ontology.slots(topic.id, intent.id)
                ]
                intents.append({"id": intent.id, "label": intent.label, "slots": slots})
            topics.append({"id": topic.id, "label": topic.label, "intents": intents})
        return {"version": engine.ontology.version, "topics": topics}

    @app.get("/profile/{topic_id}/{intent_id}")
    def get_profile(topic_id: str, intent_id: str):
        distribution = engine.profile.distribution(topic_id, intent_id)
        threshold = engine.profile.stopping_threshold(topic_id, intent_id)
        return {
            "topic_id": topic_id,
            "intent_id": intent_id,
            "distribution": distribution,
            "threshold": threshold,
        }

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    app.state.engine = engine
    app.state.store = store
    app.state.settings = settings
    return app
