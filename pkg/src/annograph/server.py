"""HTTP surface: sessions, a resumable event stream, and UI gestures.

Every session keeps one totally-ordered wire-event log; subscribers read
it over server-sent events and can reconnect at any sequence number with
``?from=<last-seen-seq>`` losing and duplicating nothing.  Gesture
endpoints return 202 immediately; their effects arrive on the stream as
events correlated by ``request_id`` (an error event on failure, so every
202 is eventually answered).

Sessions live in memory; optionally every event is appended to
``<persist_dir>/<session-id>.ndjson`` for offline replay and debugging.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .graph import InvalidOperation, NotFoundError
from .orchestrator import Session, SessionError
from .transport import Transport, TransportConfig, TransportError


class AskBody(BaseModel):
    question: str


class SessionRunner:
    """One session plus the thread that drives its main ask pump."""

    def __init__(self, session: Session, persist_path: Path | None):
        self.session = session
        self.persist_path = persist_path
        self._persisted = 0
        self._request_counter = 0
        self._active_jobs = 0
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None

    def start(self, question: str) -> None:
        self._thread = threading.Thread(
            target=self._drain, args=(self.session.ask(question),), daemon=True
        )
        self._thread.start()

    def next_request_id(self) -> str:
        with self._lock:
            self._request_counter += 1
            return f"r{self._request_counter}"

    def run_job(self, request_id: str, job) -> None:
        with self._lock:
            self._active_jobs += 1

        def runner():
            try:
                self._drain(job())
            except (NotFoundError, InvalidOperation, SessionError, TransportError,
                    FileNotFoundError, ValueError) as exc:
                self.session._emit(
                    "error", {"reason": str(exc)}, request_id
                )
            finally:
                with self._lock:
                    self._active_jobs -= 1
                self._persist()

        threading.Thread(target=runner, daemon=True).start()

    def _drain(self, iterator) -> None:
        for _ in iterator:
            pass
        self._persist()

    def idle(self) -> bool:
        with self._lock:
            busy = self._active_jobs
        return self.session.done and not busy and not self.session.pending_tasks

    def _persist(self) -> None:
        if self.persist_path is None:
            return
        with self.session.lock:
            events = self.session.log[self._persisted :]
            self._persisted = len(self.session.log)
        if not events:
            return
        with open(self.persist_path, "a", encoding="utf-8") as fh:
            for event in events:
                fh.write(json.dumps(event.to_json(), sort_keys=True) + "\n")


def create_app(
    transport_config: TransportConfig,
    persist_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="annograph", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    runners: dict[str, SessionRunner] = {}
    counter = {"n": 0}
    store_lock = threading.Lock()

    def get_runner(session_id: str) -> SessionRunner:
        runner = runners.get(session_id)
        if runner is None:
            raise HTTPException(404, f"no session {session_id}")
        return runner

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError):
        return JSONResponse({"detail": str(exc)}, status_code=404)

    @app.exception_handler(InvalidOperation)
    async def _invalid(request: Request, exc: InvalidOperation):
        return JSONResponse({"detail": str(exc)}, status_code=409)

    @app.exception_handler(SessionError)
    async def _session_error(request: Request, exc: SessionError):
        return JSONResponse({"detail": str(exc)}, status_code=409)

    @app.exception_handler(TransportError)
    async def _transport_error(request: Request, exc: TransportError):
        return JSONResponse({"detail": str(exc)}, status_code=502)

    @app.post("/sessions", status_code=201)
    def create_session(body: AskBody):
        if not body.question.strip():
            raise HTTPException(422, "question must be non-empty")
        with store_lock:
            counter["n"] += 1
            session_id = f"s{counter['n']}"
        persist_path = None
        if persist_dir is not None:
            persist_path = Path(persist_dir) / f"{session_id}.ndjson"
            persist_path.parent.mkdir(parents=True, exist_ok=True)
        transport = Transport(transport_config)
        runner = SessionRunner(Session(transport, session_id), persist_path)
        runners[session_id] = runner
        runner.start(body.question)
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str):
        return get_runner(session_id).session.to_json()

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, request: Request):
        runner = get_runner(session_id)
        params = request.query_params
        after = int(params.get("from", 0))
        follow = params.get("follow", "false").lower() in ("1", "true", "yes")

        def stream():
            last = after
            idle_ticks = 0
            while True:
                batch = runner.session.wait_events(last, timeout=0.1)
                for event in batch:
                    last = event.seq
                    doc = json.dumps(event.to_json(), sort_keys=True)
                    yield f"id: {event.seq}\nevent: {event.type}\ndata: {doc}\n\n"
                if batch:
                    idle_ticks = 0
                    continue
                if runner.idle():
                    idle_ticks += 1
                    if not follow or idle_ticks > 600:
                        return

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.post("/sessions/{session_id}/nodes/{node_id}/{action}", status_code=202)
    def node_action(session_id: str, node_id: int, action: str):
        runner = get_runner(session_id)
        session = runner.session
        request_id = runner.next_request_id()
        if action in ("explain", "examples"):
            runner.run_job(
                request_id,
                lambda: session.node_followup(node_id, action, request_id),
            )
        elif action == "trim":
            session.trim(node_id, request_id)
        elif action == "collapse":
            session.collapse(node_id, request_id)
        elif action == "expand":
            session.expand_node(node_id, request_id)
        else:
            raise HTTPException(404, f"unknown node action {action!r}")
        return {"request_id": request_id}

    @app.post(
        "/sessions/{session_id}/nodes/{from_id}/merge-into/{into_id}",
        status_code=202,
    )
    def merge_nodes(session_id: str, from_id: int, into_id: int):
        runner = get_runner(session_id)
        request_id = runner.next_request_id()
        runner.session.merge(from_id, into_id, request_id)
        return {"request_id": request_id}

    @app.post("/sessions/{session_id}/paragraphs/{index}/more", status_code=202)
    def tell_me_more(session_id: str, index: int):
        runner = get_runner(session_id)
        request_id = runner.next_request_id()
        runner.session.paragraph(index)  # 404 before accepting
        runner.run_job(
            request_id,
            lambda: runner.session.expand("tell-me-more", index, request_id),
        )
        return {"request_id": request_id}

    @app.post("/sessions/{session_id}/add-paragraph", status_code=202)
    def add_paragraph(session_id: str):
        runner = get_runner(session_id)
        request_id = runner.next_request_id()
        runner.run_job(
            request_id,
            lambda: runner.session.expand("add-paragraph", None, request_id),
        )
        return {"request_id": request_id}

    @app.get("/sessions/{session_id}/graph")
    def graph_snapshot(
        session_id: str,
        view: str = "merged",
        saliency: str = "all",
        show: str | None = None,
    ):
        runner = get_runner(session_id)
        shown = None
        if show:
            shown = [int(part) for part in show.split(",") if part != ""]
            if view == "split":
                shown = shown[0]
        elif view == "split":
            raise HTTPException(422, "split view needs ?show=<paragraph>")
        try:
            return runner.session.graph_snapshot(
                view=view, saliency=saliency, shown=shown
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, format: str = "json"):
        runner = get_runner(session_id)
        if format == "dot":
            return PlainTextResponse(
                runner.session.export("dot"), media_type="text/vnd.graphviz"
            )
        if format == "json":
            return JSONResponse(json.loads(runner.session.export("json")))
        raise HTTPException(422, f"unknown export format {format!r}")

    return app
