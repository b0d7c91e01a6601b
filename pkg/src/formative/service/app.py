"""HTTP service for the classroom workflow.

Sessions, transcription, solution submission (which runs the refinement
loop), follow-up chat with per-step server-sent events, persistence-backed
metrics.  Per-session operations are serialized with a session lock (submit
and chat conflict); all shared resources (index, graphs, descriptors) are
immutable after startup.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import queue
import threading
import uuid
from typing import Iterator

from fastapi import FastAPI, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..agent import TrajectoryError, run_trajectory
from ..analytics import AnalyticsError, step_metrics
from ..domain import Session, Trajectory, TrajectoryStep, now_rfc3339
from ..feedback import RefinementError, refine
from ..gateway import ChatMessage, GatewayError, complete_chat
from ..retrieval import load_index, require_embedder_match
from ..toolbox import build_standard_registry, load_behaviour_dimensions, load_topic_graph
from .config import ServiceConfig, load_question_bank
from .schemas import (
    ChatRequest,
    CreateSessionRequest,
    MetricsResponse,
    SessionResponse,
    SolutionRequest,
    SolutionResponse,
    TranscriptResponse,
    TranscriptUpdate,
)
from .store import DocumentStore


class _SessionLocks:
    """One mutual-exclusion lock per session id."""

    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def get(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(session_id, threading.Lock())


def _sse(event: str, payload: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(payload, ensure_ascii=False)}\n\n"


def create_app(config: ServiceConfig) -> FastAPI:
    index = load_index(config.corpus_index_path)
    require_embedder_match(index, config.embedder)
    topic_graph = load_topic_graph(config.prerequisite_map_path)
    behaviour_dims = load_behaviour_dimensions(config.behaviour_descriptor_path)
    question_bank = load_question_bank(config.question_bank_path)
    registry = build_standard_registry(index, config.embedder, topic_graph, behaviour_dims)
    store = DocumentStore(config.store_root)
    locks = _SessionLocks()
    model_gate = (threading.Semaphore(config.max_concurrent_model_calls)
                  if config.max_concurrent_model_calls else None)

    app = FastAPI(title="formative feedback service", version="0.1.0")
    # the student UI may be hosted elsewhere; the API carries no credentials
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])

    def _session_or_404(session_id: str) -> Session:
        session = store.load_session(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        return session

    def _session_response(session: Session) -> SessionResponse:
        completed = None
        goal = None
        if config.study_mode.enabled:
            goal = config.study_mode.min_questions
            completed = len(session.trajectories) >= goal
        return SessionResponse(session=session.to_dict(), completed=completed, study_goal=goal)

    def _gated(fn, *args, **kwargs):
        if model_gate is None:
            return fn(*args, **kwargs)
        with model_gate:
            return fn(*args, **kwargs)

    @app.post("/api/sessions", response_model=SessionResponse, status_code=201)
    def create_session(body: CreateSessionRequest) -> SessionResponse:
        context = question_bank.get(body.question_id)
        if context is None or context.course_id != body.course_id:
            raise HTTPException(
                status_code=404,
                detail=f"unknown question {body.question_id!r} for course {body.course_id!r}")
        session = Session(
            session_id=uuid.uuid4().hex,
            context=context,
            created_at=now_rfc3339(),
        )
        store.save_session(session)
        return _session_response(session)

    @app.get("/api/sessions/{session_id}", response_model=SessionResponse)
    def get_session(session_id: str) -> SessionResponse:
        return _session_response(_session_or_404(session_id))

    @app.post("/api/sessions/{session_id}/transcribe", response_model=TranscriptResponse)
    async def transcribe(session_id: str, image: UploadFile) -> TranscriptResponse:
        session = _session_or_404(session_id)
        if config.vision_backend is None:
            raise HTTPException(status_code=501, detail="transcription is not configured")
        payload = await image.read()
        encoded = base64.b64encode(payload).decode("ascii")
        message = ChatMessage(
            role="user",
            content="Transcribe the handwritten solution in this image to plain text. "
                    f"Image ({image.content_type or 'image'}, base64):\n{encoded}",
        )
        try:
            turn = _gated(complete_chat, config.vision_backend, [message])
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=f"transcription failed: {exc}") from exc
        session = dataclasses.replace(session, transcript=turn.text)
        store.save_session(session)
        return TranscriptResponse(session_id=session_id, transcript=turn.text)

    @app.put("/api/sessions/{session_id}/transcript", response_model=TranscriptResponse)
    def update_transcript(session_id: str, body: TranscriptUpdate) -> TranscriptResponse:
        session = _session_or_404(session_id)
        session = dataclasses.replace(session, transcript=body.text)
        store.save_session(session)
        return TranscriptResponse(session_id=session_id, transcript=body.text)

    @app.post("/api/sessions/{session_id}/solution", response_model=SolutionResponse)
    def submit_solution(session_id: str, body: SolutionRequest) -> SolutionResponse:
        session = _session_or_404(session_id)
        if not body.solution_text.strip() and not body.blank:
            raise HTTPException(
                status_code=400,
                detail="solution_text is empty; set blank=true to submit a blank solution")
        lock = locks.get(session_id)
        if not lock.acquire(blocking=False):
            raise HTTPException(status_code=409,
                                detail="another submission or chat is in progress")
        try:
            context = dataclasses.replace(session.context, student_solution=body.solution_text)
            try:
                trace = _gated(
                    refine, context, config.refinement,
                    config.generation_backend, config.judge_backend,
                    template_root=config.template_root,
                )
            except RefinementError as exc:
                partial_id = store.save_partial_trace(session_id, {
                    "error": str(exc),
                    "context_ref": exc.context_ref,
                    "iterations": [it.to_dict() for it in exc.partial_iterations],
                })
                raise HTTPException(
                    status_code=502,
                    detail=f"feedback generation failed: {exc} (partial trace {partial_id})",
                ) from exc
            report = trace.iterations[-1].report
            trace_id = store.save_trace(session_id, trace)
            report_id = store.save_report(session_id, report.to_dict())
            # resubmission supersedes the report pointer; old reports, traces and
            # trajectories stay on disk and stay referenced
            session = dataclasses.replace(
                session, report=report, refinement_trace_ref=trace_id)
            store.save_session(session)
            return SolutionResponse(
                session_id=session_id,
                report_id=report_id,
                trace_id=trace_id,
                iterations_used=len(trace.iterations),
                termination=trace.termination.value,
                report=report.to_dict(),
            )
        finally:
            lock.release()

    @app.post("/api/sessions/{session_id}/chat")
    def chat(session_id: str, body: ChatRequest) -> StreamingResponse:
        session = _session_or_404(session_id)
        if session.report is None:
            raise HTTPException(status_code=412,
                                detail="submit a solution and receive feedback before chatting")
        lock = locks.get(session_id)
        if not lock.acquire(blocking=False):
            raise HTTPException(status_code=409,
                                detail="a chat or submission is already in progress")

        history = [(t.query, t.final_answer) for t in store.iter_trajectories(session_id)]
        report_ref = store.latest_report_id(session_id) or ""
        events: queue.Queue = queue.Queue()

        def on_step(step: TrajectoryStep) -> None:
            events.put(_sse("step", {
                "step_index": step.index,
                "tool_name": step.action.tool_name if not step.is_final else "answer",
                "observation_kind": step.observation.kind.value if step.observation else None,
            }))

        def worker() -> None:
            try:
                trajectory = _gated(
                    run_trajectory, body.message, session.report, registry,
                    config.agent_backend, config.agent_limits,
                    report_ref=report_ref, history=history,
                    template_root=config.template_root, on_step=on_step,
                )
                # persist before the terminal event: a crash between the two
                # loses at most the client notification, never the record
                trajectory_id = store.save_trajectory(session_id, trajectory)
                current = store.load_session(session_id)
                store.save_session(dataclasses.replace(
                    current, trajectories=current.trajectories + (trajectory_id,)))
                events.put(_sse("answer", {
                    "final_answer": trajectory.final_answer,
                    "trajectory_id": trajectory_id,
                    "termination": trajectory.termination.value,
                }))
            except TrajectoryError as exc:
                events.put(_sse("error", {"detail": str(exc)}))
            except Exception as exc:  # defensive: the stream must terminate
                events.put(_sse("error", {"detail": f"internal error: {exc}"}))
            finally:
                events.put(None)
                lock.release()

        threading.Thread(target=worker, daemon=True).start()

        def stream() -> Iterator[str]:
            while True:
                item = events.get()
                if item is None:
                    break
                yield item

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/api/sessions/{session_id}/trajectories/{trajectory_id}")
    def get_trajectory(session_id: str, trajectory_id: str) -> dict:
        _session_or_404(session_id)
        trajectory = store.load_trajectory(session_id, trajectory_id)
        if trajectory is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown trajectory: {trajectory_id}")
        return trajectory.to_dict()

    @app.get("/api/admin/metrics", response_model=MetricsResponse)
    def metrics() -> MetricsResponse:
        session_ids = store.list_sessions()
        report_count = 0
        sessions_with_report = 0
        conversations = 0
        trajectories: list[Trajectory] = []
        for session_id in session_ids:
            reports_here = store.count_reports(session_id)
            report_count += reports_here
            if reports_here:
                sessions_with_report += 1
            session_trajectories = list(store.iter_trajectories(session_id))
            if session_trajectories:
                conversations += 1
            trajectories.extend(session_trajectories)
        rate = conversations / sessions_with_report if sessions_with_report else None
        try:
            metrics_payload = step_metrics(trajectories).to_dict() if trajectories else None
        except AnalyticsError:
            metrics_payload = None
        return MetricsResponse(
            sessions=len(session_ids),
            reports=report_count,
            conversations=conversations,
            conversation_rate=rate,
            step_metrics=metrics_payload,
        )

    if config.frontend_dist is not None and config.frontend_dist.is_dir():
        app.mount("/", StaticFiles(directory=config.frontend_dist, html=True), name="ui")

    return app
