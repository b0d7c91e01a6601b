"""Pydantic request/response models for the HTTP surface.

Domain documents travel as plain dicts in their canonical JSON form (the
domain module owns those field names); these models cover the request bodies
and the service-level envelopes around them.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class CreateSessionRequest(BaseModel):
    course_id: str
    question_id: str


class TranscriptUpdate(BaseModel):
    text: str


class TranscriptResponse(BaseModel):
    session_id: str
    transcript: str


class SolutionRequest(BaseModel):
    solution_text: str = ""
    blank: bool = Field(
        default=False,
        description="Set true to submit a deliberately blank solution.",
    )


class SolutionResponse(BaseModel):
    session_id: str
    report_id: str
    trace_id: str
    iterations_used: int
    termination: str
    report: dict[str, Any]


class ChatRequest(BaseModel):
    message: str


class SessionResponse(BaseModel):
    session: dict[str, Any]
    completed: Optional[bool] = None
    study_goal: Optional[int] = None


class MetricsResponse(BaseModel):
    sessions: int
    reports: int
    conversations: int
    conversation_rate: Optional[float] = None
    step_metrics: Optional[dict[str, Any]] = None
