"""Uniform boundary to chat-capable language models.

Two backend kinds share one calling convention: a remote chat-completions
endpoint (the de-facto ``POST {model, messages, temperature}`` contract with a
bearer token) and a deterministic scripted backend used for tests and offline
rehearsal.  The gateway also owns the wire forms every agent speaks:

* tool calls travel in ```` ```tool_call ```` fenced blocks holding a JSON
  object with keys ``tool`` and ``arguments``;
* judge verdicts travel in ```` ```judge_verdict ```` fenced blocks;
* final answers sit behind a ``FINAL_ANSWER:`` sentinel;
* model reasoning between ``<think>`` and ``</think>`` is excised from the
  visible text and surfaced separately as a compact summary.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import httpx

from .domain import (
    FinalAnswer,
    InteractiveCriterion,
    InteractiveVerdict,
    JudgeVerdict,
    ParseError,
    RubricCriterion,
    ToolCall,
    _check_fields,
    _str_field,
)

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.5
REQUEST_TIMEOUT_S = 120.0
REASONING_DELIMITERS = ("<think>", "</think>")

DEFAULT_GENERATION_PARAMS: "GenerationParams"
DEFAULT_JUDGE_PARAMS: "GenerationParams"


class GatewayError(RuntimeError):
    """Base class for gateway failures."""


class TransportError(GatewayError):
    """The remote endpoint could not be reached or answered malformed data."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ScriptError(GatewayError):
    """A scripted backend had no exchange matching the current call."""


class VerdictParseError(GatewayError):
    """A judge turn did not contain a well-formed verdict block."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant | tool
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant", "tool"):
            raise ValueError(f"unknown chat role: {self.role}")
        if not self.content and self.role != "assistant":
            raise ValueError("empty content is only allowed for assistant placeholders")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    max_output_tokens: int = 2048
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


DEFAULT_GENERATION_PARAMS = GenerationParams(temperature=0.7)
DEFAULT_JUDGE_PARAMS = GenerationParams(temperature=0.0)


@dataclass(frozen=True)
class ModelTurn:
    """One assistant turn; reasoning is excised from the visible text."""

    text: str
    reasoning_summary: str | None = None


@dataclass(frozen=True)
class ScriptedExchange:
    """One canned response; ``match`` selects when it applies.

    ``match_kind`` is one of ``any`` (always applies), ``substring`` (applies
    when ``match_value`` occurs in the rendered conversation) or ``ordinal``
    (applies to the nth call against this backend, 1-based).
    """

    match_kind: str
    response: str
    match_value: str | int | None = None

    def __post_init__(self):
        if self.match_kind not in ("any", "substring", "ordinal"):
            raise ValueError(f"unknown match kind: {self.match_kind}")
        if self.match_kind == "substring" and not isinstance(self.match_value, str):
            raise ValueError("substring match requires a string value")
        if self.match_kind == "ordinal" and not isinstance(self.match_value, int):
            raise ValueError("ordinal match requires an integer value")

    def to_dict(self) -> dict[str, Any]:
        if self.match_kind == "any":
            match: Any = "any"
        else:
            match = {self.match_kind: self.match_value}
        return {"match": match, "response": self.response}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScriptedExchange":
        _check_fields(data, "ScriptedExchange", {"match", "response"})
        raw = data["match"]
        if raw == "any":
            kind, value = "any", None
        elif isinstance(raw, Mapping) and len(raw) == 1:
            kind, value = next(iter(raw.items()))
        else:
            raise ParseError("ScriptedExchange: match must be 'any', {'substring': s} or {'ordinal': n}")
        try:
            return cls(match_kind=kind, match_value=value,
                       response=_str_field(data, "response", "ScriptedExchange"))
        except ValueError as exc:
            raise ParseError(f"ScriptedExchange: {exc}") from exc


@dataclass
class BackendDescriptor:
    """Where and how to obtain assistant turns.

    ``remote_chat_endpoint`` performs HTTP requests; ``scripted`` replays a
    canned script and keeps an atomically updated call counter so ordinal
    matches and call accounting work when the descriptor is shared between
    threads.
    """

    kind: str  # remote_chat_endpoint | scripted
    model_name: str
    endpoint_url: str | None = None
    auth_token_env_var: str | None = None
    script: tuple[ScriptedExchange, ...] = ()
    _calls: int = field(default=0, init=False, repr=False)
    _transcript: list = field(default_factory=list, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("remote_chat_endpoint", "scripted"):
            raise ValueError(f"unknown backend kind: {self.kind}")
        if self.kind == "remote_chat_endpoint" and not self.endpoint_url:
            raise ValueError("remote_chat_endpoint backend requires endpoint_url")
        if self.kind == "scripted":
            if not self.script:
                raise ValueError("scripted backend requires a script")
            ordinals = [e.match_value for e in self.script if e.match_kind == "ordinal"]
            if len(set(ordinals)) != len(ordinals):
                raise ValueError("ordinals within a script must be unique")

    @property
    def calls_made(self) -> int:
        return self._calls

    @property
    def transcript(self) -> list[tuple[ChatMessage, ...]]:
        """Message lists received so far (scripted backends only; for tests)."""
        return list(self._transcript)

    def reset(self) -> None:
        with self._lock:
            self._calls = 0
            self._transcript.clear()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "model_name": self.model_name,
            "endpoint_url": self.endpoint_url,
            "auth_token_env_var": self.auth_token_env_var,
            "script": [e.to_dict() for e in self.script] if self.script else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BackendDescriptor":
        _check_fields(data, "BackendDescriptor", {"kind", "model_name"},
                      optional={"endpoint_url", "auth_token_env_var", "script"})
        raw_script = data.get("script")
        script: tuple[ScriptedExchange, ...] = ()
        if raw_script is not None:
            if not isinstance(raw_script, Sequence) or isinstance(raw_script, str):
                raise ParseError("BackendDescriptor: script must be a list")
            script = tuple(ScriptedExchange.from_dict(item) for item in raw_script)
        endpoint_url = data.get("endpoint_url")
        if endpoint_url is not None and not isinstance(endpoint_url, str):
            raise ParseError("BackendDescriptor: endpoint_url must be a string")
        auth = data.get("auth_token_env_var")
        if auth is not None and not isinstance(auth, str):
            raise ParseError("BackendDescriptor: auth_token_env_var must be a string")
        try:
            return cls(
                kind=_str_field(data, "kind", "BackendDescriptor"),
                model_name=_str_field(data, "model_name", "BackendDescriptor"),
                endpoint_url=endpoint_url,
                auth_token_env_var=auth,
                script=script,
            )
        except ValueError as exc:
            raise ParseError(f"BackendDescriptor: {exc}") from exc


def scripted_backend(script: Sequence[ScriptedExchange], model_name: str = "scripted") -> BackendDescriptor:
    return BackendDescriptor(kind="scripted", model_name=model_name, script=tuple(script))


# ---------------------------------------------------------------------------
# chat completion


def complete_chat(backend: BackendDescriptor, messages: Sequence[ChatMessage],
                  params: GenerationParams = DEFAULT_GENERATION_PARAMS) -> ModelTurn:
    """One assistant turn from the backend.

    Scripted backends return the first matching exchange; an ordinal match
    takes precedence over a substring match, and substring over ``any``.
    """
    if not messages:
        raise GatewayError("messages must be non-empty")
    if backend.kind == "scripted":
        raw = _scripted_response(backend, messages)
    else:
        raw = _remote_response(backend, messages, params)
    text, reasoning = extract_reasoning(raw)
    return ModelTurn(text=text, reasoning_summary=reasoning)


def _scripted_response(backend: BackendDescriptor, messages: Sequence[ChatMessage]) -> str:
    with backend._lock:
        backend._calls += 1
        call_number = backend._calls
        backend._transcript.append(tuple(messages))
    rendered = "\n".join(m.content for m in messages)
    for exchange in backend.script:
        if exchange.match_kind == "ordinal" and exchange.match_value == call_number:
            return exchange.response
    for exchange in backend.script:
        if exchange.match_kind == "substring" and str(exchange.match_value) in rendered:
            return exchange.response
    for exchange in backend.script:
        if exchange.match_kind == "any":
            return exchange.response
    raise ScriptError(f"script exhausted: no exchange matches call {call_number}")


def _remote_response(backend: BackendDescriptor, messages: Sequence[ChatMessage],
                     params: GenerationParams) -> str:
    import os

    payload: dict[str, Any] = {
        "model": backend.model_name,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
        "temperature": params.temperature,
        "max_tokens": params.max_output_tokens,
    }
    if params.stop_sequences:
        payload["stop"] = list(params.stop_sequences)
    headers = {}
    if backend.auth_token_env_var:
        token = os.environ.get(backend.auth_token_env_var, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
    last_error: Exception | None = None
    for attempt in range(1, RETRY_ATTEMPTS + 1):
        try:
            response = httpx.post(backend.endpoint_url, json=payload, headers=headers,
                                  timeout=REQUEST_TIMEOUT_S)
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            last_error = exc
            if attempt < RETRY_ATTEMPTS:
                time.sleep(RETRY_BACKOFF_S * (2 ** (attempt - 1)))
    raise TransportError(
        f"chat endpoint {backend.endpoint_url} failed after {RETRY_ATTEMPTS} attempts: {last_error}",
        attempts=RETRY_ATTEMPTS,
    )


def extract_reasoning(text: str,
                      delimiters: tuple[str, str] = REASONING_DELIMITERS) -> tuple[str, str | None]:
    """Split off reasoning between the delimiters; returns (visible, summary)."""
    open_tag, close_tag = delimiters
    pattern = re.compile(re.escape(open_tag) + r"(.*?)" + re.escape(close_tag), re.DOTALL)
    summaries = [m.group(1).strip() for m in pattern.finditer(text)]
    if not summaries:
        return text, None
    cleaned = pattern.sub("", text).strip()
    return cleaned, "\n".join(s for s in summaries if s)


# ---------------------------------------------------------------------------
# structured-output parsing

FINAL_ANSWER_SENTINEL = "FINAL_ANSWER:"

_FENCE = re.compile(r"```(\w+)[ \t]*\n?(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ParseFailure:
    """A model turn that contained neither a valid action nor an answer."""

    detail: str


def _fenced_blocks(text: str, sentinel: str) -> list[tuple[str, str]]:
    """(inner, full) pairs for every closed ``sentinel`` fence in the text."""
    return [(m.group(2), m.group(0)) for m in _FENCE.finditer(text) if m.group(1) == sentinel]


def _has_unclosed_fence(text: str, sentinel: str) -> bool:
    opens = text.count(f"```{sentinel}")
    return opens > len(_fenced_blocks(text, sentinel))


def parse_tool_call(turn_text: str,
                    registry_names: frozenset[str] | None = None) -> ToolCall | FinalAnswer | ParseFailure:
    """Extract the action from an assistant turn.

    A well-formed tool-call block wins over any answer text in the same turn;
    tool-name membership is deliberately not checked here (dispatch reports
    unknown tools as error observations the agent can react to).
    ``registry_names`` is accepted for symmetry with that contract but the
    call-block-wins rule applies unconditionally.
    """
    del registry_names
    blocks = _fenced_blocks(turn_text, "tool_call")
    if blocks:
        inner, full = blocks[0]
        try:
            payload = json.loads(inner)
        except json.JSONDecodeError as exc:
            return ParseFailure(f"invalid JSON in tool_call block: {exc.msg}")
        if not isinstance(payload, dict):
            return ParseFailure("tool_call block must hold a JSON object")
        if "tool" not in payload or "arguments" not in payload:
            return ParseFailure("tool_call block needs keys 'tool' and 'arguments'")
        tool = payload["tool"]
        arguments = payload["arguments"]
        if not isinstance(tool, str) or not tool:
            return ParseFailure("tool must be a non-empty string")
        if not isinstance(arguments, dict):
            return ParseFailure("arguments must be an object")
        return ToolCall(tool_name=tool, arguments=arguments, raw_text=full)
    if _has_unclosed_fence(turn_text, "tool_call"):
        return ParseFailure("unclosed tool_call block")
    idx = turn_text.find(FINAL_ANSWER_SENTINEL)
    if idx >= 0:
        return FinalAnswer(turn_text[idx + len(FINAL_ANSWER_SENTINEL):].strip())
    return ParseFailure("turn contains neither a tool_call block nor a FINAL_ANSWER sentinel")


def render_tool_call(tool_name: str, arguments: Mapping[str, Any]) -> str:
    """Canonical fenced form; ``parse_tool_call`` inverts it exactly."""
    body = json.dumps({"tool": tool_name, "arguments": dict(arguments)},
                      sort_keys=True, ensure_ascii=False)
    return f"```tool_call\n{body}\n```"


def render_final_answer(text: str) -> str:
    return f"{FINAL_ANSWER_SENTINEL} {text}"


def _verdict_payload(turn_text: str) -> Mapping[str, Any]:
    blocks = _fenced_blocks(turn_text, "judge_verdict")
    if not blocks:
        if _has_unclosed_fence(turn_text, "judge_verdict"):
            raise VerdictParseError("unclosed judge_verdict block")
        raise VerdictParseError("turn contains no judge_verdict block")
    inner, _ = blocks[0]
    try:
        payload = json.loads(inner)
    except json.JSONDecodeError as exc:
        raise VerdictParseError(f"invalid JSON in judge_verdict block: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise VerdictParseError("judge_verdict block must hold a JSON object")
    return payload


def _read_judgment(name: str, value: Any) -> tuple[bool, str | None]:
    """Normalise one criterion entry to (passed, explanation)."""
    if value == "pass":
        return True, None
    if value == "fail":
        raise VerdictParseError(f"missing explanation for failing criterion: {name}")
    if isinstance(value, Mapping):
        verdict = value.get("verdict")
        explanation = value.get("explanation")
        if verdict == "pass":
            return True, None
        if verdict == "fail":
            if not isinstance(explanation, str) or not explanation.strip():
                raise VerdictParseError(f"missing explanation for failing criterion: {name}")
            return False, explanation
    raise VerdictParseError(f"judgment for {name} must be 'pass' or 'fail'")


def parse_judge_verdict(turn_text: str,
                        judged_criteria: frozenset[RubricCriterion]) -> JudgeVerdict:
    """Extract one pass/fail per judged criterion plus fail explanations.

    Raises :class:`VerdictParseError` when any judged criterion is missing or
    a failing criterion lacks an explanation; callers re-ask the judge up to a
    configured count before surfacing the error.
    """
    if not judged_criteria:
        raise ValueError("judged_criteria must be non-empty")
    payload = _verdict_payload(turn_text)
    judgments: dict[RubricCriterion, bool] = {}
    explanations: dict[RubricCriterion, str] = {}
    for criterion in sorted(judged_criteria, key=lambda c: c.value):
        if criterion.value not in payload:
            raise VerdictParseError(f"missing criterion: {criterion.value}")
        passed, explanation = _read_judgment(criterion.value, payload[criterion.value])
        judgments[criterion] = passed
        if explanation is not None:
            explanations[criterion] = explanation
    return JudgeVerdict.build(judgments, explanations)


def parse_interactive_verdict(turn_text: str) -> InteractiveVerdict:
    """Extract the four-axis verdict for one interactive response."""
    payload = _verdict_payload(turn_text)
    judgments: dict[InteractiveCriterion, bool] = {}
    for criterion in InteractiveCriterion:
        if criterion.value not in payload:
            raise VerdictParseError(f"missing criterion: {criterion.value}")
        value = payload[criterion.value]
        if isinstance(value, Mapping):
            value = value.get("verdict")
        if value not in ("pass", "fail"):
            raise VerdictParseError(f"judgment for {criterion.value} must be 'pass' or 'fail'")
        judgments[criterion] = value == "pass"
    return InteractiveVerdict(judgments)
