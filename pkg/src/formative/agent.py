"""Closed-loop interactive feedback agent.

Each student question runs one trajectory: the model reasons, emits a tool
call or a final answer, observations (successes *and* errors) are appended to
the context verbatim so the model can revise failed calls, and the loop stops
at a final answer or at the step limit, in which case one forced-answer call
closes the trajectory.  Unparseable turns become synthetic error observations
rather than aborts; a separate consecutive-parse-error fuse prevents livelock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .domain import (
    FeedbackReport,
    FinalAnswer,
    InteractiveVerdict,
    Observation,
    ObservationKind,
    ToolCall,
    Trajectory,
    TrajectoryStep,
    TrajectoryTermination,
    validate_report,
)
from .gateway import (
    BackendDescriptor,
    ChatMessage,
    DEFAULT_GENERATION_PARAMS,
    DEFAULT_JUDGE_PARAMS,
    GatewayError,
    GenerationParams,
    ParseFailure,
    VerdictParseError,
    complete_chat,
    parse_interactive_verdict,
    parse_tool_call,
    render_final_answer,
)
from .feedback import render_report_block
from .prompts import render_template
from .toolbox import ToolRegistry, dispatch

HISTORY_WINDOW = 3  # (question, answer) pairs carried into a new trajectory
PARSE_ERROR_TOOL_NAME = "<unparsed>"
JUDGE_PARSE_RETRIES = 2


class AgentError(RuntimeError):
    """Base class for agent failures."""


class TrajectoryError(AgentError):
    """The loop could not finish; carries the steps completed so far."""

    def __init__(self, message: str, partial_steps: tuple[TrajectoryStep, ...]):
        super().__init__(message)
        self.partial_steps = partial_steps


class ResponseJudgeError(AgentError):
    """The interactive judge never produced a parseable verdict."""


class ExportError(AgentError):
    """A training-trace sink could not be written."""


@dataclass(frozen=True)
class AgentLimits:
    max_steps: int = 6
    max_consecutive_parse_errors: int = 2

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_consecutive_parse_errors < 1:
            raise ValueError("max_consecutive_parse_errors must be >= 1")


def _assistant_context(turn_text: str, reasoning_summary: str | None) -> str:
    if reasoning_summary:
        return f"<think>{reasoning_summary}</think>\n{turn_text}"
    return turn_text


def build_initial_context(query: str, report: FeedbackReport, registry: ToolRegistry,
                          history: Sequence[tuple[str, str]] = (),
                          template_root: Path | str | None = None) -> list[ChatMessage]:
    """System prompt (report + tool advertisement), recent history, the query."""
    system = render_template(
        "interactive_system", template_root,
        report_block=render_report_block(report),
        tool_advertisement=registry.advertisement(),
    )
    messages = [ChatMessage(role="system", content=system)]
    for question, answer in list(history)[-HISTORY_WINDOW:]:
        messages.append(ChatMessage(role="user", content=question))
        messages.append(ChatMessage(role="assistant", content=answer))
    messages.append(ChatMessage(role="user", content=query))
    return messages


def run_trajectory(query: str, report: FeedbackReport, registry: ToolRegistry,
                   backend: BackendDescriptor, limits: AgentLimits = AgentLimits(),
                   *, report_ref: str = "",
                   history: Sequence[tuple[str, str]] = (),
                   template_root: Path | str | None = None,
                   params: GenerationParams = DEFAULT_GENERATION_PARAMS,
                   on_step: Callable[[TrajectoryStep], None] | None = None) -> Trajectory:
    """Run one closed-loop trajectory for a student question."""
    violations = validate_report(report)
    if violations:
        raise ValueError(f"invalid report: {violations[0]}")
    if len(registry) == 0:
        raise ValueError("registry must be non-empty")
    messages = build_initial_context(query, report, registry, history, template_root)
    steps: list[TrajectoryStep] = []
    consecutive_parse_errors = 0

    def emit(step: TrajectoryStep) -> None:
        steps.append(step)
        if on_step is not None:
            on_step(step)

    def finish(termination: TrajectoryTermination) -> Trajectory:
        final = steps[-1].action
        assert isinstance(final, FinalAnswer)
        error_count = sum(
            1 for s in steps
            if s.observation is not None and s.observation.kind is ObservationKind.ERROR
        )
        return Trajectory(
            query=query, report_ref=report_ref, steps=tuple(steps),
            final_answer=final.text, termination=termination, error_count=error_count,
        )

    try:
        while len(steps) < limits.max_steps:
            turn = complete_chat(backend, messages, params)
            parsed = parse_tool_call(turn.text, frozenset(registry.names()))
            reasoning = turn.reasoning_summary or ""
            if isinstance(parsed, FinalAnswer):
                emit(TrajectoryStep(index=len(steps), reasoning_summary=reasoning,
                                    action=parsed, observation=None))
                return finish(TrajectoryTermination.ANSWERED)
            if isinstance(parsed, ToolCall):
                consecutive_parse_errors = 0
                observation = dispatch(registry, parsed)
                action: ToolCall = parsed
            else:  # ParseFailure: keep the loop closed with a synthetic observation
                consecutive_parse_errors += 1
                action = ToolCall(tool_name=PARSE_ERROR_TOOL_NAME, arguments={},
                                  raw_text=turn.text)
                observation = Observation(
                    kind=ObservationKind.ERROR,
                    payload=f"could not parse your action: {parsed.detail}. "
                            "Respond with one tool_call block or a FINAL_ANSWER line.",
                    tool_name=PARSE_ERROR_TOOL_NAME,
                )
            emit(TrajectoryStep(index=len(steps), reasoning_summary=reasoning,
                                action=action, observation=observation))
            if consecutive_parse_errors > limits.max_consecutive_parse_errors:
                raise TrajectoryError(
                    f"{consecutive_parse_errors} consecutive unparseable turns",
                    partial_steps=tuple(steps),
                )
            messages = messages + [
                ChatMessage(role="assistant",
                            content=_assistant_context(turn.text, turn.reasoning_summary)),
                ChatMessage(role="tool", content=observation.payload or "(empty observation)"),
            ]
        # step budget exhausted: one forced-answer call, tools withdrawn
        forced = messages + [ChatMessage(
            role="system", content=render_template("forced_answer", template_root))]
        turn = complete_chat(backend, forced, params)
        parsed = parse_tool_call(turn.text)
        answer = parsed.text if isinstance(parsed, FinalAnswer) else turn.text.strip()
        emit(TrajectoryStep(index=len(steps), reasoning_summary=turn.reasoning_summary or "",
                            action=FinalAnswer(answer), observation=None))
        return finish(TrajectoryTermination.STEP_LIMIT_FORCED)
    except GatewayError as exc:
        raise TrajectoryError(f"backend failure at step {len(steps)}: {exc}",
                              partial_steps=tuple(steps)) from exc


# ---------------------------------------------------------------------------
# post-hoc judging


def render_transcript(trajectory: Trajectory) -> str:
    lines = []
    for step in trajectory.steps:
        lines.append(f"step {step.index}:")
        if step.reasoning_summary:
            lines.append(f"  reasoning: {step.reasoning_summary}")
        if isinstance(step.action, ToolCall):
            arguments = json.dumps(step.action.arguments, sort_keys=True, ensure_ascii=False)
            lines.append(f"  tool call: {step.action.tool_name} {arguments}")
            obs = step.observation
            lines.append(f"  observation ({obs.kind.value}): {obs.payload}")
        else:
            lines.append(f"  final answer: {step.action.text}")
    return "\n".join(lines)


def judge_response(query: str, report: FeedbackReport, trajectory: Trajectory,
                   backend: BackendDescriptor,
                   template_root: Path | str | None = None,
                   params: GenerationParams = DEFAULT_JUDGE_PARAMS,
                   parse_retries: int = JUDGE_PARSE_RETRIES) -> InteractiveVerdict:
    """One judge call over the whole trajectory, parsed into four judgments."""
    prompt = render_template(
        "interactive_judge", template_root,
        query=query,
        report_block=render_report_block(report),
        transcript=render_transcript(trajectory),
    )
    messages = [ChatMessage(role="user", content=prompt)]
    last_error: VerdictParseError | None = None
    for attempt in range(parse_retries + 1):
        turn = complete_chat(backend, messages, params)
        try:
            return parse_interactive_verdict(turn.text)
        except VerdictParseError as exc:
            last_error = exc
            if attempt < parse_retries:
                messages = messages + [ChatMessage(
                    role="system",
                    content=f"Your previous response could not be parsed: {exc}. "
                            "Respond again with a single judge_verdict block with all "
                            "four criteria.",
                )]
    raise ResponseJudgeError(f"interactive judge unparseable after retries: {last_error}")


# ---------------------------------------------------------------------------
# training-trace export


def _segment(step: TrajectoryStep) -> str:
    """The assistant text that produced a step: reasoning plus the action."""
    if isinstance(step.action, ToolCall):
        action_text = step.action.raw_text
    else:
        action_text = render_final_answer(step.action.text)
    if step.reasoning_summary:
        return f"<think>{step.reasoning_summary}</think>\n{action_text}"
    return action_text


def trajectory_to_records(trajectory: Trajectory) -> list[dict]:
    """Two line-records per trajectory, mirroring a two-stage training split.

    Stage A: the question alone → the first reasoning step and first action
    (trains initial reasoning and tool selection).  Stage B: the question,
    the first turn and every observation → the remaining steps and the final
    answer (trains multi-step tool use and response generation); degenerate
    for single-step trajectories, whose stage-B target is the answer alone.
    """
    base = [{"role": "user", "content": trajectory.query}]
    steps = trajectory.steps
    stage_a = {"stage": "A", "messages": base, "target": _segment(steps[0])}
    if len(steps) == 1:
        stage_b_messages = list(base)
        target = trajectory.final_answer
    else:
        stage_b_messages = base + [{"role": "assistant", "content": _segment(steps[0])}]
        for step in steps:
            if step.observation is not None:
                stage_b_messages.append({"role": "tool", "content": step.observation.payload})
        target = "\n".join(_segment(step) for step in steps[1:])
    stage_b = {"stage": "B", "messages": stage_b_messages, "target": target}
    return [stage_a, stage_b]


def export_training_traces(trajectories: Sequence[Trajectory], sink: Path | str) -> int:
    """Write line-delimited training records; returns the record count."""
    records = []
    for trajectory in trajectories:
        violations = trajectory.validate()
        if violations:
            raise ValueError(f"invalid trajectory: {violations[0]}")
        records.extend(trajectory_to_records(trajectory))
    try:
        with open(sink, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write training traces to {sink}: {exc}") from exc
    return len(records)
