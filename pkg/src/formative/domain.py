"""Shared data model: feedback reports, judge verdicts, refinement traces,
agent trajectories, retrieval artifacts, and session records.

Values are plain frozen dataclasses plus closed enumerations.  Construction is
deliberately lenient (so validators can report problems instead of raising
half-way through); ``from_dict`` is strict and rejects any document that
violates an invariant or carries unknown fields.  The canonical document form
for every type is UTF-8 JSON with the exact field names used below; canonical
bytes are produced with sorted keys and compact separators so serialization is
byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from functools import cached_property
from typing import Any, Mapping, Sequence


class ParseError(ValueError):
    """A document does not match the canonical form; message names the field."""


def now_rfc3339() -> str:
    """Current UTC time as an RFC 3339 string (portable, sortable)."""
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# enumerations


class ComponentKind(str, Enum):
    """The five parts of a structured feedback report."""

    CURRENT_STATE = "current_state"
    TASK_NEXT_STEPS = "task_next_steps"
    STRATEGY_NEXT_STEPS = "strategy_next_steps"
    SELF_REGULATED_NEXT_STEPS = "self_regulated_next_steps"
    PRAISE = "praise"


class RubricCriterion(str, Enum):
    """Binary rubric dimensions the feedback judge evaluates."""

    CLARITY = "clarity"
    CURRENT_STATE_COVERAGE = "current_state_coverage"
    CURRENT_STATE_CORRECTNESS = "current_state_correctness"
    TASK_NEXT_STEPS_COVERAGE = "task_next_steps_coverage"
    TASK_NEXT_STEPS_CORRECTNESS = "task_next_steps_correctness"
    STRATEGY_NEXT_STEPS = "strategy_next_steps"
    SELF_REGULATED_NEXT_STEPS = "self_regulated_next_steps"
    PRAISE = "praise"

    @property
    def governed_components(self) -> tuple[ComponentKind, ...]:
        """Components this criterion governs; clarity governs the whole report."""
        return _GOVERNANCE[self]


_GOVERNANCE: dict[RubricCriterion, tuple[ComponentKind, ...]] = {
    RubricCriterion.CLARITY: tuple(ComponentKind),
    RubricCriterion.CURRENT_STATE_COVERAGE: (ComponentKind.CURRENT_STATE,),
    RubricCriterion.CURRENT_STATE_CORRECTNESS: (ComponentKind.CURRENT_STATE,),
    RubricCriterion.TASK_NEXT_STEPS_COVERAGE: (ComponentKind.TASK_NEXT_STEPS,),
    RubricCriterion.TASK_NEXT_STEPS_CORRECTNESS: (ComponentKind.TASK_NEXT_STEPS,),
    RubricCriterion.STRATEGY_NEXT_STEPS: (ComponentKind.STRATEGY_NEXT_STEPS,),
    RubricCriterion.SELF_REGULATED_NEXT_STEPS: (ComponentKind.SELF_REGULATED_NEXT_STEPS,),
    RubricCriterion.PRAISE: (ComponentKind.PRAISE,),
}


class RefinementTermination(str, Enum):
    ALL_PASS = "all_pass"
    ITERATION_LIMIT = "iteration_limit"


class TrajectoryTermination(str, Enum):
    ANSWERED = "answered"
    STEP_LIMIT_FORCED = "step_limit_forced"


class ObservationKind(str, Enum):
    SUCCESS = "success"
    ERROR = "error"


class InteractiveCriterion(str, Enum):
    """Rubric for judging one interactive-agent response."""

    RELEVANCE = "relevance"
    ACTIONABILITY = "actionability"
    TOOL_RELEVANCE = "tool_relevance"
    CORRECTNESS = "correctness"


class BehaviourKind(str, Enum):
    """Fixed axes of the behaviour counterfactual tool, in tie-break order."""

    EFFORT = "effort"
    CONSISTENCY = "consistency"
    PROACTIVITY = "proactivity"
    ASSESSMENT = "assessment"
    REGULARITY = "regularity"


class QuestionCategory(str, Enum):
    """High-level engagement categories for student follow-up questions."""

    TASK = "task"
    SOLUTION = "solution"
    FEEDBACK = "feedback"
    ADDITIONAL_FEEDBACK = "additional_feedback"
    OFF_TOPIC = "off_topic"


class QuestionTheme(str, Enum):
    """Recurring question themes; each belongs to exactly one category."""

    UNDERSTANDING_TASK = "understanding_task"
    REPAIRING = "repairing"
    REASSURANCE = "reassurance"
    REQUESTING_MODEL_ANSWER = "requesting_model_answer"
    INTERPRETING = "interpreting"
    NEGOTIATING = "negotiating"
    ELABORATION = "elaboration"
    REASSESSMENT = "reassessment"
    GENERALISATION = "generalisation"
    SEEKING_FURTHER_IMPROVEMENTS = "seeking_further_improvements"
    USAGE_QUESTIONS = "usage_questions"
    PERSONAL_SUPPORT = "personal_support"
    GREETING_THANKING = "greeting_thanking"

    @property
    def category(self) -> QuestionCategory:
        return _THEME_CATEGORY[self]


_THEME_CATEGORY: dict[QuestionTheme, QuestionCategory] = {
    QuestionTheme.UNDERSTANDING_TASK: QuestionCategory.TASK,
    QuestionTheme.REPAIRING: QuestionCategory.SOLUTION,
    QuestionTheme.REASSURANCE: QuestionCategory.SOLUTION,
    QuestionTheme.REQUESTING_MODEL_ANSWER: QuestionCategory.SOLUTION,
    QuestionTheme.INTERPRETING: QuestionCategory.FEEDBACK,
    QuestionTheme.NEGOTIATING: QuestionCategory.FEEDBACK,
    QuestionTheme.ELABORATION: QuestionCategory.FEEDBACK,
    QuestionTheme.REASSESSMENT: QuestionCategory.FEEDBACK,
    QuestionTheme.GENERALISATION: QuestionCategory.ADDITIONAL_FEEDBACK,
    QuestionTheme.SEEKING_FURTHER_IMPROVEMENTS: QuestionCategory.ADDITIONAL_FEEDBACK,
    QuestionTheme.USAGE_QUESTIONS: QuestionCategory.OFF_TOPIC,
    QuestionTheme.PERSONAL_SUPPORT: QuestionCategory.OFF_TOPIC,
    QuestionTheme.GREETING_THANKING: QuestionCategory.OFF_TOPIC,
}


# ---------------------------------------------------------------------------
# feedback generation records


@dataclass(frozen=True)
class FeedbackContext:
    """One grading context: the question, the student's work, the reference."""

    question_id: str
    question_text: str
    student_solution: str
    reference_solution: str
    course_id: str

    def validate(self) -> list[str]:
        out = []
        if not self.question_text.strip():
            out.append("question_text must be non-empty")
        if not self.reference_solution.strip():
            out.append("reference_solution must be non-empty")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "question_text": self.question_text,
            "student_solution": self.student_solution,
            "reference_solution": self.reference_solution,
            "course_id": self.course_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeedbackContext":
        _check_fields(data, "FeedbackContext", {
            "question_id", "question_text", "student_solution",
            "reference_solution", "course_id",
        })
        ctx = cls(
            question_id=_str_field(data, "question_id", "FeedbackContext"),
            question_text=_str_field(data, "question_text", "FeedbackContext"),
            student_solution=_str_field(data, "student_solution", "FeedbackContext"),
            reference_solution=_str_field(data, "reference_solution", "FeedbackContext"),
            course_id=_str_field(data, "course_id", "FeedbackContext"),
        )
        violations = ctx.validate()
        if violations:
            raise ParseError(f"FeedbackContext: {violations[0]}")
        return ctx


@dataclass(frozen=True)
class FeedbackReport:
    """The five-component structured feedback artifact."""

    components: dict[ComponentKind, str]
    generated_at: str
    origin_iteration: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "components": {kind.value: text for kind, text in self.components.items()},
            "generated_at": self.generated_at,
            "origin_iteration": self.origin_iteration,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeedbackReport":
        _check_fields(data, "FeedbackReport", {"components", "generated_at", "origin_iteration"})
        raw = data["components"]
        if not isinstance(raw, Mapping):
            raise ParseError("FeedbackReport: components must be an object")
        components: dict[ComponentKind, str] = {}
        for name, text in raw.items():
            kind = _enum_value(ComponentKind, name, "FeedbackReport.components")
            if not isinstance(text, str):
                raise ParseError(f"FeedbackReport: component {name} must be a string")
            components[kind] = text
        report = cls(
            components=components,
            generated_at=_str_field(data, "generated_at", "FeedbackReport"),
            origin_iteration=_int_field(data, "origin_iteration", "FeedbackReport", minimum=0),
        )
        violations = validate_report(report)
        if violations:
            raise ParseError(f"FeedbackReport: {violations[0]}")
        return report


def validate_report(report: FeedbackReport) -> list[str]:
    """All invariant violations of a report; empty list means ok."""
    violations = []
    for kind in ComponentKind:
        if kind not in report.components:
            violations.append(f"missing component: {kind.value}")
        elif not report.components[kind].strip():
            violations.append(f"empty component: {kind.value}")
    return violations


@dataclass(frozen=True)
class JudgeVerdict:
    """Per-criterion binary judgments with an explanation for every failure."""

    judgments: dict[RubricCriterion, bool]  # True = pass
    explanations: dict[RubricCriterion, str]
    judged_criteria: frozenset[RubricCriterion]

    @classmethod
    def build(cls, judgments: Mapping[RubricCriterion, bool],
              explanations: Mapping[RubricCriterion, str]) -> "JudgeVerdict":
        verdict = cls(dict(judgments), dict(explanations), frozenset(judgments))
        violations = verdict.validate()
        if violations:
            raise ValueError(f"JudgeVerdict: {violations[0]}")
        return verdict

    def validate(self) -> list[str]:
        out = []
        if set(self.judgments) != set(self.judged_criteria):
            out.append("judgments keys must equal judged_criteria")
        failing = {k for k, passed in self.judgments.items() if not passed}
        for criterion in failing - set(self.explanations):
            out.append(f"missing explanation: {criterion.value}")
        for criterion in set(self.explanations) - failing:
            out.append(f"unexpected explanation for passing criterion: {criterion.value}")
        return out

    def failing(self) -> dict[RubricCriterion, str]:
        """Failing criteria mapped to their deficiency explanations."""
        return {k: self.explanations[k] for k, passed in self.judgments.items() if not passed}

    def all_pass(self) -> bool:
        return all(self.judgments.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "judgments": {
                k.value: ("pass" if passed else "fail") for k, passed in self.judgments.items()
            },
            "explanations": {k.value: text for k, text in self.explanations.items()},
            "judged_criteria": sorted(k.value for k in self.judged_criteria),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JudgeVerdict":
        _check_fields(data, "JudgeVerdict", {"judgments", "explanations", "judged_criteria"})
        raw_judgments = data["judgments"]
        raw_explanations = data["explanations"]
        if not isinstance(raw_judgments, Mapping) or not isinstance(raw_explanations, Mapping):
            raise ParseError("JudgeVerdict: judgments and explanations must be objects")
        judgments: dict[RubricCriterion, bool] = {}
        for name, value in raw_judgments.items():
            criterion = _enum_value(RubricCriterion, name, "JudgeVerdict.judgments")
            if value not in ("pass", "fail"):
                raise ParseError(f"JudgeVerdict: judgment for {name} must be 'pass' or 'fail'")
            judgments[criterion] = value == "pass"
        explanations: dict[RubricCriterion, str] = {}
        for name, text in raw_explanations.items():
            criterion = _enum_value(RubricCriterion, name, "JudgeVerdict.explanations")
            if not isinstance(text, str):
                raise ParseError(f"JudgeVerdict: explanation for {name} must be a string")
            explanations[criterion] = text
        judged = data["judged_criteria"]
        if not isinstance(judged, Sequence) or isinstance(judged, str):
            raise ParseError("JudgeVerdict: judged_criteria must be a list")
        judged_criteria = frozenset(
            _enum_value(RubricCriterion, name, "JudgeVerdict.judged_criteria") for name in judged
        )
        verdict = cls(judgments, explanations, judged_criteria)
        violations = verdict.validate()
        if violations:
            raise ParseError(f"JudgeVerdict: {violations[0]}")
        return verdict


@dataclass(frozen=True)
class RefinementConfig:
    """Loop bounds and targets for judge-guided refinement."""

    max_iterations: int = 20
    target_criteria: frozenset[RubricCriterion] = frozenset(RubricCriterion)
    judge_runs: int = 1

    def validate(self) -> list[str]:
        out = []
        if self.max_iterations < 1:
            out.append("max_iterations must be >= 1")
        if not self.target_criteria:
            out.append("target_criteria must be non-empty")
        if self.judge_runs < 1:
            out.append("judge_runs must be >= 1")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_iterations": self.max_iterations,
            "target_criteria": sorted(k.value for k in self.target_criteria),
            "judge_runs": self.judge_runs,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RefinementConfig":
        _check_fields(data, "RefinementConfig", {"max_iterations", "target_criteria", "judge_runs"})
        raw = data["target_criteria"]
        if not isinstance(raw, Sequence) or isinstance(raw, str):
            raise ParseError("RefinementConfig: target_criteria must be a list")
        config = cls(
            max_iterations=_int_field(data, "max_iterations", "RefinementConfig", minimum=1),
            target_criteria=frozenset(
                _enum_value(RubricCriterion, name, "RefinementConfig.target_criteria")
                for name in raw
            ),
            judge_runs=_int_field(data, "judge_runs", "RefinementConfig", minimum=1),
        )
        violations = config.validate()
        if violations:
            raise ParseError(f"RefinementConfig: {violations[0]}")
        return config


@dataclass(frozen=True)
class RefinementIteration:
    """One generate-or-revise round: the report and the verdict it earned."""

    report: FeedbackReport
    verdict: JudgeVerdict

    def to_dict(self) -> dict[str, Any]:
        return {"report": self.report.to_dict(), "verdict": self.verdict.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RefinementIteration":
        _check_fields(data, "RefinementIteration", {"report", "verdict"})
        return cls(
            report=FeedbackReport.from_dict(_obj_field(data, "report", "RefinementIteration")),
            verdict=JudgeVerdict.from_dict(_obj_field(data, "verdict", "RefinementIteration")),
        )


@dataclass(frozen=True)
class RefinementTrace:
    """The full generate-evaluate-revise history for one context."""

    context_ref: str
    iterations: tuple[RefinementIteration, ...]
    termination: RefinementTermination
    config_snapshot: RefinementConfig

    def validate(self) -> list[str]:
        out = []
        if not 1 <= len(self.iterations) <= self.config_snapshot.max_iterations + 1:
            out.append(
                f"iteration count {len(self.iterations)} outside "
                f"1..{self.config_snapshot.max_iterations + 1}"
            )
        if self.termination is RefinementTermination.ALL_PASS and self.iterations:
            final = self.iterations[-1].verdict
            if not final.all_pass():
                out.append("termination all_pass but final verdict has failures")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "context_ref": self.context_ref,
            "iterations": [it.to_dict() for it in self.iterations],
            "termination": self.termination.value,
            "config_snapshot": self.config_snapshot.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RefinementTrace":
        _check_fields(data, "RefinementTrace",
                      {"context_ref", "iterations", "termination", "config_snapshot"})
        raw = data["iterations"]
        if not isinstance(raw, Sequence) or isinstance(raw, str):
            raise ParseError("RefinementTrace: iterations must be a list")
        trace = cls(
            context_ref=_str_field(data, "context_ref", "RefinementTrace"),
            iterations=tuple(RefinementIteration.from_dict(item) for item in raw),
            termination=_enum_value(
                RefinementTermination, data.get("termination"), "RefinementTrace.termination"
            ),
            config_snapshot=RefinementConfig.from_dict(
                _obj_field(data, "config_snapshot", "RefinementTrace")
            ),
        )
        violations = trace.validate()
        if violations:
            raise ParseError(f"RefinementTrace: {violations[0]}")
        return trace


# ---------------------------------------------------------------------------
# interactive agent records


@dataclass(frozen=True)
class ToolCall:
    """A structured tool invocation as emitted by the model."""

    tool_name: str
    arguments: dict[str, Any]
    raw_text: str

    def validate(self) -> list[str]:
        out = []
        if not self.tool_name:
            out.append("tool_name must be non-empty")
        if not isinstance(self.arguments, dict):
            out.append("arguments must be an object")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"tool_name": self.tool_name, "arguments": self.arguments, "raw_text": self.raw_text}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToolCall":
        _check_fields(data, "ToolCall", {"tool_name", "arguments", "raw_text"})
        arguments = data["arguments"]
        if not isinstance(arguments, dict):
            raise ParseError("ToolCall: arguments must be an object")
        call = cls(
            tool_name=_str_field(data, "tool_name", "ToolCall"),
            arguments=arguments,
            raw_text=_str_field(data, "raw_text", "ToolCall"),
        )
        violations = call.validate()
        if violations:
            raise ParseError(f"ToolCall: {violations[0]}")
        return call


@dataclass(frozen=True)
class FinalAnswer:
    """Terminal action of a trajectory."""

    text: str


@dataclass(frozen=True)
class Observation:
    """Result of executing one tool call: rendered output or an error message."""

    kind: ObservationKind
    payload: str
    tool_name: str

    def validate(self) -> list[str]:
        if self.kind is ObservationKind.ERROR and not self.payload:
            return ["payload must be non-empty for error observations"]
        return []

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "payload": self.payload, "tool_name": self.tool_name}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Observation":
        _check_fields(data, "Observation", {"kind", "payload", "tool_name"})
        obs = cls(
            kind=_enum_value(ObservationKind, data.get("kind"), "Observation.kind"),
            payload=_str_field(data, "payload", "Observation"),
            tool_name=_str_field(data, "tool_name", "Observation"),
        )
        violations = obs.validate()
        if violations:
            raise ParseError(f"Observation: {violations[0]}")
        return obs


@dataclass(frozen=True)
class TrajectoryStep:
    """One reason-act-observe turn of the interactive agent."""

    index: int
    reasoning_summary: str
    action: ToolCall | FinalAnswer
    observation: Observation | None = None

    @property
    def is_final(self) -> bool:
        return isinstance(self.action, FinalAnswer)

    def validate(self) -> list[str]:
        out = []
        if self.index < 0:
            out.append("index must be non-negative")
        if self.is_final and self.observation is not None:
            out.append("a final_answer step must not carry an observation")
        if not self.is_final and self.observation is None:
            out.append("a tool_call step must carry an observation")
        return out

    def to_dict(self) -> dict[str, Any]:
        if isinstance(self.action, ToolCall):
            action: dict[str, Any] = {"type": "tool_call", "tool_call": self.action.to_dict()}
        else:
            action = {"type": "final_answer", "text": self.action.text}
        return {
            "index": self.index,
            "reasoning_summary": self.reasoning_summary,
            "action": action,
            "observation": self.observation.to_dict() if self.observation else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrajectoryStep":
        _check_fields(data, "TrajectoryStep", {"index", "reasoning_summary", "action", "observation"})
        raw_action = _obj_field(data, "action", "TrajectoryStep")
        action_type = raw_action.get("type")
        action: ToolCall | FinalAnswer
        if action_type == "tool_call":
            _check_fields(raw_action, "TrajectoryStep.action", {"type", "tool_call"})
            action = ToolCall.from_dict(_obj_field(raw_action, "tool_call", "TrajectoryStep.action"))
        elif action_type == "final_answer":
            _check_fields(raw_action, "TrajectoryStep.action", {"type", "text"})
            action = FinalAnswer(_str_field(raw_action, "text", "TrajectoryStep.action"))
        else:
            raise ParseError("TrajectoryStep: action.type must be 'tool_call' or 'final_answer'")
        raw_obs = data.get("observation")
        observation = None
        if raw_obs is not None:
            if not isinstance(raw_obs, Mapping):
                raise ParseError("TrajectoryStep: observation must be an object or null")
            observation = Observation.from_dict(raw_obs)
        step = cls(
            index=_int_field(data, "index", "TrajectoryStep", minimum=0),
            reasoning_summary=_str_field(data, "reasoning_summary", "TrajectoryStep"),
            action=action,
            observation=observation,
        )
        violations = step.validate()
        if violations:
            raise ParseError(f"TrajectoryStep: {violations[0]}")
        return step


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop record of one student question through the agent."""

    query: str
    report_ref: str
    steps: tuple[TrajectoryStep, ...]
    final_answer: str
    termination: TrajectoryTermination
    error_count: int

    def validate(self) -> list[str]:
        out = []
        if not self.steps:
            out.append("steps must be non-empty")
            return out
        for step in self.steps[:-1]:
            if step.is_final:
                out.append(f"final_answer on non-terminal step {step.index}")
        last = self.steps[-1]
        if not last.is_final:
            out.append("terminal step must carry the final answer")
        elif last.action.text != self.final_answer:
            out.append("final_answer field must equal the terminal step's answer")
        errors = sum(
            1 for s in self.steps
            if s.observation is not None and s.observation.kind is ObservationKind.ERROR
        )
        if errors != self.error_count:
            out.append(f"error_count {self.error_count} != observed error observations {errors}")
        return out

    def tool_call_count(self) -> int:
        return sum(1 for s in self.steps if not s.is_final)

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "report_ref": self.report_ref,
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
            "termination": self.termination.value,
            "error_count": self.error_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Trajectory":
        _check_fields(data, "Trajectory",
                      {"query", "report_ref", "steps", "final_answer", "termination", "error_count"})
        raw = data["steps"]
        if not isinstance(raw, Sequence) or isinstance(raw, str):
            raise ParseError("Trajectory: steps must be a list")
        trajectory = cls(
            query=_str_field(data, "query", "Trajectory"),
            report_ref=_str_field(data, "report_ref", "Trajectory"),
            steps=tuple(TrajectoryStep.from_dict(item) for item in raw),
            final_answer=_str_field(data, "final_answer", "Trajectory"),
            termination=_enum_value(
                TrajectoryTermination, data.get("termination"), "Trajectory.termination"
            ),
            error_count=_int_field(data, "error_count", "Trajectory", minimum=0),
        )
        violations = trajectory.validate()
        if violations:
            raise ParseError(f"Trajectory: {violations[0]}")
        return trajectory


@dataclass(frozen=True)
class InteractiveVerdict:
    """Binary judgments of one interactive response on the four-axis rubric."""

    judgments: dict[InteractiveCriterion, bool]

    def validate(self) -> list[str]:
        missing = [c.value for c in InteractiveCriterion if c not in self.judgments]
        extra = [c.value for c in self.judgments if c not in set(InteractiveCriterion)]
        out = [f"missing judgment: {name}" for name in missing]
        out.extend(f"unknown judgment: {name}" for name in extra)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "judgments": {
                c.value: ("pass" if passed else "fail") for c, passed in self.judgments.items()
            }
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InteractiveVerdict":
        _check_fields(data, "InteractiveVerdict", {"judgments"})
        raw = _obj_field(data, "judgments", "InteractiveVerdict")
        judgments: dict[InteractiveCriterion, bool] = {}
        for name, value in raw.items():
            criterion = _enum_value(InteractiveCriterion, name, "InteractiveVerdict.judgments")
            if value not in ("pass", "fail"):
                raise ParseError(f"InteractiveVerdict: judgment for {name} must be 'pass' or 'fail'")
            judgments[criterion] = value == "pass"
        verdict = cls(judgments)
        violations = verdict.validate()
        if violations:
            raise ParseError(f"InteractiveVerdict: {violations[0]}")
        return verdict


# ---------------------------------------------------------------------------
# retrieval artifacts


@dataclass(frozen=True)
class Chunk:
    """One retrieval unit: a contiguous span of a markdown document."""

    chunk_id: str
    doc_id: str
    heading_path: tuple[str, ...]
    text: str
    char_span: tuple[int, int]

    def validate(self) -> list[str]:
        out = []
        start, end = self.char_span
        if not 0 <= start < end:
            out.append(f"char_span ({start}, {end}) must satisfy 0 <= start < end")
        if not self.text:
            out.append("text must be non-empty")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "heading_path": list(self.heading_path),
            "text": self.text,
            "char_span": list(self.char_span),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Chunk":
        _check_fields(data, "Chunk", {"chunk_id", "doc_id", "heading_path", "text", "char_span"})
        raw_path = data["heading_path"]
        raw_span = data["char_span"]
        if not isinstance(raw_path, Sequence) or isinstance(raw_path, str):
            raise ParseError("Chunk: heading_path must be a list")
        if (not isinstance(raw_span, Sequence) or isinstance(raw_span, str)
                or len(raw_span) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw_span)):
            raise ParseError("Chunk: char_span must be a [start, end] integer pair")
        chunk = cls(
            chunk_id=_str_field(data, "chunk_id", "Chunk"),
            doc_id=_str_field(data, "doc_id", "Chunk"),
            heading_path=tuple(
                _plain_str(v, "Chunk.heading_path") for v in raw_path
            ),
            text=_str_field(data, "text", "Chunk"),
            char_span=(raw_span[0], raw_span[1]),
        )
        violations = chunk.validate()
        if violations:
            raise ParseError(f"Chunk: {violations[0]}")
        return chunk


@dataclass(frozen=True)
class LexicalStats:
    """Corpus statistics needed by BM25 scoring."""

    doc_freqs: dict[str, int]
    term_freqs: dict[str, dict[str, int]]
    lengths: dict[str, int]
    avg_length: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_freqs": self.doc_freqs,
            "term_freqs": self.term_freqs,
            "lengths": self.lengths,
            "avg_length": self.avg_length,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LexicalStats":
        _check_fields(data, "LexicalStats", {"doc_freqs", "term_freqs", "lengths", "avg_length"})
        avg = data["avg_length"]
        if not isinstance(avg, (int, float)) or isinstance(avg, bool):
            raise ParseError("LexicalStats: avg_length must be a number")
        return cls(
            doc_freqs=dict(_obj_field(data, "doc_freqs", "LexicalStats")),
            term_freqs={k: dict(v) for k, v in _obj_field(data, "term_freqs", "LexicalStats").items()},
            lengths=dict(_obj_field(data, "lengths", "LexicalStats")),
            avg_length=float(avg),
        )


@dataclass(frozen=True)
class CorpusIndex:
    """Immutable chunked corpus with lexical statistics and unit vectors."""

    chunks: tuple[Chunk, ...]
    lexical_stats: LexicalStats
    vectors: dict[str, tuple[float, ...]]
    embedder_id: str

    def validate(self) -> list[str]:
        out = []
        ids = [c.chunk_id for c in self.chunks]
        if len(set(ids)) != len(ids):
            out.append("chunk ids must be unique")
        missing = [cid for cid in ids if cid not in self.vectors]
        if missing:
            out.append(f"chunk without vector: {missing[0]}")
        dims = {len(v) for v in self.vectors.values()}
        if len(dims) > 1:
            out.append(f"vectors have mixed dimensions: {sorted(dims)}")
        for cid, vec in self.vectors.items():
            norm = sum(x * x for x in vec) ** 0.5
            if abs(norm - 1.0) > 1e-6:
                out.append(f"vector for {cid} has norm {norm:.8f}, expected 1")
                break
        return out

    def chunk_by_id(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    @cached_property
    def _by_id(self) -> dict[str, Chunk]:
        return {c.chunk_id: c for c in self.chunks}

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunks": [c.to_dict() for c in self.chunks],
            "lexical_stats": self.lexical_stats.to_dict(),
            "vectors": {cid: list(vec) for cid, vec in self.vectors.items()},
            "embedder_id": self.embedder_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorpusIndex":
        _check_fields(data, "CorpusIndex", {"chunks", "lexical_stats", "vectors", "embedder_id"})
        raw_chunks = data["chunks"]
        if not isinstance(raw_chunks, Sequence) or isinstance(raw_chunks, str):
            raise ParseError("CorpusIndex: chunks must be a list")
        raw_vectors = _obj_field(data, "vectors", "CorpusIndex")
        vectors: dict[str, tuple[float, ...]] = {}
        for cid, vec in raw_vectors.items():
            if not isinstance(vec, Sequence) or isinstance(vec, str):
                raise ParseError(f"CorpusIndex: vector for {cid} must be a list")
            vectors[cid] = tuple(float(x) for x in vec)
        index = cls(
            chunks=tuple(Chunk.from_dict(item) for item in raw_chunks),
            lexical_stats=LexicalStats.from_dict(_obj_field(data, "lexical_stats", "CorpusIndex")),
            vectors=vectors,
            embedder_id=_str_field(data, "embedder_id", "CorpusIndex"),
        )
        violations = index.validate()
        if violations:
            raise ParseError(f"CorpusIndex: {violations[0]}")
        return index


@dataclass(frozen=True)
class TopicGraph:
    """Directed acyclic prerequisite map: edge (prerequisite, dependent)."""

    topics: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def validate(self) -> list[str]:
        out = []
        for pre, dep in sorted(self.edges):
            if pre not in self.topics or dep not in self.topics:
                out.append(f"edge ({pre}, {dep}) references unknown topic")
        if not out and self._has_cycle():
            out.append("graph contains a cycle")
        return out

    def _has_cycle(self) -> bool:
        indegree = {t: 0 for t in self.topics}
        for _, dep in self.edges:
            indegree[dep] += 1
        queue = [t for t, d in indegree.items() if d == 0]
        seen = 0
        while queue:
            node = queue.pop()
            seen += 1
            for pre, dep in self.edges:
                if pre == node:
                    indegree[dep] -= 1
                    if indegree[dep] == 0:
                        queue.append(dep)
        return seen != len(self.topics)

    def prerequisites_of(self, topic: str) -> list[str]:
        return sorted(pre for pre, dep in self.edges if dep == topic)

    def to_dict(self) -> dict[str, Any]:
        return {
            "topics": sorted(self.topics),
            "edges": [list(edge) for edge in sorted(self.edges)],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TopicGraph":
        _check_fields(data, "TopicGraph", {"topics", "edges"})
        raw_topics = data["topics"]
        raw_edges = data["edges"]
        if not isinstance(raw_topics, Sequence) or isinstance(raw_topics, str):
            raise ParseError("TopicGraph: topics must be a list")
        if not isinstance(raw_edges, Sequence) or isinstance(raw_edges, str):
            raise ParseError("TopicGraph: edges must be a list")
        edges = set()
        for edge in raw_edges:
            if (not isinstance(edge, Sequence) or isinstance(edge, str) or len(edge) != 2):
                raise ParseError("TopicGraph: each edge must be a [prerequisite, dependent] pair")
            edges.add((_plain_str(edge[0], "TopicGraph.edges"),
                       _plain_str(edge[1], "TopicGraph.edges")))
        graph = cls(
            topics=frozenset(_plain_str(t, "TopicGraph.topics") for t in raw_topics),
            edges=frozenset(edges),
        )
        violations = graph.validate()
        if violations:
            raise ParseError(f"TopicGraph: {violations[0]}")
        return graph


@dataclass(frozen=True)
class BehaviourDimension:
    """One behavioural axis with its matching descriptor and answer template."""

    kind: BehaviourKind
    descriptor: str
    explanation_template: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.kind.value,
            "descriptor": self.descriptor,
            "explanation_template": self.explanation_template,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BehaviourDimension":
        _check_fields(data, "BehaviourDimension", {"name", "descriptor", "explanation_template"})
        return cls(
            kind=_enum_value(BehaviourKind, data.get("name"), "BehaviourDimension.name"),
            descriptor=_str_field(data, "descriptor", "BehaviourDimension"),
            explanation_template=_str_field(data, "explanation_template", "BehaviourDimension"),
        )


# ---------------------------------------------------------------------------
# analytics inputs


@dataclass(frozen=True)
class QuestionLabel:
    """A categorised student question; theme fixes the category when present."""

    category: QuestionCategory
    theme: QuestionTheme | None = None

    def validate(self) -> list[str]:
        if self.theme is not None and self.theme.category is not self.category:
            return [f"theme {self.theme.value} belongs to category {self.theme.category.value}"]
        return []

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.value,
            "theme": self.theme.value if self.theme else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QuestionLabel":
        _check_fields(data, "QuestionLabel", {"category"}, optional={"theme"})
        theme = None
        if data.get("theme") is not None:
            theme = _enum_value(QuestionTheme, data["theme"], "QuestionLabel.theme")
        label = cls(
            category=_enum_value(QuestionCategory, data.get("category"), "QuestionLabel.category"),
            theme=theme,
        )
        violations = label.validate()
        if violations:
            raise ParseError(f"QuestionLabel: {violations[0]}")
        return label


@dataclass(frozen=True)
class SteeringRecord:
    """Whether one grading-rubric component was highlighted and later discussed."""

    student_id: str
    component: str
    highlighted: bool
    discussed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "student_id": self.student_id,
            "component": self.component,
            "highlighted": self.highlighted,
            "discussed": self.discussed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SteeringRecord":
        _check_fields(data, "SteeringRecord", {"student_id", "component", "highlighted", "discussed"})
        return cls(
            student_id=_str_field(data, "student_id", "SteeringRecord"),
            component=_str_field(data, "component", "SteeringRecord"),
            highlighted=_bool_field(data, "highlighted", "SteeringRecord"),
            discussed=_bool_field(data, "discussed", "SteeringRecord"),
        )


# ---------------------------------------------------------------------------
# sessions


@dataclass(frozen=True)
class Session:
    """One student working session: context, transcript, report, conversations."""

    session_id: str
    context: FeedbackContext
    transcript: str | None = None
    report: FeedbackReport | None = None
    refinement_trace_ref: str | None = None
    trajectories: tuple[str, ...] = ()
    created_at: str = field(default_factory=now_rfc3339)

    def validate(self) -> list[str]:
        if self.trajectories and self.report is None:
            return ["trajectories present without a report"]
        return []

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "context": self.context.to_dict(),
            "transcript": self.transcript,
            "report": self.report.to_dict() if self.report else None,
            "refinement_trace_ref": self.refinement_trace_ref,
            "trajectories": list(self.trajectories),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Session":
        _check_fields(data, "Session", {
            "session_id", "context", "transcript", "report",
            "refinement_trace_ref", "trajectories", "created_at",
        })
        raw_trajectories = data["trajectories"]
        if not isinstance(raw_trajectories, Sequence) or isinstance(raw_trajectories, str):
            raise ParseError("Session: trajectories must be a list")
        transcript = data.get("transcript")
        if transcript is not None and not isinstance(transcript, str):
            raise ParseError("Session: transcript must be a string or null")
        trace_ref = data.get("refinement_trace_ref")
        if trace_ref is not None and not isinstance(trace_ref, str):
            raise ParseError("Session: refinement_trace_ref must be a string or null")
        report = None
        if data.get("report") is not None:
            report = FeedbackReport.from_dict(_obj_field(data, "report", "Session"))
        session = cls(
            session_id=_str_field(data, "session_id", "Session"),
            context=FeedbackContext.from_dict(_obj_field(data, "context", "Session")),
            transcript=transcript,
            report=report,
            refinement_trace_ref=trace_ref,
            trajectories=tuple(_plain_str(t, "Session.trajectories") for t in raw_trajectories),
            created_at=_str_field(data, "created_at", "Session"),
        )
        violations = session.validate()
        if violations:
            raise ParseError(f"Session: {violations[0]}")
        return session


# ---------------------------------------------------------------------------
# canonical JSON helpers


def to_canonical_json(value: Any) -> str:
    """Canonical document form: sorted keys, compact separators, raw UTF-8."""
    payload = value.to_dict() if hasattr(value, "to_dict") else value
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def from_json(cls: type, text: str) -> Any:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{cls.__name__}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{cls.__name__}: document must be a JSON object")
    return cls.from_dict(data)


# ---------------------------------------------------------------------------
# field extraction


def _check_fields(data: Mapping[str, Any], ctx: str, required: set[str],
                  optional: set[str] = frozenset()) -> None:
    if not isinstance(data, Mapping):
        raise ParseError(f"{ctx}: expected an object")
    for key in data:
        if key not in required and key not in optional:
            raise ParseError(f"{ctx}: unknown field: {key}")
    for key in sorted(required):
        if key not in data:
            raise ParseError(f"{ctx}: missing field: {key}")


def _str_field(data: Mapping[str, Any], key: str, ctx: str) -> str:
    value = data.get(key)
    if not isinstance(value, str):
        raise ParseError(f"{ctx}: {key} must be a string")
    return value


def _plain_str(value: Any, ctx: str) -> str:
    if not isinstance(value, str):
        raise ParseError(f"{ctx}: expected a string entry")
    return value


def _int_field(data: Mapping[str, Any], key: str, ctx: str, minimum: int | None = None) -> int:
    value = data.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{ctx}: {key} must be an integer")
    if minimum is not None and value < minimum:
        raise ParseError(f"{ctx}: {key} must be >= {minimum}")
    return value


def _bool_field(data: Mapping[str, Any], key: str, ctx: str) -> bool:
    value = data.get(key)
    if not isinstance(value, bool):
        raise ParseError(f"{ctx}: {key} must be a boolean")
    return value


def _obj_field(data: Mapping[str, Any], key: str, ctx: str) -> Mapping[str, Any]:
    value = data.get(key)
    if not isinstance(value, Mapping):
        raise ParseError(f"{ctx}: {key} must be an object")
    return value


def _enum_value(enum_cls: type, name: Any, ctx: str):
    try:
        return enum_cls(name)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ParseError(f"{ctx}: unknown value {name!r} (expected one of: {valid})") from None
