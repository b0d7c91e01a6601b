"""Judge-guided feedback generation.

The loop: generate a five-component report, have a judge return binary
verdicts per rubric criterion with targeted deficiency explanations, then
regenerate only the components governed by failing criteria, preserving the
rest byte-for-byte, until every target criterion passes or the iteration
limit is reached.

Criteria judged as passing are removed from later judge requests and never
re-sent for regeneration, which keeps the loop monotone even under noisy
judges.  Governance map: the coverage/correctness pairs govern the current
state and task-next-steps components respectively, the three remaining
criteria govern their namesake components, and clarity governs the whole
report.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .domain import (
    ComponentKind,
    FeedbackContext,
    FeedbackReport,
    JudgeVerdict,
    RefinementConfig,
    RefinementIteration,
    RefinementTermination,
    RefinementTrace,
    RubricCriterion,
    now_rfc3339,
)
from .gateway import (
    BackendDescriptor,
    ChatMessage,
    DEFAULT_GENERATION_PARAMS,
    DEFAULT_JUDGE_PARAMS,
    GatewayError,
    GenerationParams,
    VerdictParseError,
    complete_chat,
    parse_judge_verdict,
)
from .prompts import render_template

GENERATION_PARSE_RETRIES = 1
JUDGE_PARSE_RETRIES = 2

CRITERION_GLOSSES: dict[RubricCriterion, str] = {
    RubricCriterion.CLARITY: "the report is clear, well-organised and free of jargon",
    RubricCriterion.CURRENT_STATE_COVERAGE: "the current-state section is addressed at all",
    RubricCriterion.CURRENT_STATE_CORRECTNESS:
        "the current-state diagnosis is accurate and specific to this solution",
    RubricCriterion.TASK_NEXT_STEPS_COVERAGE: "the task-next-steps section is addressed at all",
    RubricCriterion.TASK_NEXT_STEPS_CORRECTNESS:
        "the recommended task-level steps are accurate and specific to this solution",
    RubricCriterion.STRATEGY_NEXT_STEPS: "strategy-level guidance is present and useful",
    RubricCriterion.SELF_REGULATED_NEXT_STEPS:
        "self-regulation support (plan/monitor/check prompts) is present and useful",
    RubricCriterion.PRAISE: "effective aspects of the work are acknowledged",
}


class FeedbackLoopError(RuntimeError):
    """Base class for feedback-loop failures."""


class GenerationError(FeedbackLoopError):
    """The generation model never produced all required sections."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class JudgeError(FeedbackLoopError):
    """No judge run produced a parseable verdict."""


class RefinementError(FeedbackLoopError):
    """A refine() run failed; carries the iterations completed before failure."""

    def __init__(self, message: str, context_ref: str,
                 partial_iterations: tuple[RefinementIteration, ...]):
        super().__init__(message)
        self.context_ref = context_ref
        self.partial_iterations = partial_iterations


class _SectionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# prompt assembly


def render_report_block(report: FeedbackReport) -> str:
    """Report rendered with its section sentinels, for prompts and judging."""
    parts = []
    for kind in ComponentKind:
        parts.append(f"[[{kind.value}]]\n{report.components.get(kind, '')}")
    return "\n\n".join(parts)


def _criteria_block(criteria: frozenset[RubricCriterion]) -> str:
    ordered = [c for c in RubricCriterion if c in criteria]
    return "\n".join(f"- {c.value}: {CRITERION_GLOSSES[c]}" for c in ordered)


def governed_components(failing: frozenset[RubricCriterion]) -> tuple[ComponentKind, ...]:
    """Components eligible for replacement, in report order."""
    governed: set[ComponentKind] = set()
    for criterion in failing:
        governed.update(criterion.governed_components)
    return tuple(kind for kind in ComponentKind if kind in governed)


def parse_report_sections(text: str,
                          required: tuple[ComponentKind, ...]) -> dict[ComponentKind, str]:
    """Split a model response at ``[[section]]`` sentinel lines.

    Every required section must be present with non-empty text; unknown
    sentinels are ignored so models may echo context without breaking parsing.
    """
    import re

    sections: dict[ComponentKind, str] = {}
    matches = list(re.finditer(r"^\[\[([a-z_]+)\]\][ \t]*$", text, re.MULTILINE))
    for i, match in enumerate(matches):
        name = match.group(1)
        try:
            kind = ComponentKind(name)
        except ValueError:
            continue
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        sections[kind] = text[match.end():end].strip()
    missing = [k.value for k in required if k not in sections or not sections[k]]
    if missing:
        raise _SectionError(f"missing or empty section(s): {', '.join(missing)}")
    return {kind: sections[kind] for kind in required}


def _generate_sections(backend: BackendDescriptor, prompt: str,
                       required: tuple[ComponentKind, ...],
                       params: GenerationParams,
                       parse_retries: int) -> dict[ComponentKind, str]:
    messages = [ChatMessage(role="user", content=prompt)]
    last_text = ""
    last_defect = "no attempt made"
    for attempt in range(parse_retries + 1):
        turn = complete_chat(backend, messages, params)
        last_text = turn.text
        try:
            return parse_report_sections(turn.text, required)
        except _SectionError as exc:
            last_defect = str(exc)
            if attempt < parse_retries:
                messages = messages + [ChatMessage(
                    role="system",
                    content=f"Your previous response was invalid: {exc}. "
                            "Respond again including every required section sentinel.",
                )]
    raise GenerationError(
        f"response still unparseable after {parse_retries + 1} attempts ({last_defect})",
        raw_text=last_text,
    )


# ---------------------------------------------------------------------------
# operations


def generate_report(ctx: FeedbackContext, backend: BackendDescriptor,
                    prompt_template: str = "feedback_generation",
                    template_root: Path | str | None = None,
                    params: GenerationParams = DEFAULT_GENERATION_PARAMS,
                    parse_retries: int = GENERATION_PARSE_RETRIES) -> FeedbackReport:
    """Initial structured report: one model call parsed into five components."""
    prompt = render_template(
        prompt_template, template_root,
        question=ctx.question_text,
        student_solution=ctx.student_solution or "(no solution submitted)",
        reference_solution=ctx.reference_solution,
    )
    sections = _generate_sections(backend, prompt, tuple(ComponentKind), params, parse_retries)
    return FeedbackReport(components=sections, generated_at=now_rfc3339(), origin_iteration=0)


def judge_report(ctx: FeedbackContext, report: FeedbackReport,
                 criteria: frozenset[RubricCriterion], backend: BackendDescriptor,
                 judge_runs: int = 1,
                 prompt_template: str = "feedback_judge",
                 template_root: Path | str | None = None,
                 params: GenerationParams = DEFAULT_JUDGE_PARAMS,
                 parse_retries: int = JUDGE_PARSE_RETRIES) -> JudgeVerdict:
    """Aggregate verdict over ``judge_runs`` independent judge calls.

    Per criterion the final judgment is the majority vote with ties counted
    as fail (conservative: keeps refinement pressure on).  The explanation
    for a failing criterion comes from the first run that failed it.  Runs
    whose output stays unparseable after the configured re-asks are dropped;
    if every run is dropped a :class:`JudgeError` is raised.
    """
    if not criteria:
        raise ValueError("criteria must be non-empty")
    prompt = render_template(
        prompt_template, template_root,
        question=ctx.question_text,
        student_solution=ctx.student_solution or "(no solution submitted)",
        reference_solution=ctx.reference_solution,
        report_block=render_report_block(report),
        criteria_block=_criteria_block(criteria),
    )
    runs: list[JudgeVerdict] = []
    for _ in range(judge_runs):
        verdict = _one_judge_run(backend, prompt, criteria, params, parse_retries)
        if verdict is not None:
            runs.append(verdict)
    if not runs:
        raise JudgeError(f"all {judge_runs} judge run(s) were unparseable")
    judgments: dict[RubricCriterion, bool] = {}
    explanations: dict[RubricCriterion, str] = {}
    for criterion in criteria:
        pass_votes = sum(1 for run in runs if run.judgments[criterion])
        passed = pass_votes * 2 > len(runs)
        judgments[criterion] = passed
        if not passed:
            first_fail = next(run for run in runs if not run.judgments[criterion])
            explanations[criterion] = first_fail.explanations[criterion]
    return JudgeVerdict.build(judgments, explanations)


def _one_judge_run(backend: BackendDescriptor, prompt: str,
                   criteria: frozenset[RubricCriterion],
                   params: GenerationParams, parse_retries: int) -> JudgeVerdict | None:
    messages = [ChatMessage(role="user", content=prompt)]
    for attempt in range(parse_retries + 1):
        turn = complete_chat(backend, messages, params)
        try:
            return parse_judge_verdict(turn.text, criteria)
        except VerdictParseError as exc:
            if attempt < parse_retries:
                messages = messages + [ChatMessage(
                    role="system",
                    content=f"Your previous response could not be parsed: {exc}. "
                            "Respond again with a single judge_verdict block "
                            "containing every listed criterion.",
                )]
    return None


def regenerate_components(ctx: FeedbackContext, report: FeedbackReport,
                          failing: dict[RubricCriterion, str], backend: BackendDescriptor,
                          prompt_template: str = "feedback_regeneration",
                          template_root: Path | str | None = None,
                          params: GenerationParams = DEFAULT_GENERATION_PARAMS,
                          parse_retries: int = GENERATION_PARSE_RETRIES) -> FeedbackReport:
    """Replace exactly the components governed by the failing criteria.

    The prompt carries only the failing components' current texts and the
    judge's explanations; all other components are copied through unchanged.
    """
    if not failing:
        raise ValueError("failing must be non-empty")
    governed = governed_components(frozenset(failing))
    blocks = []
    for kind in governed:
        reasons = [
            f"- ({criterion.value}) {explanation}"
            for criterion, explanation in sorted(failing.items(), key=lambda kv: kv[0].value)
            if kind in criterion.governed_components
        ]
        blocks.append(
            f"[[{kind.value}]]\ncurrent text:\n{report.components.get(kind, '')}\n"
            f"judged deficient because:\n" + "\n".join(reasons)
        )
    prompt = render_template(
        prompt_template, template_root,
        question=ctx.question_text,
        student_solution=ctx.student_solution or "(no solution submitted)",
        reference_solution=ctx.reference_solution,
        failing_block="\n\n".join(blocks),
        required_sections="\n".join(f"[[{kind.value}]]" for kind in governed),
    )
    sections = _generate_sections(backend, prompt, governed, params, parse_retries)
    components = dict(report.components)
    components.update(sections)
    return FeedbackReport(
        components=components,
        generated_at=now_rfc3339(),
        origin_iteration=report.origin_iteration + 1,
    )


def refine(ctx: FeedbackContext, config: RefinementConfig,
           gen_backend: BackendDescriptor, judge_backend: BackendDescriptor,
           template_root: Path | str | None = None,
           gen_params: GenerationParams = DEFAULT_GENERATION_PARAMS,
           judge_params: GenerationParams = DEFAULT_JUDGE_PARAMS) -> RefinementTrace:
    """Run the full generate-evaluate-revise loop for one context.

    Iteration 0 generates and judges on all target criteria; each further
    iteration regenerates the failing components and re-judges only the
    criteria that have not passed yet.  Stops when nothing is left failing
    (``all_pass``) or after ``max_iterations`` regenerations
    (``iteration_limit``).
    """
    violations = config.validate()
    if violations:
        raise ValueError(f"invalid RefinementConfig: {violations[0]}")
    iterations: list[RefinementIteration] = []

    def _judge(report: FeedbackReport, criteria: frozenset[RubricCriterion]) -> JudgeVerdict:
        return judge_report(ctx, report, criteria, judge_backend,
                            judge_runs=config.judge_runs, template_root=template_root,
                            params=judge_params)

    try:
        report = generate_report(ctx, gen_backend, template_root=template_root, params=gen_params)
        remaining = frozenset(config.target_criteria)
        verdict = _judge(report, remaining)
        iterations.append(RefinementIteration(report, verdict))
        remaining = frozenset(verdict.failing())
        for _ in range(config.max_iterations):
            if not remaining:
                break
            report = regenerate_components(
                ctx, report, iterations[-1].verdict.failing(), gen_backend,
                template_root=template_root, params=gen_params,
            )
            verdict = _judge(report, remaining)
            iterations.append(RefinementIteration(report, verdict))
            remaining = frozenset(verdict.failing())
    except (FeedbackLoopError, GatewayError) as exc:
        raise RefinementError(
            f"refinement failed at iteration {len(iterations)}: {exc}",
            context_ref=ctx.question_id,
            partial_iterations=tuple(iterations),
        ) from exc
    termination = (RefinementTermination.ALL_PASS if not remaining
                   else RefinementTermination.ITERATION_LIMIT)
    return RefinementTrace(
        context_ref=ctx.question_id,
        iterations=tuple(iterations),
        termination=termination,
        config_snapshot=config,
    )


def deployment_preset() -> RefinementConfig:
    """Low-latency classroom preset: one targeted correctness iteration."""
    return RefinementConfig(
        max_iterations=1,
        target_criteria=frozenset({
            RubricCriterion.CURRENT_STATE_CORRECTNESS,
            RubricCriterion.TASK_NEXT_STEPS_CORRECTNESS,
        }),
        judge_runs=1,
    )
