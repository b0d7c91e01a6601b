"""Evaluation statistics and interaction metrics.

Pure, deterministic functions: chance-corrected agreement, the exact McNemar
test on discordant pairs, Benjamini-Hochberg step-up adjustment, the Wilcoxon
signed-rank test (exact with midranks up to n = 25, tie-corrected normal
approximation with continuity correction above), refinement convergence
curves, trajectory step metrics, feedback-steering proportions, and
per-student question-category prevalence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

from .domain import (
    QuestionCategory,
    RefinementTrace,
    RubricCriterion,
    Trajectory,
)

WILCOXON_EXACT_LIMIT = 25
NOMINAL_STEPS = 2  # one tool call plus one answer turn


class AnalyticsError(ValueError):
    """Invalid analytics input."""


# ---------------------------------------------------------------------------
# agreement and significance


def cohens_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Chance-corrected inter-rater agreement over categorical labels."""
    if len(labels_a) != len(labels_b):
        raise AnalyticsError(
            f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}")
    n = len(labels_a)
    if n == 0:
        raise AnalyticsError("label lists must be non-empty")
    observed = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    categories = set(labels_a) | set(labels_b)
    counts_a = {c: 0 for c in categories}
    counts_b = {c: 0 for c in categories}
    for a in labels_a:
        counts_a[a] += 1
    for b in labels_b:
        counts_b[b] += 1
    expected = sum(counts_a[c] * counts_b[c] for c in categories) / (n * n)
    if expected == 1.0:
        if observed == 1.0:
            return 1.0
        raise AnalyticsError("degenerate marginals: chance agreement is 1")
    return (observed - expected) / (1.0 - expected)


def mcnemar_exact(b: int, c: int) -> float:
    """Two-sided exact McNemar p-value from the two discordant-pair counts."""
    if b < 0 or c < 0:
        raise AnalyticsError("discordant counts must be non-negative")
    n = b + c
    if n == 0:
        return 1.0
    tail = sum(math.comb(n, i) for i in range(min(b, c) + 1))
    return min(1.0, 2.0 * tail / 2 ** n)


def bh_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, in the original order."""
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise AnalyticsError(f"p-value out of range: {p}")
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted_sorted = [0.0] * m
    running = 1.0
    for position in range(m - 1, -1, -1):
        raw = p_values[order[position]] * m / (position + 1)
        running = min(running, raw)
        adjusted_sorted[position] = running
    adjusted = [0.0] * m
    for position, original_index in enumerate(order):
        adjusted[original_index] = adjusted_sorted[position]
    return adjusted


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        midrank = (i + j + 2) / 2  # ranks are 1-based
        for position in range(i, j + 1):
            ranks[order[position]] = midrank
        i = j + 1
    return ranks


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-sided paired Wilcoxon signed-rank p-value.

    Zero differences are dropped.  With n_eff <= 25 the p-value is exact over
    all 2^n sign assignments of the observed (mid)ranks, computed via the
    rank-sum distribution; beyond that a tie-corrected normal approximation
    with continuity correction is used.
    """
    if len(x) != len(y):
        raise AnalyticsError(f"paired samples differ in length: {len(x)} vs {len(y)}")
    if not x:
        raise AnalyticsError("paired samples must be non-empty")
    diffs = [a - b for a, b in zip(x, y) if a != b]
    n = len(diffs)
    if n == 0:
        return 1.0
    ranks = _midranks([abs(d) for d in diffs])
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    w = min(w_plus, w_minus)
    if n <= WILCOXON_EXACT_LIMIT:
        return _wilcoxon_exact(ranks, w)
    return _wilcoxon_normal(diffs, ranks, w)


def _wilcoxon_exact(ranks: Sequence[float], w: float) -> float:
    # doubled ranks are integers even with .5 midranks
    doubled = [round(2 * r) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for rank2 in doubled:
        for value in range(total, rank2 - 1, -1):
            if counts[value - rank2]:
                counts[value] += counts[value - rank2]
    w2 = round(2 * w)
    low_tail = sum(counts[: w2 + 1])
    high_tail = sum(counts[total - w2:])
    return min(1.0, (low_tail + high_tail) / 2 ** len(ranks))


def _wilcoxon_normal(diffs: Sequence[float], ranks: Sequence[float], w: float) -> float:
    n = len(diffs)
    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    tie_groups: dict[float, int] = {}
    for d in diffs:
        tie_groups[abs(d)] = tie_groups.get(abs(d), 0) + 1
    variance -= sum(t ** 3 - t for t in tie_groups.values()) / 48.0
    if variance <= 0:
        return 1.0
    z = (w - mean + 0.5) / math.sqrt(variance)
    return min(1.0, math.erfc(-z / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# refinement convergence


@dataclass(frozen=True)
class ConvergencePoint:
    criterion: RubricCriterion
    iteration: int
    pass_rate: float
    n: int

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion.value,
            "iteration": self.iteration,
            "pass_rate": self.pass_rate,
            "n": self.n,
        }


def _criterion_status(trace: RefinementTrace, criterion: RubricCriterion,
                      iteration: int) -> bool:
    """Latest judgment of a criterion at or before an iteration, carried forward."""
    status: bool | None = None
    last = min(iteration, len(trace.iterations) - 1)
    for it in trace.iterations[: last + 1]:
        if criterion in it.verdict.judged_criteria:
            status = it.verdict.judgments[criterion]
    if status is None:
        raise AnalyticsError(
            f"criterion {criterion.value} absent from judged set of trace "
            f"{trace.context_ref!r}")
    return status


def convergence_curve(traces: Sequence[RefinementTrace],
                      criteria: frozenset[RubricCriterion],
                      max_iteration: int | None = None) -> list[ConvergencePoint]:
    """Per-criterion pass rate by iteration with terminal carry-forward."""
    if not traces:
        raise AnalyticsError("traces must be non-empty")
    if not criteria:
        raise AnalyticsError("criteria must be non-empty")
    horizon = (max_iteration if max_iteration is not None
               else max(len(t.iterations) for t in traces) - 1)
    n = len(traces)
    points = []
    for criterion in [c for c in RubricCriterion if c in criteria]:
        for iteration in range(horizon + 1):
            passes = sum(
                1 for trace in traces if _criterion_status(trace, criterion, iteration))
            points.append(ConvergencePoint(
                criterion=criterion, iteration=iteration, pass_rate=passes / n, n=n))
    return points


# ---------------------------------------------------------------------------
# interaction metrics


@dataclass(frozen=True)
class StepMetrics:
    mean_steps: float
    mean_tool_calls: float
    extra_step_rate: float
    n: int

    def to_dict(self) -> dict:
        return {
            "mean_steps": self.mean_steps,
            "mean_tool_calls": self.mean_tool_calls,
            "extra_step_rate": self.extra_step_rate,
            "n": self.n,
        }


def step_metrics(trajectories: Sequence[Trajectory],
                 include_final_answer_turn: bool = True) -> StepMetrics:
    """Mean steps, mean tool calls and the share of queries beyond the nominal
    two-step trajectory.

    By default a step is any loop turn including the terminal answer turn, so
    the nominal call-then-answer trajectory counts 2; set
    ``include_final_answer_turn=False`` to count tool turns only.
    """
    if not trajectories:
        raise AnalyticsError("trajectories must be non-empty")
    counts = []
    tool_calls = []
    for trajectory in trajectories:
        steps = len(trajectory.steps)
        if not include_final_answer_turn:
            steps -= 1
        counts.append(steps)
        tool_calls.append(trajectory.tool_call_count())
    n = len(counts)
    extra = sum(1 for c in counts if c > NOMINAL_STEPS)
    return StepMetrics(
        mean_steps=sum(counts) / n,
        mean_tool_calls=sum(tool_calls) / n,
        extra_step_rate=extra / n,
        n=n,
    )


def steering_table(records: Sequence) -> dict[str, dict[str, float | None]]:
    """Discussion rates per rubric component, split by highlighted status.

    Returns ``{component: {rate_highlighted, rate_not_highlighted}}`` plus an
    ``All`` row; an empty stratum is reported as ``None`` (undefined), never 0.
    """
    if not records:
        raise AnalyticsError("records must be non-empty")
    components: list[str] = []
    for record in records:
        if record.component not in components:
            components.append(record.component)

    def rate(subset) -> float | None:
        if not subset:
            return None
        return sum(1 for r in subset if r.discussed) / len(subset)

    table: dict[str, dict[str, float | None]] = {}
    for component in components + ["All"]:
        pool = [r for r in records if component == "All" or r.component == component]
        table[component] = {
            "rate_highlighted": rate([r for r in pool if r.highlighted]),
            "rate_not_highlighted": rate([r for r in pool if not r.highlighted]),
        }
    return table


def category_prevalence(
        annotations: Sequence[tuple[str, QuestionCategory]]) -> dict[QuestionCategory, float]:
    """Fraction of distinct students with at least one question per category."""
    if not annotations:
        raise AnalyticsError("annotations must be non-empty")
    students = {student_id for student_id, _ in annotations}
    prevalence: dict[QuestionCategory, float] = {}
    for category in QuestionCategory:
        asked = {student_id for student_id, cat in annotations if cat is category}
        prevalence[category] = len(asked) / len(students)
    return prevalence
