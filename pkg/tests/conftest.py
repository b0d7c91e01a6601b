"""Shared fixtures: canned reports, scripted responses, and a small course."""

from __future__ import annotations

import json

import pytest

from formative.domain import (
    BehaviourDimension,
    BehaviourKind,
    ComponentKind,
    FeedbackContext,
    FeedbackReport,
    TopicGraph,
    now_rfc3339,
)
from formative.gateway import ScriptedExchange, scripted_backend
from formative.retrieval import fake_embedder

DEFAULT_COMPONENT_TEXTS = {
    ComponentKind.CURRENT_STATE: "You set up the induction skeleton but the basis case is missing.",
    ComponentKind.TASK_NEXT_STEPS: "Add the basis case for a single node and verify it explicitly.",
    ComponentKind.STRATEGY_NEXT_STEPS: "Enumerate the base constructors before the inductive ones.",
    ComponentKind.SELF_REGULATED_NEXT_STEPS: "Check each proof part against the definition before submitting.",
    ComponentKind.PRAISE: "Your inductive hypothesis is stated cleanly.",
}

ALL_PASS = {
    "clarity": True,
    "current_state_coverage": True,
    "current_state_correctness": True,
    "task_next_steps_coverage": True,
    "task_next_steps_correctness": True,
    "strategy_next_steps": True,
    "self_regulated_next_steps": True,
    "praise": True,
}


def make_report(overrides: dict[ComponentKind, str] | None = None,
                origin_iteration: int = 0) -> FeedbackReport:
    components = dict(DEFAULT_COMPONENT_TEXTS)
    if overrides:
        components.update(overrides)
    return FeedbackReport(components=components, generated_at=now_rfc3339(),
                          origin_iteration=origin_iteration)


def section_text(components: dict[ComponentKind, str] | None = None,
                 only: tuple[ComponentKind, ...] | None = None) -> str:
    """A model response carrying ``[[section]]`` sentinels."""
    texts = dict(DEFAULT_COMPONENT_TEXTS)
    if components:
        texts.update(components)
    kinds = only if only is not None else tuple(ComponentKind)
    return "\n".join(f"[[{kind.value}]]\n{texts[kind]}" for kind in kinds)


def judge_block(verdicts: dict[str, bool | str]) -> str:
    """A judge response; value True = pass, a string = fail with explanation."""
    payload = {
        name: "pass" if value is True else {"verdict": "fail", "explanation": value}
        for name, value in verdicts.items()
    }
    return f"```judge_verdict\n{json.dumps(payload)}\n```"


def any_backend(response: str, model_name: str = "scripted"):
    return scripted_backend([ScriptedExchange("any", response)], model_name)


def ordinal_backend(*responses: str, model_name: str = "scripted"):
    return scripted_backend(
        [ScriptedExchange("ordinal", response, i + 1) for i, response in enumerate(responses)],
        model_name,
    )


@pytest.fixture
def ctx() -> FeedbackContext:
    return FeedbackContext(
        question_id="q-induction-1",
        question_text="Prove by structural induction that every tree with n nodes has n-1 edges.",
        student_solution="IH: assume the claim for all subtrees. Step: combining adds edges.",
        reference_solution="Basis: a single node has 0 edges. Step: joining k subtrees adds k edges.",
        course_id="dm101",
    )


@pytest.fixture
def report() -> FeedbackReport:
    return make_report()


BEHAVIOUR_DIMENSIONS = (
    BehaviourDimension(BehaviourKind.EFFORT,
                       "working harder, putting in more effort and time on task",
                       "Investing more focused effort — {query} — tends to deepen understanding."),
    BehaviourDimension(BehaviourKind.CONSISTENCY,
                       "keeping a consistent approach and steady method across exercises",
                       "A consistent approach — {query} — makes progress predictable."),
    BehaviourDimension(BehaviourKind.PROACTIVITY,
                       "starting early and proactively seeking help before deadlines",
                       "Acting proactively — {query} — leaves room to recover from setbacks."),
    BehaviourDimension(BehaviourKind.ASSESSMENT,
                       "checking your own work and self-assessment before submission",
                       "Self-assessment — {query} — catches mistakes before they cost marks."),
    BehaviourDimension(BehaviourKind.REGULARITY,
                       "studying regularly: if I practised a bit every day the material would stay fresh",
                       "Regular practice — {query} — builds retention through spacing."),
)


@pytest.fixture
def behaviour_dimensions():
    return BEHAVIOUR_DIMENSIONS


@pytest.fixture
def topic_graph() -> TopicGraph:
    return TopicGraph(
        topics=frozenset({"induction", "recursion", "functions"}),
        edges=frozenset({("recursion", "induction"), ("functions", "recursion")}),
    )


@pytest.fixture
def embedder():
    return fake_embedder(256)


COURSE_DOCS = {
    "notes": (
        "# Structural induction\n"
        "A proof by structural induction needs a basis case, an inductive hypothesis, "
        "and an inductive step over the constructors.\n\n"
        "# Recursion\n"
        "Recursive definitions mirror inductive proofs: the base case anchors the recursion.\n"
    ),
    "syllabus": (
        "# Week 3\n"
        "Induction over lists and trees. Prerequisites: recursion and functions.\n"
    ),
}


@pytest.fixture
def corpus_dir(tmp_path):
    root = tmp_path / "corpus"
    root.mkdir()
    for name, text in COURSE_DOCS.items():
        (root / f"{name}.md").write_text(text, encoding="utf-8")
    return root


@pytest.fixture
def course_index(corpus_dir, embedder):
    from formative.retrieval import ingest_corpus

    return ingest_corpus(corpus_dir, embedder)


@pytest.fixture
def registry(course_index, embedder, topic_graph, behaviour_dimensions):
    from formative.toolbox import build_standard_registry

    return build_standard_registry(course_index, embedder, topic_graph, behaviour_dimensions)
