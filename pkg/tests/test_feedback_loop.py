"""Generate-evaluate-revise loop semantics under scripted backends."""

import dataclasses

import pytest

from formative.domain import (
    ComponentKind,
    RefinementConfig,
    RefinementTermination,
    RubricCriterion,
)
from formative.feedback import (
    GenerationError,
    JudgeError,
    RefinementError,
    deployment_preset,
    generate_report,
    governed_components,
    judge_report,
    refine,
    regenerate_components,
)
from conftest import (
    ALL_PASS,
    DEFAULT_COMPONENT_TEXTS,
    any_backend,
    judge_block,
    make_report,
    ordinal_backend,
    section_text,
)

SR = RubricCriterion.SELF_REGULATED_NEXT_STEPS
CSC = RubricCriterion.CURRENT_STATE_CORRECTNESS
TNSC = RubricCriterion.TASK_NEXT_STEPS_CORRECTNESS


class TestGenerateReport:
    def test_five_sections_parse_into_a_report(self, ctx):
        backend = any_backend(section_text())
        report = generate_report(ctx, backend)
        assert report.origin_iteration == 0
        assert report.components == DEFAULT_COMPONENT_TEXTS
        assert backend.calls_made == 1

    def test_missing_praise_twice_is_a_generation_error(self, ctx):
        incomplete = section_text(only=tuple(k for k in ComponentKind
                                             if k is not ComponentKind.PRAISE))
        backend = any_backend(incomplete)
        with pytest.raises(GenerationError, match="praise"):
            generate_report(ctx, backend)
        assert backend.calls_made == 2  # one initial attempt plus one retry
        with pytest.raises(GenerationError) as excinfo:
            generate_report(ctx, any_backend(incomplete))
        assert excinfo.value.raw_text == incomplete

    def test_missing_section_recovers_on_retry(self, ctx):
        backend = ordinal_backend("no sections here", section_text())
        report = generate_report(ctx, backend)
        assert report.components == DEFAULT_COMPONENT_TEXTS
        assert backend.calls_made == 2

    def test_blank_solution_still_generates(self, ctx):
        blank_ctx = dataclasses.replace(ctx, student_solution="")
        report = generate_report(blank_ctx, any_backend(section_text()))
        assert report.components[ComponentKind.CURRENT_STATE]


class TestJudgeReport:
    def test_single_run_all_pass(self, ctx, report):
        backend = any_backend(judge_block(ALL_PASS))
        verdict = judge_report(ctx, report, frozenset(RubricCriterion), backend)
        assert verdict.all_pass()
        assert backend.calls_made == 1

    def test_majority_vote_two_fails_beat_one_pass(self, ctx, report):
        backend = ordinal_backend(
            judge_block({"clarity": True}),
            judge_block({"clarity": "too dense"}),
            judge_block({"clarity": "jargon-heavy"}),
        )
        verdict = judge_report(ctx, report, frozenset({RubricCriterion.CLARITY}),
                               backend, judge_runs=3)
        assert verdict.judgments[RubricCriterion.CLARITY] is False
        # explanation comes from the first failing run
        assert verdict.explanations[RubricCriterion.CLARITY] == "too dense"

    def test_tie_counts_as_fail(self, ctx, report):
        backend = ordinal_backend(
            judge_block({"clarity": True}),
            judge_block({"clarity": "unclear"}),
        )
        verdict = judge_report(ctx, report, frozenset({RubricCriterion.CLARITY}),
                               backend, judge_runs=2)
        assert verdict.judgments[RubricCriterion.CLARITY] is False

    def test_unparseable_run_recovers_via_reask(self, ctx, report):
        backend = ordinal_backend("not a verdict", judge_block({"clarity": True}))
        verdict = judge_report(ctx, report, frozenset({RubricCriterion.CLARITY}), backend)
        assert verdict.all_pass()
        assert backend.calls_made == 2

    def test_all_runs_unparseable_is_judge_error(self, ctx, report):
        backend = any_backend("still not a verdict")
        with pytest.raises(JudgeError):
            judge_report(ctx, report, frozenset({RubricCriterion.CLARITY}), backend)
        assert backend.calls_made == 3  # initial attempt plus two re-asks


class TestRegenerateComponents:
    def test_only_the_failing_component_changes(self, ctx, report):
        backend = any_backend(section_text(
            {SR.governed_components[0]: "New metacognitive prompts."},
            only=(ComponentKind.SELF_REGULATED_NEXT_STEPS,),
        ))
        revised = regenerate_components(ctx, report, {SR: "no metacognitive prompt"}, backend)
        assert revised.components[ComponentKind.SELF_REGULATED_NEXT_STEPS] == \
            "New metacognitive prompts."
        for kind in ComponentKind:
            if kind is not ComponentKind.SELF_REGULATED_NEXT_STEPS:
                assert revised.components[kind] == report.components[kind]
        assert revised.origin_iteration == report.origin_iteration + 1

    def test_two_correctness_failures_replace_two_components(self, ctx, report):
        governed = governed_components(frozenset({CSC, TNSC}))
        assert governed == (ComponentKind.CURRENT_STATE, ComponentKind.TASK_NEXT_STEPS)
        backend = any_backend(section_text(
            {ComponentKind.CURRENT_STATE: "new diagnosis",
             ComponentKind.TASK_NEXT_STEPS: "new steps"},
            only=governed,
        ))
        revised = regenerate_components(
            ctx, report, {CSC: "wrong diagnosis", TNSC: "vague steps"}, backend)
        assert revised.components[ComponentKind.CURRENT_STATE] == "new diagnosis"
        assert revised.components[ComponentKind.TASK_NEXT_STEPS] == "new steps"
        assert revised.components[ComponentKind.PRAISE] == report.components[ComponentKind.PRAISE]

    def test_clarity_governs_all_five(self, ctx, report):
        assert governed_components(frozenset({RubricCriterion.CLARITY})) == tuple(ComponentKind)
        fresh = {kind: f"rewritten {kind.value}" for kind in ComponentKind}
        backend = any_backend(section_text(fresh))
        revised = regenerate_components(ctx, report, {RubricCriterion.CLARITY: "jargon-heavy"},
                                        backend)
        assert revised.components == fresh

    def test_prompt_carries_only_failing_texts(self, ctx, report):
        backend = any_backend(section_text(
            {ComponentKind.SELF_REGULATED_NEXT_STEPS: "rewritten"},
            only=(ComponentKind.SELF_REGULATED_NEXT_STEPS,),
        ))
        regenerate_components(ctx, report, {SR: "no metacognitive prompt"}, backend)
        prompt = backend.transcript[0][0].content
        assert report.components[ComponentKind.SELF_REGULATED_NEXT_STEPS] in prompt
        assert "no metacognitive prompt" in prompt
        for kind in ComponentKind:
            if kind is not ComponentKind.SELF_REGULATED_NEXT_STEPS:
                assert report.components[kind] not in prompt

    def test_empty_failing_set_rejected(self, ctx, report):
        with pytest.raises(ValueError):
            regenerate_components(ctx, report, {}, any_backend("x"))


class TestRefine:
    def test_immediate_pass(self, ctx):
        gen = any_backend(section_text())
        judge = any_backend(judge_block(ALL_PASS))
        trace = refine(ctx, RefinementConfig(), gen, judge)
        assert len(trace.iterations) == 1
        assert trace.termination is RefinementTermination.ALL_PASS
        assert gen.calls_made == 1
        assert judge.calls_made == 1

    def test_fail_then_pass_regenerates_only_the_failing_component(self, ctx):
        gen = ordinal_backend(
            section_text(),
            section_text({ComponentKind.SELF_REGULATED_NEXT_STEPS: "Plan, monitor, reflect."},
                         only=(ComponentKind.SELF_REGULATED_NEXT_STEPS,)),
        )
        judge = ordinal_backend(
            judge_block({**ALL_PASS, "self_regulated_next_steps": "no metacognitive prompt"}),
            judge_block({"self_regulated_next_steps": True}),
        )
        trace = refine(ctx, RefinementConfig(), gen, judge)
        assert len(trace.iterations) == 2
        assert trace.termination is RefinementTermination.ALL_PASS
        first, second = trace.iterations
        for kind in ComponentKind:
            if kind is ComponentKind.SELF_REGULATED_NEXT_STEPS:
                assert second.report.components[kind] != first.report.components[kind]
            else:
                assert second.report.components[kind] == first.report.components[kind]
        # criteria that passed at t=0 are not re-judged at t=1
        assert second.verdict.judged_criteria == frozenset({SR})
        assert gen.calls_made == 2
        assert judge.calls_made == 2

    def test_always_failing_judge_hits_the_iteration_cap(self, ctx):
        all_fail = {name: f"{name} deficient" for name in ALL_PASS}
        gen = any_backend(section_text())
        judge = any_backend(judge_block(all_fail))
        trace = refine(ctx, RefinementConfig(max_iterations=20), gen, judge)
        assert len(trace.iterations) == 21
        assert trace.termination is RefinementTermination.ITERATION_LIMIT
        # call accounting: 1 + one regeneration per failing iteration, capped
        assert gen.calls_made == 21
        assert judge.calls_made == 21

    def test_judge_calls_scale_with_judge_runs(self, ctx):
        gen = any_backend(section_text())
        judge = any_backend(judge_block(ALL_PASS))
        trace = refine(ctx, RefinementConfig(judge_runs=3), gen, judge)
        assert len(trace.iterations) == 1
        assert judge.calls_made == 3

    def test_generation_error_carries_partial_trace(self, ctx):
        gen = ordinal_backend(section_text(), "no sections", "still no sections")
        judge = any_backend(judge_block(
            {**ALL_PASS, "self_regulated_next_steps": "missing"}))
        with pytest.raises(RefinementError) as excinfo:
            refine(ctx, RefinementConfig(), gen, judge)
        assert len(excinfo.value.partial_iterations) == 1
        assert excinfo.value.context_ref == ctx.question_id


class TestDeploymentPreset:
    def test_preset_values(self):
        preset = deployment_preset()
        assert preset.max_iterations == 1
        assert preset.target_criteria == frozenset({CSC, TNSC})
        assert len(preset.target_criteria) == 2
        assert preset.judge_runs == 1

    def test_preset_judges_exactly_the_two_correctness_criteria(self, ctx):
        gen = ordinal_backend(
            section_text(),
            section_text({ComponentKind.CURRENT_STATE: "sharper diagnosis"},
                         only=(ComponentKind.CURRENT_STATE,)),
        )
        judge = ordinal_backend(
            judge_block({"current_state_correctness": "misses the missing basis case",
                         "task_next_steps_correctness": True}),
            judge_block({"current_state_correctness": True}),
        )
        trace = refine(ctx, deployment_preset(), gen, judge)
        assert trace.termination is RefinementTermination.ALL_PASS
        assert gen.calls_made <= 2
        assert trace.iterations[0].verdict.judged_criteria == frozenset({CSC, TNSC})
        judged_union = frozenset().union(
            *(it.verdict.judged_criteria for it in trace.iterations))
        assert judged_union == frozenset({CSC, TNSC})

    def test_preset_issues_at_most_two_generation_calls_even_when_failing(self, ctx):
        gen = any_backend(section_text())
        judge = any_backend(judge_block(
            {"current_state_correctness": "wrong", "task_next_steps_correctness": "vague"}))
        trace = refine(ctx, deployment_preset(), gen, judge)
        assert trace.termination is RefinementTermination.ITERATION_LIMIT
        assert len(trace.iterations) == 2
        assert gen.calls_made == 2
