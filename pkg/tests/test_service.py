"""HTTP service: the classroom workflow end to end with scripted backends."""

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from formative.gateway import render_tool_call
from formative.retrieval import fake_embedder, ingest_corpus, save_index
from formative.service import create_app, load_service_config
from conftest import ALL_PASS, COURSE_DOCS, judge_block, section_text

LOOKUP_CALL = render_tool_call("lookup_course_content",
                               {"query": "structural induction basis case", "k": 2})
ANSWER = "FINAL_ANSWER: Revisit the basis case: a single node has zero edges."

TARGETED_PASS = judge_block({"current_state_correctness": True,
                             "task_next_steps_correctness": True})


def build_env(tmp_path, *, gen_script=None, judge_script=None, agent_script=None,
              vision_script=None, refinement=None, study_mode=None):
    """Write corpus, resources and a service config under tmp_path."""
    corpus = tmp_path / "corpus"
    if not corpus.is_dir():
        corpus.mkdir()
        for name, text in COURSE_DOCS.items():
            (corpus / f"{name}.md").write_text(text, encoding="utf-8")
    embedder = fake_embedder(256)
    index_path = tmp_path / "index.json"
    if not index_path.is_file():
        save_index(ingest_corpus(corpus, embedder), index_path)
    (tmp_path / "topics.json").write_text(json.dumps({
        "topics": ["induction", "recursion", "functions"],
        "edges": [["recursion", "induction"], ["functions", "recursion"]],
    }))
    from conftest import BEHAVIOUR_DIMENSIONS

    (tmp_path / "behaviours.json").write_text(
        json.dumps([d.to_dict() for d in BEHAVIOUR_DIMENSIONS]))
    (tmp_path / "questions.json").write_text(json.dumps([{
        "question_id": "q-induction-1",
        "course_id": "dm101",
        "question_text": "Prove by structural induction that every tree with n nodes "
                         "has n-1 edges.",
        "reference_solution": "Basis: a single node has 0 edges. Step: joining k subtrees "
                              "adds k edges.",
    }]))
    config = {
        "listen_address": "127.0.0.1:8777",
        "corpus_index_path": "index.json",
        "prerequisite_map_path": "topics.json",
        "behaviour_descriptor_path": "behaviours.json",
        "question_bank_path": "questions.json",
        "store_root": "store",
        "embedder": embedder.to_dict(),
        "generation_backend": {
            "kind": "scripted", "model_name": "gen",
            "script": gen_script or [{"match": "any", "response": section_text()}]},
        "judge_backend": {
            "kind": "scripted", "model_name": "judge",
            "script": judge_script or [{"match": "any", "response": TARGETED_PASS}]},
        "agent_backend": {
            "kind": "scripted", "model_name": "agent",
            "script": agent_script or [
                {"match": {"ordinal": 1}, "response": LOOKUP_CALL},
                {"match": "any", "response": ANSWER}]},
        "refinement": refinement or {
            "max_iterations": 1,
            "target_criteria": ["current_state_correctness", "task_next_steps_correctness"],
            "judge_runs": 1},
    }
    if vision_script is not None:
        config["vision_backend"] = {"kind": "scripted", "model_name": "vision",
                                    "script": vision_script}
    if study_mode is not None:
        config["study_mode"] = study_mode
    (tmp_path / "config.json").write_text(json.dumps(config))
    return tmp_path / "config.json"


def make_client(config_path):
    return TestClient(create_app(load_service_config(config_path)))


def parse_sse(raw: str) -> list[tuple[str, dict]]:
    events = []
    for block in raw.strip().split("\n\n"):
        lines = block.splitlines()
        name = next(l.split(": ", 1)[1] for l in lines if l.startswith("event:"))
        data = next(l.split(": ", 1)[1] for l in lines if l.startswith("data:"))
        events.append((name, json.loads(data)))
    return events


@pytest.fixture
def client(tmp_path):
    return make_client(build_env(tmp_path, vision_script=[
        {"match": "any", "response": "n(T) = edges + 1, by induction on T"}]))


def create_session(client) -> str:
    response = client.post("/api/sessions",
                           json={"course_id": "dm101", "question_id": "q-induction-1"})
    assert response.status_code == 201
    return response.json()["session"]["session_id"]


class TestSessions:
    def test_create_returns_fresh_distinct_ids(self, client):
        first = create_session(client)
        second = create_session(client)
        assert first != second
        body = client.get(f"/api/sessions/{first}").json()
        assert body["session"]["report"] is None
        assert body["session"]["transcript"] is None

    def test_unknown_question_is_404(self, client):
        response = client.post("/api/sessions",
                               json={"course_id": "dm101", "question_id": "nope"})
        assert response.status_code == 404

    def test_wrong_course_is_404(self, client):
        response = client.post("/api/sessions",
                               json={"course_id": "other", "question_id": "q-induction-1"})
        assert response.status_code == 404

    def test_unknown_session_is_404(self, client):
        assert client.get("/api/sessions/deadbeef").status_code == 404


class TestTranscription:
    def test_mock_vision_backend_stores_transcript(self, client):
        sid = create_session(client)
        response = client.post(f"/api/sessions/{sid}/transcribe",
                               files={"image": ("sol.png", b"pngbytes", "image/png")})
        assert response.status_code == 200
        assert response.json()["transcript"].startswith("n(T)")
        assert client.get(f"/api/sessions/{sid}").json()["session"]["transcript"] \
            .startswith("n(T)")

    def test_disabled_vision_backend_is_feature_unavailable(self, tmp_path):
        client = make_client(build_env(tmp_path))  # no vision backend configured
        sid = create_session(client)
        response = client.post(f"/api/sessions/{sid}/transcribe",
                               files={"image": ("sol.png", b"x", "image/png")})
        assert response.status_code == 501

    def test_retranscription_overwrites_draft(self, tmp_path):
        config = build_env(tmp_path, vision_script=[
            {"match": {"ordinal": 1}, "response": "first draft"},
            {"match": {"ordinal": 2}, "response": "second draft"}])
        client = make_client(config)
        sid = create_session(client)
        client.post(f"/api/sessions/{sid}/transcribe", files={"image": ("a.png", b"x", "image/png")})
        client.post(f"/api/sessions/{sid}/transcribe", files={"image": ("b.png", b"y", "image/png")})
        assert client.get(f"/api/sessions/{sid}").json()["session"]["transcript"] == "second draft"

    def test_edited_transcript_is_stored(self, client):
        sid = create_session(client)
        response = client.put(f"/api/sessions/{sid}/transcript",
                              json={"text": "my edited solution"})
        assert response.status_code == 200
        assert client.get(f"/api/sessions/{sid}").json()["session"]["transcript"] == \
            "my edited solution"


class TestSubmission:
    def test_pass_at_first_judgment(self, client):
        sid = create_session(client)
        response = client.post(f"/api/sessions/{sid}/solution",
                               json={"solution_text": "my proof attempt"})
        assert response.status_code == 200
        body = response.json()
        assert body["iterations_used"] == 1
        assert body["termination"] == "all_pass"
        assert set(body["report"]["components"]) == {
            "current_state", "task_next_steps", "strategy_next_steps",
            "self_regulated_next_steps", "praise"}

    def test_fail_then_pass_takes_two_iterations(self, tmp_path):
        config = build_env(
            tmp_path,
            gen_script=[
                {"match": {"ordinal": 1}, "response": section_text()},
                {"match": {"ordinal": 2}, "response":
                    "[[current_state]]\nA sharper diagnosis of the missing basis case."}],
            judge_script=[
                {"match": {"ordinal": 1}, "response": judge_block({
                    "current_state_correctness": "does not cite the missing basis step",
                    "task_next_steps_correctness": True})},
                {"match": {"ordinal": 2}, "response": judge_block({
                    "current_state_correctness": True})}],
        )
        client = make_client(config)
        sid = create_session(client)
        body = client.post(f"/api/sessions/{sid}/solution",
                           json={"solution_text": "attempt"}).json()
        assert body["iterations_used"] == 2
        assert body["termination"] == "all_pass"

    def test_empty_solution_requires_blank_flag(self, client):
        sid = create_session(client)
        assert client.post(f"/api/sessions/{sid}/solution",
                           json={"solution_text": "  "}).status_code == 400
        assert client.post(f"/api/sessions/{sid}/solution",
                           json={"solution_text": "", "blank": True}).status_code == 200

    def test_resubmission_versions_reports_and_keeps_old_ones(self, client, tmp_path):
        sid = create_session(client)
        first = client.post(f"/api/sessions/{sid}/solution",
                            json={"solution_text": "attempt one"}).json()
        second = client.post(f"/api/sessions/{sid}/solution",
                             json={"solution_text": "attempt two"}).json()
        assert first["report_id"] == "report-1"
        assert second["report_id"] == "report-2"
        store_dir = tmp_path / "store" / sid
        assert (store_dir / "report-1.json").is_file()
        assert (store_dir / "report-2.json").is_file()
        assert (store_dir / "trace-2.json").is_file()


class TestChat:
    def test_stream_emits_step_events_then_answer(self, client, tmp_path):
        sid = create_session(client)
        client.post(f"/api/sessions/{sid}/solution", json={"solution_text": "attempt"})
        with client.stream("POST", f"/api/sessions/{sid}/chat",
                           json={"message": "what is a basis case?"}) as response:
            assert response.status_code == 200
            raw = "".join(response.iter_text())
        events = parse_sse(raw)
        assert [name for name, _ in events] == ["step", "step", "answer"]
        step0, step1 = events[0][1], events[1][1]
        assert step0 == {"step_index": 0, "tool_name": "lookup_course_content",
                         "observation_kind": "success"}
        assert step1 == {"step_index": 1, "tool_name": "answer", "observation_kind": None}
        answer = events[2][1]
        assert answer["trajectory_id"] == "trajectory-1"
        assert answer["termination"] == "answered"
        # the trajectory was persisted no later than the terminal event
        assert (tmp_path / "store" / sid / "trajectory-1.json").is_file()

    def test_chat_before_feedback_is_a_precondition_error(self, client):
        sid = create_session(client)
        assert client.post(f"/api/sessions/{sid}/chat",
                           json={"message": "hello"}).status_code == 412

    def test_concurrent_chat_conflicts(self, client, monkeypatch):
        import formative.service.app as app_module

        sid = create_session(client)
        client.post(f"/api/sessions/{sid}/solution", json={"solution_text": "attempt"})

        release = threading.Event()
        real_run = app_module.run_trajectory

        def slow_run(*args, **kwargs):
            release.wait(timeout=5)
            return real_run(*args, **kwargs)

        monkeypatch.setattr(app_module, "run_trajectory", slow_run)
        results = {}

        def first_chat():
            with client.stream("POST", f"/api/sessions/{sid}/chat",
                               json={"message": "one"}) as response:
                results["first"] = response.status_code
                "".join(response.iter_text())

        thread = threading.Thread(target=first_chat)
        thread.start()
        time.sleep(0.2)  # let the first chat take the session lock
        second = client.post(f"/api/sessions/{sid}/chat", json={"message": "two"})
        release.set()
        thread.join(timeout=5)
        assert results["first"] == 200
        assert second.status_code == 409

    def test_trajectory_fetch_and_unknown_trajectory(self, client):
        sid = create_session(client)
        client.post(f"/api/sessions/{sid}/solution", json={"solution_text": "attempt"})
        with client.stream("POST", f"/api/sessions/{sid}/chat",
                           json={"message": "why?"}) as response:
            "".join(response.iter_text())
        body = client.get(f"/api/sessions/{sid}/trajectories/trajectory-1").json()
        assert body["query"] == "why?"
        assert body["termination"] == "answered"
        assert client.get(
            f"/api/sessions/{sid}/trajectories/trajectory-9").status_code == 404


class TestMetricsAndPersistence:
    def test_conversation_rate_counts_sessions_with_chat(self, tmp_path):
        config = build_env(tmp_path, agent_script=[{"match": "any", "response": ANSWER}])
        client = make_client(config)
        sids = [create_session(client) for _ in range(4)]
        for sid in sids:
            client.post(f"/api/sessions/{sid}/solution", json={"solution_text": "attempt"})
        with client.stream("POST", f"/api/sessions/{sids[0]}/chat",
                           json={"message": "why?"}) as response:
            "".join(response.iter_text())
        metrics = client.get("/api/admin/metrics").json()
        assert metrics["sessions"] == 4
        assert metrics["reports"] == 4
        assert metrics["conversations"] == 1
        assert metrics["conversation_rate"] == 0.25

    def test_no_reports_means_null_rate(self, client):
        create_session(client)
        metrics = client.get("/api/admin/metrics").json()
        assert metrics["conversation_rate"] is None
        assert metrics["step_metrics"] is None

    def test_state_survives_restart(self, tmp_path):
        config = build_env(tmp_path)
        client = make_client(config)
        sid = create_session(client)
        client.post(f"/api/sessions/{sid}/solution", json={"solution_text": "attempt"})
        with client.stream("POST", f"/api/sessions/{sid}/chat",
                           json={"message": "why?"}) as response:
            "".join(response.iter_text())
        before = client.get("/api/admin/metrics").json()

        reborn = make_client(config)
        after = reborn.get("/api/admin/metrics").json()
        assert after == before
        session = reborn.get(f"/api/sessions/{sid}").json()["session"]
        assert session["report"] is not None
        assert session["trajectories"] == ["trajectory-1"]


class TestStudyMode:
    def test_completion_flag_requires_min_questions(self, tmp_path):
        config = build_env(tmp_path,
                           agent_script=[{"match": "any", "response": ANSWER}],
                           study_mode={"enabled": True, "min_questions": 3})
        client = make_client(config)
        sid = create_session(client)
        client.post(f"/api/sessions/{sid}/solution", json={"solution_text": "attempt"})
        for n in range(3):
            body = client.get(f"/api/sessions/{sid}").json()
            assert body["completed"] is False
            assert body["study_goal"] == 3
            with client.stream("POST", f"/api/sessions/{sid}/chat",
                               json={"message": f"question {n}"}) as response:
                "".join(response.iter_text())
        assert client.get(f"/api/sessions/{sid}").json()["completed"] is True
