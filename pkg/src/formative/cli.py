"""Operator command line.

Subcommands wrap the core package one-to-one: ``ingest`` builds a corpus
index, ``serve`` runs the HTTP service, ``batch-refine`` runs the refinement
loop over a dataset of contexts, ``eval`` exposes the analytics operations,
and ``replay`` pretty-prints a persisted trajectory.  Batch inputs and
outputs are line-delimited JSON in the canonical document forms.

Exit codes: 0 success, 1 input error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .analytics import (
    AnalyticsError,
    bh_adjust,
    category_prevalence,
    cohens_kappa,
    convergence_curve,
    mcnemar_exact,
    step_metrics,
    steering_table,
    wilcoxon_signed_rank,
)
from .domain import (
    FeedbackContext,
    ParseError,
    QuestionLabel,
    RefinementConfig,
    RefinementTrace,
    RubricCriterion,
    SteeringRecord,
    Trajectory,
    from_json,
    to_canonical_json,
)
from .feedback import RefinementError, refine
from .gateway import BackendDescriptor
from .retrieval import EmbedderDescriptor, IngestError, fake_embedder, ingest_corpus, save_index


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # input errors exit 1, not argparse's 2
        raise _UsageError(message)


def _read_jsonl(path: Path, cls) -> list:
    items = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            items.append(from_json(cls, line))
        except ParseError as exc:
            raise ParseError(f"{path}:{line_no}: {exc}") from exc
    return items


def _floats(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part != ""]
    except ValueError as exc:
        raise _UsageError(f"expected comma-separated numbers, got {raw!r}") from exc


def _emit(result: Any, csv_path: str | None, rows: list[dict] | None = None) -> None:
    print(json.dumps(result, indent=2, ensure_ascii=False))
    if csv_path:
        if rows is None:
            rows = [{"value": result}] if not isinstance(result, dict) else [result]
        with open(csv_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args: argparse.Namespace) -> int:
    if args.embedder_config:
        embedder = EmbedderDescriptor.from_dict(
            json.loads(Path(args.embedder_config).read_text(encoding="utf-8")))
    else:
        embedder = fake_embedder(args.dimension)
    index = ingest_corpus(args.corpus, embedder)
    save_index(index, args.out)
    documents = len({chunk.doc_id for chunk in index.chunks})
    print(f"indexed {documents} document(s), {len(index.chunks)} chunk(s) -> {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app, load_service_config

    config = load_service_config(args.config)
    host, _, port = config.listen_address.rpartition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port))
    return 0


def _cmd_batch_refine(args: argparse.Namespace) -> int:
    contexts = _read_jsonl(Path(args.dataset), FeedbackContext)
    if not contexts:
        raise _UsageError(f"dataset {args.dataset} holds no contexts")
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    refinement = RefinementConfig.from_dict(raw["refinement"]) if "refinement" in raw \
        else RefinementConfig()
    gen_backend = BackendDescriptor.from_dict(raw["generation_backend"])
    judge_backend = BackendDescriptor.from_dict(raw["judge_backend"])
    template_root = raw.get("template_root")
    if args.parallel < 1:
        raise _UsageError("--parallel must be >= 1")

    def run_one(context: FeedbackContext) -> RefinementTrace:
        return refine(context, refinement, gen_backend, judge_backend,
                      template_root=template_root)

    results: list[RefinementTrace | RefinementError]
    if args.parallel == 1:
        results = []
        for context in contexts:
            try:
                results.append(run_one(context))
            except RefinementError as exc:
                results.append(exc)
    else:
        from concurrent.futures import ThreadPoolExecutor

        def guarded(context: FeedbackContext) -> RefinementTrace | RefinementError:
            try:
                return run_one(context)
            except RefinementError as exc:
                return exc
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(guarded, contexts))

    traces: list[RefinementTrace] = []
    failures = 0
    with open(args.out, "w", encoding="utf-8") as sink:
        for context, result in zip(contexts, results):
            if isinstance(result, RefinementError):
                failures += 1
                print(f"error: {context.question_id}: {result}", file=sys.stderr)
                continue
            traces.append(result)
            sink.write(to_canonical_json(result) + "\n")
    summary: dict[str, Any] = {"contexts": len(contexts), "traces": len(traces),
                               "failed": failures}
    if traces:
        points = convergence_curve(traces, refinement.target_criteria)
        summary["convergence"] = [p.to_dict() for p in points]
    print(json.dumps(summary, indent=2, ensure_ascii=False))
    return 2 if failures else 0


def _criteria_arg(raw: str) -> frozenset[RubricCriterion]:
    if raw == "all":
        return frozenset(RubricCriterion)
    try:
        return frozenset(RubricCriterion(part) for part in raw.split(","))
    except ValueError as exc:
        raise _UsageError(f"unknown criterion in {raw!r}") from exc


def _cmd_eval(args: argparse.Namespace) -> int:
    op = args.operation
    if op == "kappa":
        result = {"kappa": cohens_kappa(args.labels_a.split(","), args.labels_b.split(","))}
        _emit(result, args.csv)
    elif op == "mcnemar":
        _emit({"p": mcnemar_exact(args.b, args.c)}, args.csv)
    elif op == "bh":
        adjusted = bh_adjust(_floats(args.p))
        _emit(adjusted, args.csv, rows=[{"index": i, "adjusted_p": p}
                                        for i, p in enumerate(adjusted)])
    elif op == "wilcoxon":
        _emit({"p": wilcoxon_signed_rank(_floats(args.x), _floats(args.y))}, args.csv)
    elif op == "convergence":
        traces = _read_jsonl(Path(args.traces), RefinementTrace)
        points = convergence_curve(traces, _criteria_arg(args.criteria), args.max_iteration)
        rows = [p.to_dict() for p in points]
        _emit({"points": rows}, args.csv, rows=rows)
    elif op == "steps":
        trajectories = _read_jsonl(Path(args.trajectories), Trajectory)
        metrics = step_metrics(trajectories,
                               include_final_answer_turn=not args.exclude_final_answer_turn)
        _emit(metrics.to_dict(), args.csv, rows=[metrics.to_dict()])
    elif op == "steering":
        records = _read_jsonl(Path(args.records), SteeringRecord)
        table = steering_table(records)
        rows = [{"component": component, **rates} for component, rates in table.items()]
        _emit(table, args.csv, rows=rows)
    elif op == "prevalence":
        labelled = []
        for line_no, line in enumerate(
                Path(args.annotations).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            data = json.loads(line)
            student_id = data.pop("student_id", None)
            if not isinstance(student_id, str):
                raise ParseError(f"{args.annotations}:{line_no}: student_id must be a string")
            label = QuestionLabel.from_dict(data)
            labelled.append((student_id, label.category))
        prevalence = category_prevalence(labelled)
        result = {category.value: fraction for category, fraction in prevalence.items()}
        _emit(result, args.csv, rows=[{"category": k, "fraction": v} for k, v in result.items()])
    else:  # pragma: no cover - argparse restricts choices
        raise _UsageError(f"unknown eval operation: {op}")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    from .agent import render_transcript

    trajectory = from_json(Trajectory, Path(args.trajectory).read_text(encoding="utf-8"))
    print(f"query: {trajectory.query}")
    print(f"termination: {trajectory.termination.value}; "
          f"steps: {len(trajectory.steps)}; errors: {trajectory.error_count}")
    print(render_transcript(trajectory))
    print(f"final answer: {trajectory.final_answer}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="formative", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="build a corpus index from markdown files")
    ingest.add_argument("--corpus", required=True, help="directory of .md documents")
    ingest.add_argument("--out", required=True, help="index file to write")
    ingest.add_argument("--dimension", type=int, default=64,
                        help="fake-embedder dimension (default 64)")
    ingest.add_argument("--embedder-config", default=None,
                        help="JSON file holding an embedder descriptor")
    ingest.set_defaults(func=_cmd_ingest)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", required=True, help="service config JSON")
    serve.set_defaults(func=_cmd_serve)

    batch = sub.add_parser("batch-refine", help="refine feedback for a dataset of contexts")
    batch.add_argument("--dataset", required=True, help="line-delimited FeedbackContext JSON")
    batch.add_argument("--config", required=True,
                       help="JSON with refinement, generation_backend, judge_backend")
    batch.add_argument("--out", required=True, help="line-delimited trace output file")
    batch.add_argument("--parallel", type=int, default=1,
                       help="contexts processed concurrently (default 1, deterministic)")
    batch.set_defaults(func=_cmd_batch_refine)

    evaluate = sub.add_parser("eval", help="evaluation statistics")
    eval_sub = evaluate.add_subparsers(dest="operation", required=True)

    kappa = eval_sub.add_parser("kappa")
    kappa.add_argument("--labels-a", required=True, help="comma-separated labels")
    kappa.add_argument("--labels-b", required=True, help="comma-separated labels")

    mcnemar = eval_sub.add_parser("mcnemar")
    mcnemar.add_argument("--b", type=int, required=True, help="first discordant count")
    mcnemar.add_argument("--c", type=int, required=True, help="second discordant count")

    bh = eval_sub.add_parser("bh")
    bh.add_argument("--p", required=True, help="comma-separated p-values")

    wilcoxon = eval_sub.add_parser("wilcoxon")
    wilcoxon.add_argument("--x", required=True, help="comma-separated sample")
    wilcoxon.add_argument("--y", required=True, help="comma-separated paired sample")

    convergence = eval_sub.add_parser("convergence")
    convergence.add_argument("--traces", required=True, help="line-delimited trace file")
    convergence.add_argument("--criteria", default="all",
                             help="comma-separated criteria or 'all'")
    convergence.add_argument("--max-iteration", type=int, default=None)

    steps = eval_sub.add_parser("steps")
    steps.add_argument("--trajectories", required=True, help="line-delimited trajectory file")
    steps.add_argument("--exclude-final-answer-turn", action="store_true",
                       help="count tool turns only")

    steering = eval_sub.add_parser("steering")
    steering.add_argument("--records", required=True, help="line-delimited steering records")

    prevalence = eval_sub.add_parser("prevalence")
    prevalence.add_argument("--annotations", required=True,
                            help="line-delimited {student_id, category} records")

    for sub_parser in (kappa, mcnemar, bh, wilcoxon, convergence, steps, steering, prevalence):
        sub_parser.add_argument("--csv", default=None, help="also write a CSV table here")
    evaluate.set_defaults(func=_cmd_eval)

    replay = sub.add_parser("replay", help="pretty-print a persisted trajectory")
    replay.add_argument("--trajectory", required=True, help="trajectory JSON file")
    replay.set_defaults(func=_cmd_replay)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, AnalyticsError, IngestError, FileNotFoundError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
