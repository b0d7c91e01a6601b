"""Tool registry and dispatch for the interactive agent.

Dispatch is total: unknown tools, schema violations and handler exceptions all
come back as error observations the agent can read and react to; nothing
escapes as an exception.  Tool output is rendered text (observations are
re-fed into a model context), produced by fixed templates so scripted tests
stay deterministic.

Three tool families ship in the standard registry: hybrid retrieval over the
course corpus, prerequisite lookups over a topic dependency map, and
counterfactual explanations against the five behavioural dimensions (effort,
consistency, proactivity, assessment, regularity).
"""

from __future__ import annotations

import difflib
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .domain import (
    BehaviourDimension,
    BehaviourKind,
    CorpusIndex,
    Observation,
    ObservationKind,
    ParseError,
    ToolCall,
    TopicGraph,
)
from .retrieval import (
    EmbedderDescriptor,
    embed,
    hybrid_search,
    require_embedder_match,
    tokenize,
)

BEHAVIOUR_COSINE_THRESHOLD = 0.15
NO_PASSAGES_MESSAGE = "no relevant passages found"
LOW_CONFIDENCE_SUFFIX = "\n[low confidence match]"


class RegistryError(ValueError):
    """Invalid registry construction (duplicate names, bad schema)."""


class ToolExecutionError(RuntimeError):
    """Raised by handlers; dispatch renders it as an error observation."""


@dataclass(frozen=True)
class ArgSpec:
    """One argument slot: type in {string, integer, number, boolean}."""

    type: str
    required: bool = True
    minimum: int | None = None
    maximum: int | None = None
    default: Any = None

    def __post_init__(self):
        if self.type not in ("string", "integer", "number", "boolean"):
            raise RegistryError(f"unknown argument type: {self.type}")


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    argument_schema: dict[str, ArgSpec]
    handler: Callable[[dict[str, Any]], str]

    def __post_init__(self):
        if not self.name:
            raise RegistryError("tool name must be non-empty")


@dataclass
class ToolRegistry:
    """Immutable-after-construction name → descriptor map."""

    _tools: dict[str, ToolDescriptor] = field(default_factory=dict)

    def names(self) -> list[str]:
        return sorted(self._tools)

    def get(self, name: str) -> ToolDescriptor | None:
        return self._tools.get(name)

    def __len__(self) -> int:
        return len(self._tools)

    def advertisement(self) -> str:
        """Deterministic text block advertising every tool, sorted by name."""
        lines = []
        for name in self.names():
            descriptor = self._tools[name]
            args = []
            for arg_name, spec in descriptor.argument_schema.items():
                bits = [spec.type, "required" if spec.required else "optional"]
                if spec.minimum is not None or spec.maximum is not None:
                    bits.append(f"{spec.minimum}..{spec.maximum}")
                args.append(f"{arg_name} ({', '.join(bits)})")
            lines.append(f"- {name}: {descriptor.description}")
            lines.append(f"  arguments: {'; '.join(args) if args else '(none)'}")
        return "\n".join(lines)


def register_tool(registry: ToolRegistry, descriptor: ToolDescriptor) -> ToolRegistry:
    if descriptor.name in registry._tools:
        raise RegistryError(f"tool already registered: {descriptor.name}")
    registry._tools[descriptor.name] = descriptor
    return registry


def _validate_arguments(schema: Mapping[str, ArgSpec],
                        arguments: Mapping[str, Any]) -> dict[str, Any] | str:
    """Validated argument dict with defaults applied, or a defect message."""
    for name in arguments:
        if name not in schema:
            return f"{name}: unexpected argument"
    resolved: dict[str, Any] = {}
    for name, spec in schema.items():
        if name not in arguments:
            if spec.required:
                return f"{name}: required argument missing"
            resolved[name] = spec.default
            continue
        value = arguments[name]
        if spec.type == "string":
            if not isinstance(value, str):
                return f"{name}: expected string"
        elif spec.type == "integer":
            if not isinstance(value, int) or isinstance(value, bool):
                return f"{name}: expected integer"
        elif spec.type == "number":
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                return f"{name}: expected number"
        elif spec.type == "boolean":
            if not isinstance(value, bool):
                return f"{name}: expected boolean"
        if spec.type == "integer" and (
                (spec.minimum is not None and value < spec.minimum)
                or (spec.maximum is not None and value > spec.maximum)):
            return f"{name}: must be between {spec.minimum} and {spec.maximum}"
        resolved[name] = value
    return resolved


def dispatch(registry: ToolRegistry, call: ToolCall) -> Observation:
    """Execute one tool call; every failure becomes an error observation."""
    descriptor = registry.get(call.tool_name)
    if descriptor is None:
        available = ", ".join(registry.names())
        return Observation(
            kind=ObservationKind.ERROR,
            payload=f"unknown tool: {call.tool_name}; available: {available}",
            tool_name=call.tool_name,
        )
    arguments = call.arguments if isinstance(call.arguments, Mapping) else None
    if arguments is None:
        return Observation(kind=ObservationKind.ERROR,
                           payload="arguments: expected an object",
                           tool_name=call.tool_name)
    resolved = _validate_arguments(descriptor.argument_schema, arguments)
    if isinstance(resolved, str):
        return Observation(kind=ObservationKind.ERROR, payload=resolved,
                           tool_name=call.tool_name)
    try:
        output = descriptor.handler(resolved)
    except Exception as exc:  # by contract dispatch never throws
        return Observation(kind=ObservationKind.ERROR, payload=str(exc) or repr(exc),
                           tool_name=call.tool_name)
    return Observation(kind=ObservationKind.SUCCESS, payload=output,
                       tool_name=call.tool_name)


# ---------------------------------------------------------------------------
# course content


def render_course_hits(index: CorpusIndex, hits: Sequence) -> str:
    if not hits:
        return NO_PASSAGES_MESSAGE
    lines = []
    for hit in hits:
        chunk = index.chunk_by_id(hit.chunk_id)
        path = " > ".join(chunk.heading_path) if chunk.heading_path else chunk.doc_id
        lines.append(f"— [{path}] {chunk.text.strip()}")
    return "\n".join(lines)


def make_course_content_tool(index: CorpusIndex,
                             embedder: EmbedderDescriptor | None) -> ToolDescriptor:
    require_embedder_match(index, embedder)

    def handler(args: dict[str, Any]) -> str:
        hits = hybrid_search(index, args["query"], embedder, args["k"])
        return render_course_hits(index, hits)

    return ToolDescriptor(
        name="lookup_course_content",
        description="Search the course materials (textbook, syllabus, slides, exercises) "
                    "for passages relevant to a query.",
        argument_schema={
            "query": ArgSpec(type="string"),
            "k": ArgSpec(type="integer", required=False, minimum=1, maximum=10, default=3),
        },
        handler=handler,
    )


# ---------------------------------------------------------------------------
# prerequisites


def _suggest_topics(graph: TopicGraph, query: str) -> list[str]:
    lowered = query.lower()
    candidates = {
        topic for topic in graph.topics
        if lowered in topic.lower() or topic.lower() in lowered
    }
    by_name = {topic.lower(): topic for topic in graph.topics}
    for match in difflib.get_close_matches(lowered, list(by_name), n=3, cutoff=0.7):
        candidates.add(by_name[match])
    return sorted(candidates)


def make_prerequisites_tool(graph: TopicGraph) -> ToolDescriptor:
    reverse: dict[str, list[str]] = {}
    for pre, dep in graph.edges:
        reverse.setdefault(dep, []).append(pre)

    def handler(args: dict[str, Any]) -> str:
        raw_topic = args["topic"]
        resolved = {t.lower(): t for t in graph.topics}.get(raw_topic.strip().lower())
        if resolved is None:
            suggestions = _suggest_topics(graph, raw_topic)
            hint = f"; nearest matches: {', '.join(suggestions)}" if suggestions else ""
            raise ToolExecutionError(f"unknown topic: {raw_topic}{hint}")
        hops: list[list[str]] = []
        visited = {resolved}
        frontier = deque([resolved])
        for _ in range(args["depth"]):
            next_frontier: set[str] = set()
            for topic in frontier:
                for pre in reverse.get(topic, ()):
                    if pre not in visited:
                        visited.add(pre)
                        next_frontier.add(pre)
            if not next_frontier:
                break
            hops.append(sorted(next_frontier))
            frontier = deque(next_frontier)
        if not hops:
            return f"no prerequisites recorded for {resolved}"
        lines = [f"prerequisites of {resolved}:"]
        for distance, group in enumerate(hops, start=1):
            label = "hop" if distance == 1 else "hops"
            lines.append(f"{distance} {label}: {', '.join(group)}")
        return "\n".join(lines)

    return ToolDescriptor(
        name="lookup_prerequisites",
        description="List the prerequisite topics of a course topic, grouped by "
                    "prerequisite distance.",
        argument_schema={
            "topic": ArgSpec(type="string"),
            "depth": ArgSpec(type="integer", required=False, minimum=1, maximum=5, default=2),
        },
        handler=handler,
    )


# ---------------------------------------------------------------------------
# behavioural counterfactuals


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    return sum(x * y for x, y in zip(a, b))


def match_behaviour(query: str, dimensions: Sequence[BehaviourDimension],
                    embedder: EmbedderDescriptor | None) -> tuple[BehaviourDimension, bool]:
    """Best dimension for a query and whether the match is low-confidence.

    Primary signal is embedding cosine similarity against each descriptor;
    below the confidence threshold it falls back to keyword overlap so the
    tool stays total.  Ties resolve in fixed enumeration order.
    """
    ordered = sorted(dimensions, key=lambda d: list(BehaviourKind).index(d.kind))
    if embedder is not None and embedder.dimension > 0:
        query_vec = embed(embedder, query)
        scores = [_cosine(query_vec, embed(embedder, dim.descriptor)) for dim in ordered]
        best = max(scores)
        if best >= BEHAVIOUR_COSINE_THRESHOLD:
            return ordered[scores.index(best)], False
    query_tokens = set(tokenize(query))
    overlaps = [len(query_tokens & set(tokenize(dim.descriptor))) for dim in ordered]
    best = max(overlaps)
    return ordered[overlaps.index(best)], best == 0


def make_behaviour_tool(dimensions: Sequence[BehaviourDimension],
                        embedder: EmbedderDescriptor | None) -> ToolDescriptor:
    kinds = {d.kind for d in dimensions}
    if kinds != set(BehaviourKind) or len(dimensions) != len(BehaviourKind):
        raise RegistryError("behaviour descriptors must cover exactly the five dimensions")

    def handler(args: dict[str, Any]) -> str:
        query = args["query"]
        dimension, low_confidence = match_behaviour(query, dimensions, embedder)
        text = dimension.explanation_template.replace("{query}", query)
        return text + (LOW_CONFIDENCE_SUFFIX if low_confidence else "")

    return ToolDescriptor(
        name="behaviour_counterfactual",
        description="Explain how an alternative study behaviour (effort, consistency, "
                    "proactivity, assessment, regularity) could influence learning outcomes.",
        argument_schema={"query": ArgSpec(type="string")},
        handler=handler,
    )


# ---------------------------------------------------------------------------
# resource loading


def load_topic_graph(path: Path | str) -> TopicGraph:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"TopicGraph: cannot load {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("TopicGraph: file must hold a JSON object")
    return TopicGraph.from_dict(data)


def load_behaviour_dimensions(path: Path | str) -> tuple[BehaviourDimension, ...]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"BehaviourDimension: cannot load {path}: {exc}") from exc
    if not isinstance(data, list):
        raise ParseError("BehaviourDimension: file must hold a JSON list of five entries")
    dimensions = tuple(BehaviourDimension.from_dict(item) for item in data)
    kinds = [d.kind for d in dimensions]
    if sorted(kinds, key=lambda k: k.value) != sorted(BehaviourKind, key=lambda k: k.value) \
            or len(kinds) != len(BehaviourKind):
        raise ParseError("BehaviourDimension: file must define each dimension exactly once")
    return dimensions


def build_standard_registry(index: CorpusIndex, embedder: EmbedderDescriptor | None,
                            topic_graph: TopicGraph,
                            behaviour_dimensions: Sequence[BehaviourDimension]) -> ToolRegistry:
    registry = ToolRegistry()
    register_tool(registry, make_course_content_tool(index, embedder))
    register_tool(registry, make_prerequisites_tool(topic_graph))
    register_tool(registry, make_behaviour_tool(behaviour_dimensions, embedder))
    return registry
