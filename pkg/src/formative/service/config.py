"""Service configuration: one JSON document describing backends, resources,
refinement settings and deployment knobs.

Relative paths resolve against the config file's directory.  Backend entries
may carry ``script_path`` instead of an inline ``script``; the referenced file
must hold a JSON list of scripted exchanges.  Secrets never live in config:
bearer tokens are read from the environment variables the backends name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..agent import AgentLimits
from ..domain import FeedbackContext, ParseError, RefinementConfig
from ..gateway import BackendDescriptor, ScriptedExchange
from ..retrieval import EmbedderDescriptor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StudyMode:
    enabled: bool = False
    min_questions: int = 0

    def __post_init__(self):
        if self.min_questions < 0:
            raise ConfigError("study_mode.min_questions must be >= 0")


@dataclass(frozen=True)
class ServiceConfig:
    listen_address: str
    corpus_index_path: Path
    prerequisite_map_path: Path
    behaviour_descriptor_path: Path
    question_bank_path: Path
    store_root: Path
    embedder: EmbedderDescriptor
    generation_backend: BackendDescriptor
    judge_backend: BackendDescriptor
    agent_backend: BackendDescriptor
    vision_backend: BackendDescriptor | None = None
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    agent_limits: AgentLimits = field(default_factory=AgentLimits)
    study_mode: StudyMode = field(default_factory=StudyMode)
    max_concurrent_model_calls: int | None = None
    template_root: Path | None = None
    frontend_dist: Path | None = None


_REQUIRED = {
    "listen_address", "corpus_index_path", "prerequisite_map_path",
    "behaviour_descriptor_path", "question_bank_path", "store_root",
    "embedder", "generation_backend", "judge_backend", "agent_backend",
}
_OPTIONAL = {
    "vision_backend", "refinement", "agent_limits", "study_mode",
    "max_concurrent_model_calls", "template_root", "frontend_dist",
}


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def _load_backend(raw: Mapping[str, Any], base: Path, name: str) -> BackendDescriptor:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{name} must be an object")
    data = dict(raw)
    script_path = data.pop("script_path", None)
    if script_path is not None:
        if "script" in data:
            raise ConfigError(f"{name}: give either script or script_path, not both")
        path = _resolve(base, script_path)
        if not path.is_file():
            raise ConfigError(f"{name}: script file not found: {path}")
        entries = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(entries, list):
            raise ConfigError(f"{name}: script file must hold a JSON list")
        data["script"] = entries
    try:
        return BackendDescriptor.from_dict(data)
    except ParseError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_service_config(path: Path | str) -> ServiceConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _REQUIRED - _OPTIONAL
    if unknown:
        raise ConfigError(f"unknown config field: {sorted(unknown)[0]}")
    missing = _REQUIRED - set(raw)
    if missing:
        raise ConfigError(f"missing config field: {sorted(missing)[0]}")
    base = path.parent

    vision = None
    if raw.get("vision_backend") is not None:
        vision = _load_backend(raw["vision_backend"], base, "vision_backend")
    try:
        refinement = (RefinementConfig.from_dict(raw["refinement"])
                      if "refinement" in raw else RefinementConfig())
        embedder = EmbedderDescriptor.from_dict(raw["embedder"])
    except ParseError as exc:
        raise ConfigError(str(exc)) from exc
    limits = AgentLimits(**raw["agent_limits"]) if "agent_limits" in raw else AgentLimits()
    study_raw = raw.get("study_mode", {})
    if not isinstance(study_raw, Mapping):
        raise ConfigError("study_mode must be an object")
    study = StudyMode(enabled=bool(study_raw.get("enabled", False)),
                      min_questions=int(study_raw.get("min_questions", 0)))
    max_calls = raw.get("max_concurrent_model_calls")
    if max_calls is not None and (not isinstance(max_calls, int) or max_calls < 1):
        raise ConfigError("max_concurrent_model_calls must be a positive integer or null")

    config = ServiceConfig(
        listen_address=str(raw["listen_address"]),
        corpus_index_path=_resolve(base, raw["corpus_index_path"]),
        prerequisite_map_path=_resolve(base, raw["prerequisite_map_path"]),
        behaviour_descriptor_path=_resolve(base, raw["behaviour_descriptor_path"]),
        question_bank_path=_resolve(base, raw["question_bank_path"]),
        store_root=_resolve(base, raw["store_root"]),
        embedder=embedder,
        generation_backend=_load_backend(raw["generation_backend"], base, "generation_backend"),
        judge_backend=_load_backend(raw["judge_backend"], base, "judge_backend"),
        agent_backend=_load_backend(raw["agent_backend"], base, "agent_backend"),
        vision_backend=vision,
        refinement=refinement,
        agent_limits=limits,
        study_mode=study,
        max_concurrent_model_calls=max_calls,
        template_root=_resolve(base, raw["template_root"]) if raw.get("template_root") else None,
        frontend_dist=_resolve(base, raw["frontend_dist"]) if raw.get("frontend_dist") else None,
    )
    for label, resource in (
            ("corpus_index_path", config.corpus_index_path),
            ("prerequisite_map_path", config.prerequisite_map_path),
            ("behaviour_descriptor_path", config.behaviour_descriptor_path),
            ("question_bank_path", config.question_bank_path)):
        if not resource.is_file():
            raise ConfigError(f"{label} does not exist: {resource}")
    return config


def load_question_bank(path: Path | str) -> dict[str, FeedbackContext]:
    """Question bank: JSON list of contexts without student solutions."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load question bank {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ConfigError("question bank must be a JSON list")
    bank: dict[str, FeedbackContext] = {}
    for entry in raw:
        if not isinstance(entry, Mapping):
            raise ConfigError("question bank entries must be objects")
        data = dict(entry)
        data.setdefault("student_solution", "")
        try:
            ctx = FeedbackContext.from_dict(data)
        except ParseError as exc:
            raise ConfigError(f"question bank: {exc}") from exc
        if ctx.question_id in bank:
            raise ConfigError(f"duplicate question_id: {ctx.question_id}")
        bank[ctx.question_id] = ctx
    if not bank:
        raise ConfigError("question bank is empty")
    return bank
