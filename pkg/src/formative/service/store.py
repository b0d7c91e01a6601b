"""File-backed document store.

Layout: ``store/<session_id>/{session,report-<n>,trace-<n>,trajectory-<n>}.json``
in the domain canonical form.  Reports, traces and trajectories are written
once and never mutated; ``session.json`` is the one mutable pointer document
(its report pointer may advance, superseded reports stay retrievable).
Writes are atomic (temp file + rename) so a crash never leaves a torn
document behind.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Any, Iterator

from ..domain import RefinementTrace, Session, Trajectory, from_json, to_canonical_json

_NUMBERED = re.compile(r"^([a-z-]+)-(\d+)\.json$")


class StoreError(RuntimeError):
    pass


class DocumentStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- low-level -----------------------------------------------------

    def _session_dir(self, session_id: str) -> Path:
        if not re.fullmatch(r"[A-Za-z0-9_-]+", session_id):
            raise StoreError(f"unsafe session id: {session_id!r}")
        return self.root / session_id

    def _write(self, path: Path, payload: str) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, path)

    def _next_id(self, session_dir: Path, prefix: str) -> str:
        highest = 0
        for entry in session_dir.glob(f"{prefix}-*.json"):
            match = _NUMBERED.match(entry.name)
            if match and match.group(1) == prefix:
                highest = max(highest, int(match.group(2)))
        return f"{prefix}-{highest + 1}"

    # -- sessions --------------------------------------------------------

    def save_session(self, session: Session) -> None:
        directory = self._session_dir(session.session_id)
        directory.mkdir(parents=True, exist_ok=True)
        self._write(directory / "session.json", to_canonical_json(session))

    def load_session(self, session_id: str) -> Session | None:
        path = self._session_dir(session_id) / "session.json"
        if not path.is_file():
            return None
        return from_json(Session, path.read_text(encoding="utf-8"))

    def list_sessions(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_dir() and (p / "session.json").is_file()
        )

    # -- immutable documents ----------------------------------------------

    def save_report(self, session_id: str, report_doc: dict[str, Any]) -> str:
        directory = self._session_dir(session_id)
        report_id = self._next_id(directory, "report")
        self._write(directory / f"{report_id}.json", to_canonical_json(report_doc))
        return report_id

    def save_trace(self, session_id: str, trace: RefinementTrace) -> str:
        directory = self._session_dir(session_id)
        trace_id = self._next_id(directory, "trace")
        self._write(directory / f"{trace_id}.json", to_canonical_json(trace))
        return trace_id

    def save_partial_trace(self, session_id: str, payload: dict[str, Any]) -> str:
        directory = self._session_dir(session_id)
        trace_id = self._next_id(directory, "partial-trace")
        self._write(directory / f"{trace_id}.json", to_canonical_json(payload))
        return trace_id

    def save_trajectory(self, session_id: str, trajectory: Trajectory) -> str:
        directory = self._session_dir(session_id)
        trajectory_id = self._next_id(directory, "trajectory")
        self._write(directory / f"{trajectory_id}.json", to_canonical_json(trajectory))
        return trajectory_id

    def load_trajectory(self, session_id: str, trajectory_id: str) -> Trajectory | None:
        if not re.fullmatch(r"trajectory-\d+", trajectory_id):
            return None
        path = self._session_dir(session_id) / f"{trajectory_id}.json"
        if not path.is_file():
            return None
        return from_json(Trajectory, path.read_text(encoding="utf-8"))

    def load_document(self, session_id: str, doc_id: str) -> dict[str, Any] | None:
        if not _NUMBERED.match(f"{doc_id}.json"):
            return None
        path = self._session_dir(session_id) / f"{doc_id}.json"
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def latest_report_id(self, session_id: str) -> str | None:
        directory = self._session_dir(session_id)
        highest = 0
        for entry in directory.glob("report-*.json"):
            match = _NUMBERED.match(entry.name)
            if match and match.group(1) == "report":
                highest = max(highest, int(match.group(2)))
        return f"report-{highest}" if highest else None

    def count_reports(self, session_id: str) -> int:
        directory = self._session_dir(session_id)
        if not directory.is_dir():
            return 0
        return sum(1 for e in directory.glob("report-*.json") if _NUMBERED.match(e.name))

    def iter_trajectories(self, session_id: str) -> Iterator[Trajectory]:
        session = self.load_session(session_id)
        if session is None:
            return
        for trajectory_id in session.trajectories:
            trajectory = self.load_trajectory(session_id, trajectory_id)
            if trajectory is not None:
                yield trajectory
