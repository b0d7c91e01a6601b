"""Versioned prompt templates.

Templates are plain text files referenced by id; the package ships defaults
under ``formative/templates`` and deployments may point at their own directory
to override wording without code changes.  Substitution uses ``$name``
placeholders (``string.Template``) so JSON examples inside templates need no
escaping.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from string import Template


class PromptError(KeyError):
    """A template id could not be resolved or a placeholder was missing."""


def load_template(template_id: str, root: Path | str | None = None) -> str:
    """Raw template text for an id (filename without the .txt suffix)."""
    if root is not None:
        path = Path(root) / f"{template_id}.txt"
        if not path.is_file():
            raise PromptError(f"no template {template_id!r} under {root}")
        return path.read_text(encoding="utf-8")
    candidate = resources.files(__package__) / "templates" / f"{template_id}.txt"
    if not candidate.is_file():
        raise PromptError(f"no packaged template {template_id!r}")
    return candidate.read_text(encoding="utf-8")


def render_template(template_id: str, root: Path | str | None = None, **values: str) -> str:
    try:
        return Template(load_template(template_id, root)).substitute(**values)
    except KeyError as exc:
        raise PromptError(f"template {template_id!r} is missing a value for {exc}") from exc
