"""Plain-text prompt templates with named ``{placeholder}`` fields."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from string import Formatter

from .core import ProtocolError


class PromptTemplate:
    """A ``str.format`` template that refuses to render with missing or extra fields."""

    def __init__(self, template: str, name: str = "<inline>"):
        self.template = template
        self.name = name
        self.fields = frozenset(
            f for _, f, _, _ in Formatter().parse(template) if f is not None and f != ""
        )

    def render(self, **values: object) -> str:
        missing = self.fields - values.keys()
        if missing:
            raise ProtocolError(f"template {self.name} is missing values for {sorted(missing)}")
        extra = values.keys() - self.fields
        if extra:
            raise ProtocolError(f"template {self.name} has no placeholder for {sorted(extra)}")
        return self.template.format(**values)

    def __repr__(self) -> str:
        return f"PromptTemplate({self.name!r}, fields={sorted(self.fields)})"


def _packaged(name: str) -> PromptTemplate:
    text = resources.files(__package__).joinpath("templates", f"{name}.txt").read_text()
    return PromptTemplate(text, name)


@dataclass(frozen=True)
class PromptSet:
    query_initial: PromptTemplate
    query_followup: PromptTemplate
    query_followup_noprev: PromptTemplate
    respond_initial: PromptTemplate
    respond_followup: PromptTemplate
    judge: PromptTemplate
    decompose: PromptTemplate
    verify: PromptTemplate
    questions: PromptTemplate

    @classmethod
    def default(cls) -> PromptSet:
        return cls(**{f.name: _packaged(f.name) for f in fields(cls)})

    @classmethod
    def from_dir(cls, directory: str | os.PathLike | None) -> PromptSet:
        """Defaults, overridden by any ``<name>.txt`` present in ``directory``."""
        prompts = cls.default()
        if directory is None:
            return prompts
        overrides = {}
        for f in fields(cls):
            path = Path(directory) / f"{f.name}.txt"
            if path.exists():
                overrides[f.name] = PromptTemplate(path.read_text(), str(path))
        return replace(prompts, **overrides)


STRICT_LABEL_SUFFIX = (
    "\n\nYour previous reply could not be parsed. Answer with exactly one of these "
    "labels on the first line, prefixed by 'VERDICT:': {labels}"
)
STRICT_YES_NO_SUFFIX = "\n\nAnswer with exactly one word: yes or no."
RETRY_LINES_SUFFIX = "\n\nYour previous reply was empty. Write at least one line."
