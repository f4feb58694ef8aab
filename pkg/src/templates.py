"""Report templates stored as YAML files and rendered with Jinja2.

Usage:
    from src.templates import TemplateLoader, SummaryVars

    loader = TemplateLoader()
    template = loader.load("report/summary")
    text = template.render(SummaryVars(title="2-week synthetic", methods=[...]))
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import yaml
from jinja2 import BaseLoader, Environment, StrictUndefined
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATES = Path(__file__).resolve().parent.parent / "templates"


# -- template variables --

class MethodRow(BaseModel):
    """One method's line in the summary table."""
    method: str
    ace_total: float
    ace_spike: float
    ace_average: float
    causality_ok: bool = True


class SummaryVars(BaseModel):
    """Variables for the evaluation summary."""
    title: str = Field(..., description="Heading of the summary")
    methods: list[MethodRow] = Field(default_factory=list, description="One row per evaluated method")
    test_start: int = Field(0, description="First forecast index")
    test_end: int = Field(0, description="End of the test span, exclusive")
    spike_segments: int = Field(0, description="Number of spike segments in the span")
    settings: dict[str, Any] = Field(default_factory=dict, description="Config keys worth echoing")


# -- templates --

class ReportTemplate:
    """A resolved template: inherited keys are merged into ``metadata``."""

    def __init__(
        self,
        name: str,
        version: str,
        description: str,
        body: str,
        metadata: dict[str, Any],
        jinja_env: Environment,
    ) -> None:
        self.name = name
        self.version = version
        self.description = description
        self.metadata = metadata
        self._compiled = jinja_env.from_string(body)

    def render(self, variables: BaseModel | dict[str, Any] | None = None) -> str:
        """Render the body; template keys such as ``footer`` are visible unless a variable shadows them."""
        if isinstance(variables, BaseModel):
            variables = variables.model_dump()
        context = {**self.metadata, **(variables or {})}
        text = self._compiled.render(**context)
        logger.debug("Rendered %s (%d chars)", self.name, len(text))
        return text


class TemplateLoader:
    """Reads report templates from YAML files; a template may ``extends`` another."""

    def __init__(self, templates_dir: str | Path | None = None) -> None:
        self.root = Path(templates_dir) if templates_dir is not None else DEFAULT_TEMPLATES
        self._cache: dict[str, dict[str, Any]] = {}
        self._env = Environment(
            loader=BaseLoader(),
            autoescape=False,
            trim_blocks=True,
            lstrip_blocks=True,
            undefined=StrictUndefined,
            keep_trailing_newline=True,
        )
        self._env.filters["num"] = lambda x, digits=2: f"{float(x):,.{digits}f}"

    def load(self, name: str) -> ReportTemplate:
        """Template ``name`` is a path under the root without ``.yaml``, e.g. ``"report/summary"``."""
        fields = self._flatten(name, ())
        if "body" not in fields:
            raise ValueError(f"template {name!r} has no body")
        return ReportTemplate(
            name=fields.get("name", name),
            version=str(fields.get("version", "unknown")),
            description=fields.get("description", ""),
            body=fields["body"],
            metadata=fields,
            jinja_env=self._env,
        )

    def _read(self, name: str) -> dict[str, Any]:
        cached = self._cache.get(name)
        if cached is not None:
            return cached
        path = self.root / f"{name}.yaml"
        if not path.is_file():
            raise FileNotFoundError(f"Report template not found: {path}")
        logger.debug("Reading template %s", path)
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ValueError(f"template {path} must be a mapping")
        self._cache[name] = data
        return data

    def _flatten(self, name: str, chain: tuple[str, ...]) -> dict[str, Any]:
        """Child keys override parent keys along the ``extends`` chain."""
        if name in chain:
            raise ValueError(f"template inheritance cycle: {' -> '.join((*chain, name))}")
        own = self._read(name)
        parent_name = own.get("extends")
        if parent_name is None:
            return dict(own)
        fields = self._flatten(parent_name, (*chain, name))
        fields.update({k: v for k, v in own.items() if k != "extends"})
        return fields

    def list_templates(self) -> list[str]:
        return sorted(
            p.relative_to(self.root).with_suffix("").as_posix()
            for p in self.root.rglob("*.yaml")
            if not any(part.startswith((".", "_")) for part in p.relative_to(self.root).parts)
        )


_default_loader: TemplateLoader | None = None  # pylint: disable=invalid-name  # private module state


def get_loader() -> TemplateLoader:
    global _default_loader  # pylint: disable=global-statement  # singleton getter
    if _default_loader is None:
        _default_loader = TemplateLoader()
    return _default_loader


def render_summary(variables: SummaryVars) -> str:
    return get_loader().load("report/summary").render(variables)
