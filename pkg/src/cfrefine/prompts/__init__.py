"""Prompt templates and the parsers for what generators send back.

Templates are plain-text files with ``[PLACEHOLDER]`` markers. The shipped set
lives in ``templates/``; any of them can be replaced per run by passing an
override path.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

from cfrefine.errors import CfParseError, JudgeParseError, RenderError

TEMPLATE_IDS = (
    "base",
    "refine_confidence",
    "refine_attribution",
    "nl_feedback",
    "nl_edit",
    "judge",
    # flip-seeking refinements, used while the candidate still has the original label
    "refine_none",
    "refine_confidence_flip",
    "refine_attribution_flip",
)

_PLACEHOLDER_RE = re.compile(r"\[([A-Z][A-Z_]*)\]")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    @property
    def placeholders(self) -> list[str]:
        seen: list[str] = []
        for name in _PLACEHOLDER_RE.findall(self.body):
            if name not in seen:
                seen.append(name)
        return seen

    def render(self, bindings: Mapping[str, object]) -> str:
        for name in self.placeholders:
            if name not in bindings:
                raise RenderError(f"template {self.template_id!r}: no binding for [{name}]")
        # single pass, so bound text that happens to contain [X] is left alone
        return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), self.body)


def load_template(template_id: str, overrides: Mapping[str, str | Path] | None = None) -> PromptTemplate:
    if overrides and template_id in overrides:
        body = Path(overrides[template_id]).read_text(encoding="utf-8")
    else:
        if template_id not in TEMPLATE_IDS:
            raise RenderError(f"unknown template {template_id!r}")
        body = (resources.files(__package__) / "templates" / f"{template_id}.txt").read_text(
            encoding="utf-8"
        )
    if body.endswith("\n"):
        body = body[:-1]
    return PromptTemplate(template_id, body)


def render_prompt(
    template_id: str,
    bindings: Mapping[str, object],
    overrides: Mapping[str, str | Path] | None = None,
) -> str:
    return load_template(template_id, overrides).render(bindings)


def format_confidence(prob: float) -> int:
    """Probability -> integer percent, rounded half-up."""
    return int((Decimal(repr(prob)) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def format_top_words(pairs: Sequence[tuple[str, float]]) -> str:
    ranked = sorted(enumerate(pairs), key=lambda ip: (-ip[1][1], ip[0]))
    return ", ".join(word for _, (word, _) in ranked)


def _last_pair(text: str, open_tag: str, close_tag: str) -> str | None:
    end = text.rfind(close_tag)
    if end < 0:
        return None
    start = text.rfind(open_tag, 0, end)
    if start < 0:
        return None
    return text[start + len(open_tag) : end]


def extract_cf(generation: str) -> str:
    """Content of the last well-formed ``<cf>...</cf>`` pair, whitespace-trimmed."""
    inner = _last_pair(generation, "<cf>", "</cf>")
    if inner is None:
        raise CfParseError("no <cf>...</cf> pair in generation")
    return inner.strip()


def extract_think(generation: str) -> str:
    """Critique text from an NL-feedback generation; falls back to the whole completion."""
    inner = _last_pair(generation, "<think>", "</think>")
    return (inner if inner is not None else generation).strip()


class JudgeScores(NamedTuple):
    completeness: int
    satisfaction: int
    feasibility: int


def extract_judge_scores(text: str) -> JudgeScores:
    values = []
    for tag in JudgeScores._fields:
        found = re.findall(rf"<{tag}>\s*([^<]*?)\s*</{tag}>", text)
        if not found:
            raise JudgeParseError(f"missing <{tag}> tag")
        raw = found[-1]
        if not re.fullmatch(r"\d+", raw):
            raise JudgeParseError(f"<{tag}> holds {raw!r}, expected an integer")
        score = int(raw)
        if not 1 <= score <= 6:
            raise JudgeParseError(f"<{tag}> score {score} outside 1..6")
        values.append(score)
    return JudgeScores(*values)


def format_judge_scores(scores: JudgeScores) -> str:
    return "".join(f"<{tag}>{value}</{tag}>" for tag, value in zip(JudgeScores._fields, scores))


__all__ = [
    "JudgeScores",
    "PromptTemplate",
    "TEMPLATE_IDS",
    "extract_cf",
    "extract_judge_scores",
    "extract_think",
    "format_confidence",
    "format_judge_scores",
    "format_top_words",
    "load_template",
    "render_prompt",
]
