"""Independent quality scoring on the four-dimension rubric."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .agents import Backend, FinalResponse
from .ledger import RunRecord
from .workflow import Phase

JUDGE_ROLE = "judge"

DIMENSIONS = ("completeness", "correctness", "style", "maintainability")
REVIEW_THRESHOLD = 3.0

# Accepted score values: integers and half points on the 1..5 scale.
_VALID_VALUES = frozenset(1.0 + 0.5 * i for i in range(9))


class ScoreParseError(Exception):
    pass


@dataclass(frozen=True)
class RubricScore:
    completeness: float
    correctness: float
    style: float
    maintainability: float

    def __post_init__(self) -> None:
        for name in DIMENSIONS:
            value = getattr(self, name)
            if value not in _VALID_VALUES:
                raise ValueError(f"{name} must be an integer or half point in [1, 5]: {value}")

    def values(self) -> tuple[float, float, float, float]:
        return (self.completeness, self.correctness, self.style, self.maintainability)


def composite(score: RubricScore) -> float:
    """Arithmetic mean of the four dimensions, unrounded."""
    return sum(score.values()) / 4.0


def needs_review(composite_score: float) -> bool:
    """Strictly below the review threshold."""
    if not 1.0 <= composite_score <= 5.0:
        raise ValueError(f"composite out of range: {composite_score}")
    return composite_score < REVIEW_THRESHOLD


@dataclass(frozen=True)
class JudgeVerdict:
    score: RubricScore
    composite: float
    needs_review: bool
    rationale_text: str = ""

    def to_dict(self) -> dict:
        return {
            "score": {name: getattr(self.score, name) for name in DIMENSIONS},
            "composite": round(self.composite, 2),
            "needs_review": self.needs_review,
            "rationale_text": self.rationale_text,
        }


def verdict_for(score: RubricScore, rationale: str = "") -> JudgeVerdict:
    mean = composite(score)
    return JudgeVerdict(
        score=score, composite=mean, needs_review=needs_review(mean), rationale_text=rationale
    )


_SCORE_BLOCK_RE = re.compile(r"```(?:scores?)?\s*\n(.*?)\n```", re.DOTALL)
_SCORE_LINE_RE = re.compile(r"^\s*([a-z_]+)\s*:\s*([0-9.]+)\s*$")


def parse_score_block(text: str) -> RubricScore:
    """Extract the fenced score block: four `dimension: value` lines, strict."""
    block = _SCORE_BLOCK_RE.search(text)
    if not block:
        raise ScoreParseError("no fenced score block found")
    values: dict[str, float] = {}
    for line in block.group(1).splitlines():
        if not line.strip():
            continue
        m = _SCORE_LINE_RE.match(line)
        if not m:
            raise ScoreParseError(f"malformed score line: {line!r}")
        name, raw = m.group(1), m.group(2)
        if name not in DIMENSIONS:
            raise ScoreParseError(f"unknown dimension: {name}")
        try:
            values[name] = float(raw)
        except ValueError:
            raise ScoreParseError(f"non-numeric score: {raw!r}") from None
    missing = [d for d in DIMENSIONS if d not in values]
    if missing:
        raise ScoreParseError(f"missing dimensions: {', '.join(missing)}")
    try:
        return RubricScore(**values)
    except ValueError as exc:
        raise ScoreParseError(str(exc)) from None


def judge_run(
    backend: Backend,
    record: RunRecord,
    task_description: str,
    diff_text: str,
    rubric_prompt: str,
) -> Optional[JudgeVerdict]:
    """Score a completed run's patch. The judge principal has no tool access;
    any tool request from the backend counts as a parse failure. Retries once;
    a second failure returns None (judge unavailable, run outcome unchanged).
    """
    if record.patch is None:
        raise ValueError("judging requires a patch artifact")
    prompt = (
        rubric_prompt.replace("{{task}}", task_description).replace("{{diff}}", diff_text)
    )
    for attempt in range(2):
        message = backend.next_message(JUDGE_ROLE, Phase.IMPLEMENT, attempt, prompt)
        if not isinstance(message, FinalResponse):
            continue  # judges may not call tools
        try:
            score = parse_score_block(message.text)
        except ScoreParseError:
            continue
        return verdict_for(score, rationale=message.text)
    return None
