"""Few-shot prompt construction and parsing of model continuations."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .llm_backend import CompletionRequest, GenerationConfig

log = logging.getLogger(__name__)

SEPARATOR = ","
MAX_EXAMPLE_RECS = 10
GENERATION_FAILED = "generation_failed"
MULTILINE = "multiline_continuation"


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptExample:
    query: str
    recommendations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "recommendations", tuple(self.recommendations))
        if not self.query.strip():
            raise PromptError("example query must be nonempty")
        if "\n" in self.query or SEPARATOR in self.query:
            raise PromptError(f"invalid example query: {self.query!r}")
        if not 1 <= len(self.recommendations) <= MAX_EXAMPLE_RECS:
            raise PromptError(f"example {self.query!r} needs 1..{MAX_EXAMPLE_RECS} recommendations")
        for r in self.recommendations:
            if not r.strip():
                raise PromptError(f"empty recommendation in example {self.query!r}")
            if SEPARATOR in r:
                raise PromptError(f"separator character in item: {r!r}")
            if "\n" in r:
                raise PromptError(f"newline in item: {r!r}")


@dataclass
class RecommendationList:
    query_id: str
    items: list[str]
    flags: tuple[str, ...] = ()
    query: str = ""
    prompt: str | None = None
    raw: str | None = None
    examples: list[PromptExample] | None = None

    @property
    def failed(self) -> bool:
        return GENERATION_FAILED in self.flags

    def __len__(self):
        return len(self.items)

    def audit_record(self) -> dict:
        rec = {
            "query": self.query,
            "prompt": self.prompt,
            "raw_continuation": self.raw,
            "parsed_items": list(self.items),
            "flags": list(self.flags),
        }
        if self.examples is not None:
            rec["examples"] = [{"query": e.query, "recommendations": list(e.recommendations)} for e in self.examples]
        return rec


def format_example(example: PromptExample) -> str:
    return f"query: {example.query}\nrecommendations: {', '.join(example.recommendations)}"


def build_prompt(examples: Sequence[PromptExample], target: str) -> str:
    if not examples:
        raise PromptError("prompt needs at least one example")
    target = target.strip()
    if not target:
        raise PromptError("target query must be nonempty")
    if "\n" in target:
        raise PromptError("target query must be a single line")
    folded = target.casefold()
    for ex in examples:
        if ex.query.strip().casefold() == folded:
            raise PromptError(f"target collides with example: {ex.query!r}")
    blocks = [format_example(ex) for ex in examples]
    blocks.append(f"query: {target}\nrecommendations:")
    return "\n".join(blocks)


def parse_recommendations(continuation: str, k: int, target: str = "", query_id: str = "") -> RecommendationList:
    """Turn a raw continuation into at most ``k`` clean suggestions.

    Only the first line counts; anything after it is logged and dropped.
    Items are trimmed, deduplicated case-insensitively and the target
    itself is removed.
    """
    lines = continuation.strip("\n").split("\n") if continuation else [""]
    flags = []
    if len(lines) > 1 and any(l.strip() for l in lines[1:]):
        flags.append(MULTILINE)
        log.info("dropping %d trailing continuation lines for %r", len(lines) - 1, target)
    seen = {target.strip().casefold()} if target.strip() else set()
    items = []
    for raw in lines[0].split(SEPARATOR):
        item = " ".join(raw.split())
        if not item or item.casefold() in seen:
            continue
        seen.add(item.casefold())
        items.append(item)
        if len(items) == k:
            break
    if not items:
        flags.append(GENERATION_FAILED)
    return RecommendationList(query_id or target, items, tuple(flags), query=target)


def generate(target: str, examples: Sequence[PromptExample], config: GenerationConfig, backend, query_id: str = "") -> RecommendationList:
    prompt = build_prompt(examples, target)
    response = backend.complete(CompletionRequest(prompt, config))
    recs = parse_recommendations(response.text, config.k, target, query_id)
    recs.prompt = prompt
    recs.raw = response.text
    return recs


def read_prompt_pool(path: str | Path | None = None) -> list[PromptExample]:
    """Load ``{"query", "recommendations"}`` JSONL; defaults to the bundled pool."""
    if path is None:
        text = resources.files("gqr").joinpath("data/prompt_pool.jsonl").read_text("utf-8")
        source = "bundled prompt pool"
    else:
        text = Path(path).read_text("utf-8")
        source = str(path)
    pool = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            pool.append(PromptExample(obj["query"], tuple(obj["recommendations"])))
        except (json.JSONDecodeError, KeyError, TypeError, PromptError) as exc:
            raise PromptError(f"{source}: bad example at line {lineno}: {exc}") from None
    return pool


def write_audit(records: Iterable[RecommendationList], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for recs in records:
            fh.write(json.dumps(recs.audit_record(), ensure_ascii=False) + "\n")
