"""Prompt construction, rule-token parsing, and pluggable completion backends.

The pipeline works end to end without any language model: every backend
call has a deterministic fallback (top-k rules by mined probability for
selection, fuzzy-score order for reranking). A backend, when configured,
is an accuracy enhancement layered on top.
"""

from __future__ import annotations

import abc
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .mining import LogicRule, QAExample
from .retrieval import ReasoningPath, ScoredAnswer

logger = logging.getLogger(__name__)

RULE_START = "<RULE>"
RULE_SEP = "<SEP>"
RULE_END = "</RULE>"
RESERVED_TOKENS = (RULE_START, RULE_SEP, RULE_END)

RERANK_MARKER = "Answers:"

SELECTION_HEADER = (
    "Please select correct logic rules that can be used to answer the "
    "following multi-hop question: "
)
GENERATION_HEADER = (
    "Please generate a correct, high-quality logic rule that can help "
    "answer the following question: "
)

ENDPOINT_ENV = "RULEHOP_LLM_ENDPOINT"
API_KEY_ENV = "RULEHOP_LLM_API_KEY"


class BackendError(RuntimeError):
    """A completion backend failed to produce text."""


class RuleParseError(ValueError):
    """Rule tokens in a text are unbalanced."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CompletionBackend(abc.ABC):
    """Single-prompt text completion; implementations must be side-effect free."""

    @abc.abstractmethod
    def complete(self, prompt: str, *, max_tokens: int = 256, temperature: float = 0.0) -> str:
        raise NotImplementedError


class NullBackend(CompletionBackend):
    """Always fails, forcing the deterministic fallbacks."""

    def complete(self, prompt: str, *, max_tokens: int = 256, temperature: float = 0.0) -> str:
        raise BackendError("null backend has no completions")


def prompt_fingerprint(prompt: str) -> str:
    """Stable hash used to key mock fixture files."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockBackend(CompletionBackend):
    """Scripted backend driven by a prompt-hash -> response mapping."""

    def __init__(self, responses: Mapping[str, str]) -> None:
        self._responses = dict(responses)

    @classmethod
    def from_prompts(cls, responses: Mapping[str, str]) -> "MockBackend":
        return cls({prompt_fingerprint(p): text for p, text in responses.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, prompt: str, *, max_tokens: int = 256, temperature: float = 0.0) -> str:
        key = prompt_fingerprint(prompt)
        if key not in self._responses:
            raise BackendError(f"no scripted response for prompt hash {key[:12]}")
        return self._responses[key]


class HttpBackend(CompletionBackend):
    """Remote text-completion endpoint.

    Sends ``{"prompt", "max_tokens", "temperature"}`` as JSON and expects a
    JSON object with a ``text`` field back. Failed requests are retried
    with exponential backoff.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 2,
        backoff: float = 0.5,
    ) -> None:
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    @classmethod
    def from_env(cls) -> "HttpBackend":
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise BackendError(f"{ENDPOINT_ENV} is not set")
        return cls(endpoint, api_key=os.environ.get(API_KEY_ENV))

    def complete(self, prompt: str, *, max_tokens: int = 256, temperature: float = 0.0) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"prompt": prompt, "max_tokens": max_tokens, "temperature": temperature}
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                if response.status_code >= 500:
                    last_error = BackendError(f"server error {response.status_code}")
                    continue
                response.raise_for_status()
                body = response.json()
            except requests.RequestException as exc:
                last_error = exc
                continue
            except ValueError as exc:
                raise BackendError(f"non-JSON completion response: {exc}") from exc
            if "text" not in body:
                raise BackendError("completion response lacks a 'text' field")
            return str(body["text"])
        raise BackendError(f"completion request failed: {last_error}")


def complete_many(
    backend: CompletionBackend,
    prompts: Sequence[str],
    max_in_flight: int = 4,
    max_tokens: int = 256,
    temperature: float = 0.0,
) -> list[str]:
    """Complete several prompts concurrently, results in request order."""
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be positive")
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(
            pool.map(
                lambda p: backend.complete(p, max_tokens=max_tokens, temperature=temperature),
                prompts,
            )
        )


# -- rule token format ----------------------------------------------------


def serialize_rule(rule: LogicRule, relation_names: Sequence[str]) -> str:
    """Render a rule as ``<RULE>r1<SEP>r2<SEP>...</RULE>`` using surface forms."""
    surfaces = []
    for relation in rule.relations:
        name = relation_names[relation]
        for token in RESERVED_TOKENS:
            if token in name:
                raise ValueError(f"relation surface {name!r} contains reserved token {token}")
        surfaces.append(name)
    return RULE_START + RULE_SEP.join(surfaces) + RULE_END


def parse_rules(text: str, relation_names: Sequence[str]) -> list[LogicRule]:
    """Extract every well-formed rule span from free text, in order.

    Rules mentioning surfaces missing from the vocabulary are skipped with
    a warning. Unbalanced start/end tokens raise :class:`RuleParseError`
    with the byte offset of the offending token; text without any rule
    span parses to an empty list.
    """
    ids = {name: i for i, name in enumerate(relation_names)}
    rules: list[LogicRule] = []
    pos = 0
    while True:
        start = text.find(RULE_START, pos)
        end = text.find(RULE_END, pos)
        if start == -1 and end == -1:
            break
        if start == -1 or (end != -1 and end < start):
            raise RuleParseError("end token without matching start", _byte_offset(text, end))
        if end == -1:
            raise RuleParseError("start token without matching end", _byte_offset(text, start))
        inner = text[start + len(RULE_START) : end]
        nested = inner.find(RULE_START)
        if nested != -1:
            raise RuleParseError(
                "nested start token", _byte_offset(text, start + len(RULE_START) + nested)
            )
        surfaces = [s.strip() for s in inner.split(RULE_SEP)]
        unknown = [s for s in surfaces if s not in ids]
        if unknown or not all(surfaces):
            logger.warning("dropping rule with unknown relations %r", unknown or surfaces)
        else:
            rules.append(LogicRule(tuple(ids[s] for s in surfaces)))
        pos = end + len(RULE_END)
    return rules


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


# -- prompt templates ------------------------------------------------------


def build_selection_prompt(
    question: str,
    candidates: Sequence[LogicRule],
    relation_names: Sequence[str],
    shots: Sequence[str] = (),
) -> str:
    """Few-shot prompt asking the model to pick correct rules from candidates.

    Exemplar blocks are prepended in the given order, separated by blank
    lines. Pure: identical inputs produce byte-identical prompts.
    """
    if not candidates:
        raise ValueError("selection prompt needs at least one candidate rule")
    blocks = [SELECTION_HEADER + question, "Candidate logic rules:"]
    for i, rule in enumerate(candidates, start=1):
        blocks.append(f"{i}. {serialize_rule(rule, relation_names)}")
    blocks.append("Reason:")
    blocks.append("The correct logic rules are: ")
    body = "\n\n".join(blocks)
    if shots:
        return "\n\n".join([*shots, body])
    return body


def build_generation_prompt(question: str) -> str:
    """Instruction prompt asking the model to produce a rule for a question."""
    if not question:
        raise ValueError("question must be non-empty")
    return GENERATION_HEADER + question


def render_path(
    path: ReasoningPath,
    entity_names: Sequence[str],
    relation_names: Sequence[str],
) -> str:
    """``e0 --r1--> e1 --r2--> e2 (p=0.83)`` rendering of a reasoning path."""
    parts = [entity_names[path.entities[0]]]
    for relation, entity in zip(path.relations, path.entities[1:]):
        parts.append(f"--{relation_names[relation]}-->")
        parts.append(entity_names[entity])
    return " ".join(parts) + f" (p={path.cumulative:.2f})"


def build_rerank_prompt(
    question: str,
    answers: Sequence[ScoredAnswer],
    entity_names: Sequence[str],
    relation_names: Sequence[str],
) -> str:
    """Prompt listing each candidate with its best reasoning path.

    Candidates appear in the given (score-descending) order. The model is
    asked to reply with an ``Answers:`` marker line followed by one
    candidate surface per line.
    """
    if not answers:
        raise ValueError("rerank prompt needs at least one candidate answer")
    blocks = [
        "Answer the following multi-hop question using the retrieved reasoning paths.",
        "Question: " + question,
        "Candidate answers:",
    ]
    for i, answer in enumerate(answers, start=1):
        rendered = render_path(answer.paths[0], entity_names, relation_names)
        blocks.append(f"{i}. {entity_names[answer.entity]} via {rendered}")
    blocks.append(
        "Rank the candidates from most to least likely to be correct. Reply "
        'with the line "Answers:" followed by one candidate per line, best first.'
    )
    return "\n\n".join(blocks)


# -- backend-driven operations ---------------------------------------------


@dataclass(frozen=True)
class RuleSelection:
    """Selected rules plus a flag telling whether the fallback was used."""

    rules: tuple[LogicRule, ...]
    used_fallback: bool


def _fallback_selection(candidates: Sequence[LogicRule], k: int) -> tuple[LogicRule, ...]:
    ranked = sorted(
        candidates,
        key=lambda r: (-(r.probability if r.probability is not None else 0.0), r.relations),
    )
    return tuple(ranked[:k])


def select_rules(
    backend: CompletionBackend,
    question: str,
    candidates: Sequence[LogicRule],
    k: int,
    relation_names: Sequence[str],
    shots: Sequence[str] = (),
) -> RuleSelection:
    """Ask the backend to pick rules; fall back to top-k by mined probability.

    Parsed rules not present in the candidate set are dropped. Backend
    failure, an unparseable reply, or an empty filtered list all trigger
    the fallback, which is flagged in the result.
    """
    if not candidates:
        raise ValueError("select_rules needs a non-empty candidate list")
    if k < 1:
        raise ValueError("k must be positive")
    by_relations = {rule.relations: rule for rule in candidates}
    prompt = build_selection_prompt(question, candidates, relation_names, shots)
    try:
        reply = backend.complete(prompt)
        parsed = parse_rules(reply, relation_names)
    except (BackendError, RuleParseError) as exc:
        logger.debug("rule selection fell back to mined probabilities: %s", exc)
        return RuleSelection(_fallback_selection(candidates, k), used_fallback=True)
    kept: list[LogicRule] = []
    seen: set[tuple[int, ...]] = set()
    for rule in parsed:
        match = by_relations.get(rule.relations)
        if match is not None and rule.relations not in seen:
            kept.append(match)
            seen.add(rule.relations)
        if len(kept) >= k:
            break
    if not kept:
        logger.debug("backend reply contained no candidate rules; using fallback")
        return RuleSelection(_fallback_selection(candidates, k), used_fallback=True)
    return RuleSelection(tuple(kept), used_fallback=False)


def _fallback_order(answers: Sequence[ScoredAnswer]) -> list[ScoredAnswer]:
    return sorted(answers, key=lambda a: (-a.score, a.entity))


def rerank(
    backend: CompletionBackend,
    question: str,
    answers: Sequence[ScoredAnswer],
    entity_names: Sequence[str],
    relation_names: Sequence[str],
) -> list[ScoredAnswer]:
    """Reorder candidates per the backend's reply; scores are preserved.

    The reply is scanned for the ``Answers:`` marker line; subsequent
    non-empty lines name candidates best-first. Parsed candidates keep the
    reply order, anything unparsed is appended in fuzzy-score order. Any
    backend failure falls back to plain score order.
    """
    if not answers:
        raise ValueError("rerank needs a non-empty answer list")
    prompt = build_rerank_prompt(question, answers, entity_names, relation_names)
    try:
        reply = backend.complete(prompt)
    except BackendError as exc:
        logger.debug("rerank fell back to fuzzy score order: %s", exc)
        return _fallback_order(answers)
    lines = reply.splitlines()
    try:
        marker = next(i for i, line in enumerate(lines) if line.strip() == RERANK_MARKER)
    except StopIteration:
        logger.warning("rerank reply lacks the %r marker; using score order", RERANK_MARKER)
        return _fallback_order(answers)
    by_surface = {entity_names[a.entity]: a for a in answers}
    picked: list[ScoredAnswer] = []
    seen: set[int] = set()
    for line in lines[marker + 1 :]:
        surface = line.strip()
        if not surface:
            continue
        answer = by_surface.get(surface)
        if answer is not None and answer.entity not in seen:
            picked.append(answer)
            seen.add(answer.entity)
    if not picked:
        logger.warning("rerank reply named no known candidates; using score order")
        return _fallback_order(answers)
    rest = [a for a in _fallback_order(answers) if a.entity not in seen]
    return picked + rest


# -- instruction tuning export ----------------------------------------------


@dataclass(frozen=True)
class InstructionRecord:
    """One (instruction, output) pair for fine-tuning a rule generator."""

    instruction: str
    output: str


def export_instruction_data(
    examples: Sequence[QAExample],
    gold: Mapping[str, Sequence[LogicRule]],
    relation_names: Sequence[str],
) -> Iterator[InstructionRecord]:
    """One record per (question, gold rule) pair, grouped by question in order."""
    for example in examples:
        rules = gold.get(example.question)
        if not rules:
            raise ValueError(f"no gold rules for question {example.question!r}")
        for rule in rules:
            yield InstructionRecord(
                instruction=build_generation_prompt(example.question),
                output=serialize_rule(rule, relation_names),
            )


def write_instruction_data(
    records: Iterable[InstructionRecord], path: str | Path
) -> int:
    """Write instruction records as JSON lines; returns the record count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(
                json.dumps(
                    {"instruction": record.instruction, "output": record.output},
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    return count
