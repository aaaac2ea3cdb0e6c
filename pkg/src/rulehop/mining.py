"""Logic rule mining from bounded-length walks between topics and answers.

Questions are clustered by their topic-masked template; every relation path
of length at most L that grounds from a question's topic entity to one of
its answers is a rule candidate. Candidates are scored with a Bayes-style
frequency over the cluster and the best walk per answer is retained.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import KnowledgeGraph

logger = logging.getLogger(__name__)

TOPIC_MASK = "[NE]"
DEFAULT_WALK_CAP = 10_000

RelationPath = tuple[int, ...]


@dataclass(frozen=True)
class QAExample:
    """One question with its topic entity and gold answer set.

    ``unresolved`` records answer surfaces that did not resolve against the
    entity vocabulary; a non-empty value flags the example as partially
    usable.
    """

    question: str
    topic_entity: int
    topic_surface: str
    answers: frozenset[int]
    unresolved: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.topic_surface not in self.question:
            raise ValueError(
                f"topic surface {self.topic_surface!r} does not occur in question "
                f"{self.question!r}"
            )


@dataclass(frozen=True)
class QuestionCluster:
    """All examples sharing one topic-masked question template."""

    template: str
    members: tuple[QAExample, ...]


@dataclass(frozen=True)
class LogicRule:
    """An ordered relation chain, optionally carrying its mined probability."""

    relations: RelationPath
    probability: float | None = None

    def __post_init__(self) -> None:
        if not self.relations:
            raise ValueError("a logic rule must contain at least one relation")


@dataclass(frozen=True)
class MiningConfig:
    """Knobs for walk enumeration and rule scoring.

    ``sample_walks`` switches from exhaustive enumeration to seeded random
    walks (``sample_walks`` draws per question/answer pair); enumeration is
    the oracle for the sampled mode.
    """

    max_len: int = 3
    mode: str = "normalized"
    walk_cap: int = DEFAULT_WALK_CAP
    sample_walks: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")
        if self.mode not in ("normalized", "literal"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.walk_cap < 1:
            raise ValueError("walk_cap must be positive")
        if self.sample_walks is not None and self.sample_walks < 1:
            raise ValueError("sample_walks must be positive when set")


def mask_topic(question: str, topic_surface: str) -> str:
    """Replace every occurrence of the topic surface with the mask token."""
    if not topic_surface:
        raise ValueError("topic surface must be non-empty")
    if topic_surface not in question:
        raise ValueError(
            f"topic surface {topic_surface!r} does not occur in {question!r}"
        )
    return question.replace(topic_surface, TOPIC_MASK)


def cluster_questions(examples: Sequence[QAExample]) -> list[QuestionCluster]:
    """Group examples by exact template equality, in first-appearance order."""
    grouped: dict[str, list[QAExample]] = {}
    for example in examples:
        template = mask_topic(example.question, example.topic_surface)
        grouped.setdefault(template, []).append(example)
    return [
        QuestionCluster(template, tuple(members))
        for template, members in grouped.items()
    ]


def enumerate_walks(
    graph: KnowledgeGraph,
    src: int,
    dst: int,
    max_len: int,
    cap: int = DEFAULT_WALK_CAP,
) -> frozenset[RelationPath]:
    """All distinct relation sequences of length 1..max_len grounding src->dst.

    Cycles are allowed; relation sequences are deduplicated across
    groundings. Enumeration stops with a warning once ``cap`` distinct
    sequences were found.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    graph._check_entity(src)
    graph._check_entity(dst)
    found: set[RelationPath] = set()
    stack: list[tuple[int, RelationPath]] = [(src, ())]
    while stack:
        entity, prefix = stack.pop()
        for relation, tail in graph.edges_from(entity):
            path = prefix + (relation,)
            if tail == dst:
                found.add(path)
                if len(found) >= cap:
                    logger.warning(
                        "walk enumeration capped at %d paths for %d->%d", cap, src, dst
                    )
                    return frozenset(found)
            if len(path) < max_len:
                stack.append((tail, path))
    return frozenset(found)


def sample_walks(
    graph: KnowledgeGraph,
    src: int,
    dst: int,
    max_len: int,
    n_walks: int,
    seed: int = 0,
    cap: int = DEFAULT_WALK_CAP,
) -> frozenset[RelationPath]:
    """Collect relation paths from seeded random walks; a subset of enumerate_walks.

    Each walk follows uniformly chosen outgoing edges for up to ``max_len``
    steps and records the relation prefix every time the walk sits on
    ``dst``.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if n_walks < 1:
        raise ValueError("n_walks must be positive")
    graph._check_entity(src)
    graph._check_entity(dst)
    rng = np.random.default_rng(seed)
    found: set[RelationPath] = set()
    for _ in range(n_walks):
        entity = src
        path: RelationPath = ()
        for _ in range(max_len):
            edges = graph.edges_from(entity)
            if not edges:
                break
            relation, entity = edges[int(rng.integers(len(edges)))]
            path = path + (relation,)
            if entity == dst:
                found.add(path)
                if len(found) >= cap:
                    return frozenset(found)
    return frozenset(found)


def build_walk_index(
    graph: KnowledgeGraph,
    cluster: QuestionCluster,
    config: MiningConfig,
) -> dict[tuple[int, int], frozenset[RelationPath]]:
    """Walk sets per (member index, answer entity) pair of the cluster."""
    index: dict[tuple[int, int], frozenset[RelationPath]] = {}
    for i, example in enumerate(cluster.members):
        for answer in sorted(example.answers):
            if config.sample_walks is None:
                walks = enumerate_walks(
                    graph, example.topic_entity, answer, config.max_len, config.walk_cap
                )
            else:
                walks = sample_walks(
                    graph,
                    example.topic_entity,
                    answer,
                    config.max_len,
                    config.sample_walks,
                    seed=config.seed,
                    cap=config.walk_cap,
                )
            index[(i, answer)] = walks
    return index


def rule_probability(
    path: RelationPath,
    cluster: QuestionCluster,
    walk_index: Mapping[tuple[int, int], frozenset[RelationPath]],
    mode: str = "normalized",
) -> float:
    """Score a relation path against a question cluster.

    In ``normalized`` mode an answer whose walk set contains the path
    contributes 1/|walks|, so the result stays in [0, 1]. ``literal`` mode
    instead contributes |walks| when the path is present and 1 otherwise,
    which can exceed 1; it is kept for fidelity with the frequency formula
    as printed. Answers with empty walk sets contribute 0 in normalized
    mode and 1 in literal mode.
    """
    if mode not in ("normalized", "literal"):
        raise ValueError(f"unknown mode {mode!r}")
    if not cluster.members:
        raise ValueError("cluster has no members")
    total = 0.0
    for i, example in enumerate(cluster.members):
        answers = sorted(example.answers)
        if not answers:
            continue
        acc = 0.0
        for answer in answers:
            walks = walk_index.get((i, answer), frozenset())
            if mode == "normalized":
                if path in walks:
                    acc += 1.0 / len(walks)
            else:
                acc += float(len(walks)) if path in walks else 1.0
        total += acc / len(answers)
    return total / len(cluster.members)


def mine_rules(
    graph: KnowledgeGraph,
    examples: Sequence[QAExample],
    config: MiningConfig | None = None,
) -> dict[str, list[LogicRule]]:
    """Mine scored rules per question cluster.

    For every (question, answer) pair the highest-probability walk is
    retained (ties broken by the lexicographically smallest relation-id
    sequence). Retained rules are deduplicated and sorted by probability
    descending, ties again by id sequence.
    """
    config = config or MiningConfig()
    mined: dict[str, list[LogicRule]] = {}
    for cluster in cluster_questions(examples):
        index = build_walk_index(graph, cluster, config)
        candidates: set[RelationPath] = set()
        for walks in index.values():
            candidates.update(walks)
        probs = {
            path: rule_probability(path, cluster, index, config.mode)
            for path in candidates
        }
        retained: set[RelationPath] = set()
        for walks in index.values():
            if walks:
                retained.add(min(walks, key=lambda p: (-probs[p], p)))
        ordered = sorted(retained, key=lambda p: (-probs[p], p))
        mined[cluster.template] = [
            LogicRule(path, probability=probs[path]) for path in ordered
        ]
    return mined


def save_rules(
    rules_by_template: Mapping[str, Sequence[LogicRule]],
    graph: KnowledgeGraph,
    path: str | Path,
    mode: str = "normalized",
) -> None:
    """Write mined rules as one JSON record per line."""
    lines = []
    for template, rules in rules_by_template.items():
        for rule in rules:
            record = {
                "template": template,
                "relations": [graph.relation_name(r) for r in rule.relations],
                "probability": rule.probability,
                "mode": mode,
            }
            lines.append(json.dumps(record, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_rules(path: str | Path, graph: KnowledgeGraph) -> dict[str, list[LogicRule]]:
    """Read a rules file written by :func:`save_rules`."""
    rules: dict[str, list[LogicRule]] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                relations = tuple(
                    graph.relation_id(name) for name in record["relations"]
                )
                rule = LogicRule(relations, probability=record.get("probability"))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"rules file line {line_number}: {exc}") from exc
            rules.setdefault(record["template"], []).append(rule)
    return rules
