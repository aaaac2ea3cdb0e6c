"""Rule execution in embedding space with fuzzy path probabilities.

A rule is walked from the topic entity one relation at a time. Steps that
exist in the graph carry probability exactly 1.0; missing steps fall back
to the squashed embedding score, so incomplete graphs still yield ranked
candidates. A path's probability is the product of its step probabilities,
an entity keeps its single best path per rule, and evidence from several
rules merges with noisy-OR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embeddings import ComplexEmbeddings, score_all_tails, sigmoid
from .graph import KnowledgeGraph
from .mining import LogicRule

Expansion = tuple[int, float]


@dataclass(frozen=True)
class ReasoningPath:
    """A grounded entity/relation alternation with per-step probabilities."""

    entities: tuple[int, ...]
    relations: tuple[int, ...]
    step_probs: tuple[float, ...]
    cumulative: float

    def __post_init__(self) -> None:
        if len(self.entities) != len(self.relations) + 1:
            raise ValueError("path needs one more entity than relations")
        if len(self.step_probs) != len(self.relations):
            raise ValueError("one step probability per relation required")
        if abs(self.cumulative - math.prod(self.step_probs)) > 1e-12:
            raise ValueError("cumulative probability is not the product of the steps")
        if not 0.0 <= self.cumulative <= 1.0:
            raise ValueError("cumulative probability outside [0, 1]")


def make_path(
    entities: Sequence[int], relations: Sequence[int], step_probs: Sequence[float]
) -> ReasoningPath:
    """Build a path with the cumulative product filled in."""
    probs = tuple(float(p) for p in step_probs)
    return ReasoningPath(
        entities=tuple(entities),
        relations=tuple(relations),
        step_probs=probs,
        cumulative=path_probability(probs),
    )


@dataclass(frozen=True)
class ScoredAnswer:
    """A candidate answer entity with its aggregated probability and support."""

    entity: int
    score: float
    paths: tuple[ReasoningPath, ...]

    def __post_init__(self) -> None:
        if not self.paths:
            raise ValueError("a scored answer needs at least one supporting path")


@dataclass(frozen=True)
class BeamConfig:
    """Search width, embedding fan-out per step, and optional pruning floor."""

    beam_width: int = 64
    embedding_fanout: int = 128
    min_step_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError("beam_width must be at least 1")
        if self.embedding_fanout < 0:
            raise ValueError("embedding_fanout must be non-negative")
        if not 0.0 <= self.min_step_prob <= 1.0:
            raise ValueError("min_step_prob must lie in [0, 1]")


def path_probability(step_probs: Sequence[float]) -> float:
    """Product of the step probabilities; the empty product is 1."""
    for p in step_probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"step probability {p} outside [0, 1]")
    return math.prod(step_probs)


def expand(
    graph: KnowledgeGraph,
    emb: ComplexEmbeddings,
    source: int,
    relation: int,
    config: BeamConfig,
) -> list[Expansion]:
    """One-step candidates from ``source`` via ``relation``.

    Graph neighbors come back with probability exactly 1.0. The top
    ``embedding_fanout`` non-neighbors by squashed embedding score are
    appended, each at least ``min_step_prob``. Sorted by probability
    descending, then entity id.
    """
    kg_tails = graph.neighbors(source, relation)
    out: list[Expansion] = [(t, 1.0) for t in kg_tails]
    if config.embedding_fanout > 0 and graph.entity_count > len(kg_tails):
        probs = sigmoid(score_all_tails(emb, source, relation))
        order = np.lexsort((np.arange(len(probs)), -probs))
        kg_set = set(kg_tails)
        taken = 0
        for idx in order:
            if taken >= config.embedding_fanout:
                break
            entity = int(idx)
            if entity in kg_set:
                continue
            p = float(probs[entity])
            if p < config.min_step_prob:
                break
            out.append((entity, p))
            taken += 1
    out.sort(key=lambda pair: (-pair[1], pair[0]))
    return out


def beam_search(
    graph: KnowledgeGraph,
    emb: ComplexEmbeddings,
    topic: int,
    rule: LogicRule,
    config: BeamConfig,
) -> list[ScoredAnswer]:
    """Execute one rule from the topic entity, keeping the best paths per depth.

    At each depth the frontier holds at most ``beam_width`` partial paths,
    one per terminal entity (a dominated path ending at the same entity can
    never produce a better continuation, so only the best survives).
    Returns one answer per final entity, scored by its best path, sorted by
    score descending then entity id.
    """
    graph._check_entity(topic)
    for relation in rule.relations:
        graph._check_relation(relation)

    # frontier entries: terminal -> (cumulative, entity tuple, step prob tuple)
    frontier: dict[int, tuple[float, tuple[int, ...], tuple[float, ...]]] = {
        topic: (1.0, (topic,), ())
    }
    for relation in rule.relations:
        expansions: dict[int, list[Expansion]] = {}
        nxt: dict[int, tuple[float, tuple[int, ...], tuple[float, ...]]] = {}
        for source, (cum, entities, probs) in frontier.items():
            if source not in expansions:
                expansions[source] = expand(graph, emb, source, relation, config)
            for tail, p in expansions[source]:
                new_cum = cum * p
                incumbent = nxt.get(tail)
                if incumbent is not None:
                    if new_cum < incumbent[0]:
                        continue
                    if new_cum == incumbent[0] and entities + (tail,) >= incumbent[1]:
                        continue
                nxt[tail] = (new_cum, entities + (tail,), probs + (p,))
        ranked = sorted(nxt.items(), key=lambda item: (-item[1][0], item[0]))
        frontier = dict(ranked[: config.beam_width])
        if not frontier:
            return []

    answers = [
        ScoredAnswer(
            entity=terminal,
            score=cum,
            paths=(
                ReasoningPath(
                    entities=entities,
                    relations=rule.relations,
                    step_probs=probs,
                    cumulative=cum,
                ),
            ),
        )
        for terminal, (cum, entities, probs) in frontier.items()
    ]
    answers.sort(key=lambda a: (-a.score, a.entity))
    return answers


def retrieve(
    graph: KnowledgeGraph,
    emb: ComplexEmbeddings,
    topic: int,
    rules: Sequence[LogicRule],
    config: BeamConfig,
) -> list[ScoredAnswer]:
    """Run every rule and merge per-entity scores with noisy-OR.

    Duplicate rules (same relation sequence) are applied once. Supporting
    paths from all rules are attached best-first. The output is invariant
    to the ordering of the input rules.
    """
    if not rules:
        raise ValueError("retrieve needs at least one rule")
    unique: dict[tuple[int, ...], LogicRule] = {}
    for rule in rules:
        unique.setdefault(rule.relations, rule)

    per_entity_scores: dict[int, list[float]] = {}
    per_entity_paths: dict[int, list[ReasoningPath]] = {}
    for rule in unique.values():
        for answer in beam_search(graph, emb, topic, rule, config):
            per_entity_scores.setdefault(answer.entity, []).append(answer.score)
            per_entity_paths.setdefault(answer.entity, []).extend(answer.paths)

    merged: list[ScoredAnswer] = []
    for entity, scores in per_entity_scores.items():
        # sort factors so the float product is identical for any rule order
        complement = 1.0
        for s in sorted(scores, reverse=True):
            complement *= 1.0 - s
        paths = tuple(
            sorted(
                per_entity_paths[entity],
                key=lambda p: (-p.cumulative, p.entities, p.relations),
            )
        )
        merged.append(ScoredAnswer(entity=entity, score=1.0 - complement, paths=paths))
    merged.sort(key=lambda a: (-a.score, a.entity))
    return merged
