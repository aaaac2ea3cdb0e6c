"""End-to-end question answering: rule selection, retrieval, reranking."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embeddings import ComplexEmbeddings
from .graph import KnowledgeGraph
from .llm import CompletionBackend, NullBackend, rerank, select_rules
from .mining import LogicRule, mask_topic
from .retrieval import BeamConfig, ScoredAnswer, retrieve

logger = logging.getLogger(__name__)

RULE_SOURCE_MINED = "mined"
RULE_SOURCE_RANDOM_POOL = "random_pool"
RULE_SOURCE_RANDOM_SEQUENCES = "random_sequences"


@dataclass(frozen=True)
class PipelineResult:
    """Ranked answers for one question plus the rules that produced them."""

    answers: tuple[ScoredAnswer, ...]
    selected_rules: tuple[LogicRule, ...]
    used_rule_fallback: bool


class Pipeline:
    """Wire the trained artifacts into a per-question answerer.

    ``rule_source`` switches how candidate rules are chosen, mainly for
    ablations: ``mined`` uses the question's cluster rules refined by the
    backend (or the probability fallback), ``random_pool`` draws uniformly
    from the union of all mined rules ignoring probabilities, and
    ``random_sequences`` draws uniformly from all relation sequences of
    length at most ``max_rule_len``.
    """

    def __init__(
        self,
        graph: KnowledgeGraph,
        embeddings: ComplexEmbeddings,
        rules_by_template: Mapping[str, Sequence[LogicRule]],
        backend: CompletionBackend | None = None,
        beam: BeamConfig | None = None,
        max_rules: int = 2,
        shots: Sequence[str] = (),
        rerank_enabled: bool = True,
        rule_source: str = RULE_SOURCE_MINED,
        max_rule_len: int = 2,
        seed: int = 0,
    ) -> None:
        if embeddings.entity_count != graph.entity_count:
            raise ValueError("embedding entity table does not match the graph vocabulary")
        if embeddings.relation_count != graph.relation_count:
            raise ValueError("embedding relation table does not match the graph vocabulary")
        if max_rules < 1:
            raise ValueError("max_rules must be positive")
        if rule_source not in (
            RULE_SOURCE_MINED,
            RULE_SOURCE_RANDOM_POOL,
            RULE_SOURCE_RANDOM_SEQUENCES,
        ):
            raise ValueError(f"unknown rule source {rule_source!r}")
        self.graph = graph
        self.embeddings = embeddings
        self.rules_by_template = {
            template: tuple(rules) for template, rules in rules_by_template.items()
        }
        self.backend = backend if backend is not None else NullBackend()
        self.beam = beam if beam is not None else BeamConfig()
        self.max_rules = max_rules
        self.shots = tuple(shots)
        self.rerank_enabled = rerank_enabled
        self.rule_source = rule_source
        self.max_rule_len = max_rule_len
        self.seed = seed
        pool: dict[tuple[int, ...], LogicRule] = {}
        for rules in self.rules_by_template.values():
            for rule in rules:
                pool.setdefault(rule.relations, rule)
        # canonical order so draws depend only on the seed, not dict history
        self.rule_pool: tuple[LogicRule, ...] = tuple(
            pool[key] for key in sorted(pool)
        )

    def variant(self, **changes) -> "Pipeline":
        """A copy of this pipeline with some settings replaced."""
        settings = dict(
            graph=self.graph,
            embeddings=self.embeddings,
            rules_by_template=self.rules_by_template,
            backend=self.backend,
            beam=self.beam,
            max_rules=self.max_rules,
            shots=self.shots,
            rerank_enabled=self.rerank_enabled,
            rule_source=self.rule_source,
            max_rule_len=self.max_rule_len,
            seed=self.seed,
        )
        settings.update(changes)
        return Pipeline(**settings)

    def _draw_pool_rules(self, rng: np.random.Generator) -> tuple[LogicRule, ...]:
        if not self.rule_pool:
            return ()
        k = min(self.max_rules, len(self.rule_pool))
        picks = rng.choice(len(self.rule_pool), size=k, replace=False)
        return tuple(self.rule_pool[int(i)] for i in sorted(picks))

    def _draw_sequence_rules(self, rng: np.random.Generator) -> tuple[LogicRule, ...]:
        """Uniform draws over all relation sequences of length 1..max_rule_len."""
        m = self.graph.relation_count
        if m == 0:
            return ()
        sizes = [m**length for length in range(1, self.max_rule_len + 1)]
        total = sum(sizes)
        drawn: dict[tuple[int, ...], LogicRule] = {}
        attempts = 0
        while len(drawn) < self.max_rules and attempts < 20 * self.max_rules:
            attempts += 1
            index = int(rng.integers(total))
            length = 1
            for size in sizes:
                if index < size:
                    break
                index -= size
                length += 1
            relations = []
            for _ in range(length):
                relations.append(index % m)
                index //= m
            key = tuple(relations)
            drawn.setdefault(key, LogicRule(key))
        return tuple(drawn.values())

    def candidate_rules(self, template: str, question_index: int = 0) -> tuple[LogicRule, ...]:
        if self.rule_source == RULE_SOURCE_MINED:
            return self.rules_by_template.get(template, ())
        # seed the draw per question so results are thread-order independent
        rng = np.random.default_rng((self.seed, question_index))
        if self.rule_source == RULE_SOURCE_RANDOM_POOL:
            return self._draw_pool_rules(rng)
        return self._draw_sequence_rules(rng)

    def answer(
        self,
        question: str,
        topic_entity: int,
        topic_surface: str,
        question_index: int = 0,
    ) -> PipelineResult:
        """Answer one question; empty result when no rules apply."""
        template = mask_topic(question, topic_surface)
        candidates = self.candidate_rules(template, question_index)
        if not candidates:
            logger.debug("no candidate rules for template %r", template)
            return PipelineResult((), (), used_rule_fallback=False)
        if self.rule_source == RULE_SOURCE_MINED:
            selection = select_rules(
                self.backend,
                question,
                candidates,
                self.max_rules,
                self.graph.relation_names,
                self.shots,
            )
            rules, used_fallback = selection.rules, selection.used_fallback
        else:
            rules, used_fallback = candidates, False
        answers = retrieve(self.graph, self.embeddings, topic_entity, rules, self.beam)
        if self.rerank_enabled and answers:
            answers = rerank(
                self.backend,
                question,
                answers,
                self.graph.entity_names,
                self.graph.relation_names,
            )
        return PipelineResult(tuple(answers), rules, used_fallback)
