"""QA dataset loading, answer-set metrics, and the ablation harness."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .graph import KnowledgeGraph
from .llm import serialize_rule
from .mining import QAExample
from .pipeline import (
    RULE_SOURCE_RANDOM_POOL,
    RULE_SOURCE_RANDOM_SEQUENCES,
    Pipeline,
    PipelineResult,
)

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = ("full", "no_rule_inference", "no_rerank", "random_rule")

_BRACKET_SPAN = re.compile(r"\[([^\[\]]+)\]")


class QAParseError(ValueError):
    """A QA file line could not be parsed."""

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    examples: tuple[QAExample, ...]


@dataclass(frozen=True)
class EvalMetrics:
    """Macro-averaged metrics over the evaluated questions."""

    precision: float
    recall: float
    f1: float
    hits_at_1: float
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    split: str
    variant: str
    answer_threshold: float
    metrics: EvalMetrics
    rows: tuple[dict, ...]
    skipped: int

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "variant": self.variant,
            "answer_threshold": self.answer_threshold,
            "metrics": {
                "precision": self.metrics.precision,
                "recall": self.metrics.recall,
                "f1": self.metrics.f1,
                "hits_at_1": self.metrics.hits_at_1,
                "accuracy": self.metrics.accuracy,
            },
            "skipped": self.skipped,
            "questions": list(self.rows),
        }


def load_qa(source: Iterable[str], graph: KnowledgeGraph) -> list[QAExample]:
    """Parse ``question with one [topic] span<TAB>ans1|ans2|...`` lines.

    Brackets are stripped from the stored question. Answers are split on
    ``|`` and deduplicated; surfaces missing from the entity vocabulary are
    recorded on the example's ``unresolved`` field. A line whose topic is
    not in the vocabulary, or without exactly one bracketed span, is a
    parse error.
    """
    examples: list[QAExample] = []
    for line_number, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise QAParseError(
                f"expected 2 tab-separated fields, got {len(fields)}", line_number
            )
        question_raw, answer_field = fields
        spans = _BRACKET_SPAN.findall(question_raw)
        if len(spans) != 1:
            raise QAParseError(
                f"expected exactly one [topic] span, found {len(spans)}", line_number
            )
        topic_surface = spans[0]
        question = question_raw.replace(f"[{topic_surface}]", topic_surface)
        if not graph.has_entity(topic_surface):
            raise QAParseError(
                f"topic entity {topic_surface!r} not in the vocabulary", line_number
            )
        answers: list[int] = []
        unresolved: list[str] = []
        seen: set[str] = set()
        for surface in answer_field.split("|"):
            surface = surface.strip()
            if not surface or surface in seen:
                continue
            seen.add(surface)
            if graph.has_entity(surface):
                answers.append(graph.entity_id(surface))
            else:
                unresolved.append(surface)
        if unresolved:
            logger.warning(
                "line %d: %d answer(s) not in the vocabulary", line_number, len(unresolved)
            )
        examples.append(
            QAExample(
                question=question,
                topic_entity=graph.entity_id(topic_surface),
                topic_surface=topic_surface,
                answers=frozenset(answers),
                unresolved=tuple(unresolved),
            )
        )
    return examples


def hits_at_1(ranked: Sequence, gold: frozenset[int] | set[int]) -> int:
    """1 iff the top-ranked prediction is a gold answer."""
    if not ranked:
        return 0
    return 1 if ranked[0].entity in gold else 0


def prf1(pred: set[int] | frozenset[int], gold: set[int] | frozenset[int]) -> tuple[float, float, float]:
    """Set precision, recall, and F1 of a prediction against gold answers."""
    if not gold:
        raise ValueError("gold answer set must be non-empty")
    hit = len(set(pred) & set(gold))
    precision = hit / len(pred) if pred else 0.0
    recall = hit / len(gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def accuracy(pred: set[int] | frozenset[int], gold: set[int] | frozenset[int]) -> int:
    """Exact-set match: 1 iff the prediction equals the gold set."""
    if not gold:
        raise ValueError("gold answer set must be non-empty")
    return 1 if set(pred) == set(gold) else 0


def evaluate(
    pipeline: Pipeline,
    split: DatasetSplit,
    answer_threshold: float = 0.5,
    variant: str = "full",
    threads: int = 1,
) -> EvalReport:
    """Run the pipeline over a split and macro-average per-question metrics.

    The prediction set of a question is every candidate scoring at least
    ``answer_threshold``; Hits@1 uses the (possibly reranked) order.
    Examples without any resolvable gold answer are skipped and counted.
    Rows are emitted in dataset order regardless of thread count.
    """
    if not split.examples:
        raise ValueError("cannot evaluate an empty split")

    def run(task: tuple[int, QAExample]) -> PipelineResult:
        index, example = task
        return pipeline.answer(
            example.question, example.topic_entity, example.topic_surface, index
        )

    tasks = list(enumerate(split.examples))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    rows: list[dict] = []
    totals = {"precision": 0.0, "recall": 0.0, "f1": 0.0, "hits_at_1": 0.0, "accuracy": 0.0}
    evaluated = 0
    for example, result in zip(split.examples, results):
        row: dict = {
            "question": example.question,
            "topic": example.topic_surface,
            "gold": sorted(pipeline.graph.entity_name(a) for a in example.answers),
            "predictions": [
                {"entity": pipeline.graph.entity_name(a.entity), "score": a.score}
                for a in result.answers
            ],
            "selected_rules": [
                serialize_rule(rule, pipeline.graph.relation_names)
                for rule in result.selected_rules
            ],
            "used_rule_fallback": result.used_rule_fallback,
        }
        if example.unresolved:
            row["unresolved_answers"] = list(example.unresolved)
        if not example.answers:
            row["skipped"] = True
            rows.append(row)
            continue
        pred = {a.entity for a in result.answers if a.score >= answer_threshold}
        p, r, f1_score = prf1(pred, example.answers)
        h = hits_at_1(result.answers, example.answers)
        acc = accuracy(pred, example.answers)
        row["metrics"] = {
            "precision": p,
            "recall": r,
            "f1": f1_score,
            "hits_at_1": h,
            "accuracy": acc,
        }
        rows.append(row)
        totals["precision"] += p
        totals["recall"] += r
        totals["f1"] += f1_score
        totals["hits_at_1"] += h
        totals["accuracy"] += acc
        evaluated += 1
    if evaluated == 0:
        raise ValueError("no evaluable examples in the split (all gold sets unresolved)")
    metrics = EvalMetrics(
        precision=totals["precision"] / evaluated,
        recall=totals["recall"] / evaluated,
        f1=totals["f1"] / evaluated,
        hits_at_1=totals["hits_at_1"] / evaluated,
        accuracy=totals["accuracy"] / evaluated,
    )
    return EvalReport(
        split=split.name,
        variant=variant,
        answer_threshold=answer_threshold,
        metrics=metrics,
        rows=tuple(rows),
        skipped=len(rows) - evaluated,
    )


def run_ablation(
    pipeline: Pipeline,
    split: DatasetSplit,
    seed: int = 0,
    answer_threshold: float = 0.5,
    variants: Sequence[str] = ABLATION_VARIANTS,
    threads: int = 1,
) -> dict[str, EvalReport]:
    """Evaluate pipeline variants on the same split.

    ``no_rule_inference`` swaps mined rules for uniformly sampled relation
    sequences, ``random_rule`` draws from the mined pool ignoring
    probabilities, and ``no_rerank`` skips the reranking stage. Draws are
    seeded, so a fixed seed and a deterministic backend give identical
    reports across runs.
    """
    if not split.examples:
        raise ValueError("cannot run ablations on an empty split")
    reports: dict[str, EvalReport] = {}
    for variant in variants:
        if variant == "full":
            candidate = pipeline.variant(seed=seed)
        elif variant == "no_rule_inference":
            candidate = pipeline.variant(rule_source=RULE_SOURCE_RANDOM_SEQUENCES, seed=seed)
        elif variant == "no_rerank":
            candidate = pipeline.variant(rerank_enabled=False, seed=seed)
        elif variant == "random_rule":
            candidate = pipeline.variant(rule_source=RULE_SOURCE_RANDOM_POOL, seed=seed)
        else:
            raise ValueError(f"unknown ablation variant {variant!r}")
        reports[variant] = evaluate(
            candidate, split, answer_threshold, variant=variant, threads=threads
        )
    return reports
