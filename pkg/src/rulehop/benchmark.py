"""Seeded synthetic family-tree benchmark in the standard triple/QA formats.

Families carry redundant kinship structure (children linked from both
parents, two interchangeable marriage relations, inverse edges after
augmentation), so most questions are answerable through several logic
rules. Deleting a fraction of the gold-path edges of the test questions
emulates an incomplete graph whose missing steps only embedding-space
reasoning can cross.

Gold answers are computed from the generated family structure, not by
graph traversal, so they stay correct after edge deletion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

Edge = tuple[str, str, str]

HAS_BROTHER = "hasBrother"
HAS_CHILD = "hasChild"
IS_MARRIED_TO = "isMarriedTo"
HAS_SPOUSE = "hasSpouse"
HAS_FATHER = "hasFather"


@dataclass(frozen=True)
class FamilyBenchmarkConfig:
    families: int = 75
    test_size: int = 200
    train_size: int = 300
    delete_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.families < 2:
            raise ValueError("need at least 2 families for cross-family marriages")
        if self.test_size < 1 or self.train_size < 1:
            raise ValueError("split sizes must be positive")
        if not 0.0 <= self.delete_fraction < 1.0:
            raise ValueError("delete_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class BenchmarkQuestion:
    """A QA instance plus the canonical graph edges its gold paths use."""

    text: str
    topic: str
    answers: tuple[str, ...]
    gold_edges: tuple[Edge, ...]
    kind: str


@dataclass(frozen=True)
class FamilyBenchmark:
    kb_lines: tuple[str, ...]
    train_lines: tuple[str, ...]
    test_lines: tuple[str, ...]
    test_questions: tuple[BenchmarkQuestion, ...]
    deleted_edges: tuple[Edge, ...]
    config: FamilyBenchmarkConfig


def _family_edges(i: int, n: int) -> tuple[list[Edge], dict]:
    """Edges and a name table for family ``i`` (spouses drawn from family i+1)."""
    father = f"father_{i:03d}"
    mother = f"mother_{i:03d}"
    son = f"son_{i:03d}"
    daughter_a = f"daughtera_{i:03d}"
    daughter_b = f"daughterb_{i:03d}"
    daughter_c = f"daughterc_{i:03d}"
    wife = f"daughterb_{(i + 1) % n:03d}"
    gson = f"gson_{i:03d}"
    gdaughter = f"gdaughter_{i:03d}"
    kids = (son, daughter_a, daughter_b, daughter_c)
    grandkids = (gson, gdaughter)

    edges: list[Edge] = [
        (father, IS_MARRIED_TO, mother),
        (mother, IS_MARRIED_TO, father),
        (father, HAS_SPOUSE, mother),
        (mother, HAS_SPOUSE, father),
    ]
    for kid in kids:
        edges.append((father, HAS_CHILD, kid))
        edges.append((mother, HAS_CHILD, kid))
        edges.append((kid, HAS_FATHER, father))
    edges.append((daughter_a, HAS_BROTHER, son))
    edges.append((daughter_b, HAS_BROTHER, son))
    edges.append((daughter_c, HAS_BROTHER, son))
    edges.extend(
        [
            (son, IS_MARRIED_TO, wife),
            (wife, IS_MARRIED_TO, son),
            (son, HAS_SPOUSE, wife),
            (wife, HAS_SPOUSE, son),
        ]
    )
    for g in grandkids:
        edges.append((son, HAS_CHILD, g))
        edges.append((wife, HAS_CHILD, g))
        edges.append((g, HAS_FATHER, son))
    edges.append((gdaughter, HAS_BROTHER, gson))

    names = {
        "father": father,
        "mother": mother,
        "son": son,
        "daughters": (daughter_a, daughter_b, daughter_c),
        "married_daughter": daughter_b,
        "wife": wife,
        "kids": kids,
        "grandkids": grandkids,
    }
    return edges, names


def _questions_for_family(i: int, n: int) -> list[BenchmarkQuestion]:
    _, fam = _family_edges(i, n)
    _, prev = _family_edges((i - 1) % n, n)
    _, nxt = _family_edges((i + 1) % n, n)
    son = fam["son"]
    questions: list[BenchmarkQuestion] = []

    for topic in fam["daughters"]:
        questions.append(
            BenchmarkQuestion(
                text=f"who is the child of [{topic}]'s brother?",
                topic=topic,
                answers=fam["grandkids"],
                gold_edges=(
                    (topic, HAS_BROTHER, son),
                    *((son, HAS_CHILD, g) for g in fam["grandkids"]),
                ),
                kind="child_of_brother",
            )
        )
        questions.append(
            BenchmarkQuestion(
                text=f"who is married to [{topic}]'s brother?",
                topic=topic,
                answers=(fam["wife"],),
                gold_edges=((topic, HAS_BROTHER, son), (son, IS_MARRIED_TO, fam["wife"])),
                kind="spouse_of_brother",
            )
        )

    # gen-2 couples: the son (married into family i+1) and daughter_b (married
    # to the son of family i-1) both have in-laws inside the graph
    parent_cases = [
        (son, fam["wife"], nxt["father"], nxt["mother"]),
        (fam["married_daughter"], prev["son"], prev["father"], prev["mother"]),
    ]
    for topic, spouse, father_in_law, mother_in_law in parent_cases:
        questions.append(
            BenchmarkQuestion(
                text=f"who is a parent of [{topic}]'s spouse?",
                topic=topic,
                answers=(father_in_law, mother_in_law),
                gold_edges=(
                    (topic, IS_MARRIED_TO, spouse),
                    (spouse, HAS_FATHER, father_in_law),
                    (mother_in_law, HAS_CHILD, spouse),
                ),
                kind="parent_of_spouse",
            )
        )

    child_cases = [
        (fam["father"], fam["mother"], fam["kids"]),
        (fam["mother"], fam["father"], fam["kids"]),
        (son, fam["wife"], fam["grandkids"]),
        (fam["married_daughter"], prev["son"], prev["grandkids"]),
    ]
    for topic, spouse, kids in child_cases:
        questions.append(
            BenchmarkQuestion(
                text=f"who is a child of [{topic}]'s spouse?",
                topic=topic,
                answers=tuple(kids),
                gold_edges=(
                    (topic, IS_MARRIED_TO, spouse),
                    *((spouse, HAS_CHILD, kid) for kid in kids),
                ),
                kind="child_of_spouse",
            )
        )
    return questions


def generate_family_benchmark(config: FamilyBenchmarkConfig) -> FamilyBenchmark:
    """Build the knowledge base and question splits for one seeded benchmark."""
    n = config.families
    edges: list[Edge] = []
    questions: list[BenchmarkQuestion] = []
    for i in range(n):
        family_edges, _ = _family_edges(i, n)
        edges.extend(family_edges)
        questions.extend(_questions_for_family(i, n))
    # the marriage block of family i duplicates edges emitted by family i+1
    seen: set[Edge] = set()
    edges = [e for e in edges if not (e in seen or seen.add(e))]

    if config.test_size + config.train_size > len(questions):
        raise ValueError(
            f"requested {config.test_size + config.train_size} questions, "
            f"only {len(questions)} generated; raise `families`"
        )
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(questions))
    test = [questions[i] for i in order[: config.test_size]]
    train = [
        questions[i]
        for i in order[config.test_size : config.test_size + config.train_size]
    ]

    deleted: set[Edge] = set()
    if config.delete_fraction > 0:
        gold_union = sorted({edge for q in test for edge in q.gold_edges})
        n_delete = int(round(config.delete_fraction * len(gold_union)))
        picks = rng.choice(len(gold_union), size=n_delete, replace=False)
        deleted = {gold_union[int(i)] for i in picks}

    kb_lines = tuple(
        f"{h}\t{r}\t{t}" for h, r, t in edges if (h, r, t) not in deleted
    )
    train_lines = tuple(f"{q.text}\t{'|'.join(q.answers)}" for q in train)
    test_lines = tuple(f"{q.text}\t{'|'.join(q.answers)}" for q in test)
    return FamilyBenchmark(
        kb_lines=kb_lines,
        train_lines=train_lines,
        test_lines=test_lines,
        test_questions=tuple(test),
        deleted_edges=tuple(sorted(deleted)),
        config=config,
    )


def write_benchmark(benchmark: FamilyBenchmark, out_dir: str | Path) -> dict[str, Path]:
    """Write kb.tsv, train_qa.tsv, and test_qa.tsv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "kb": out / "kb.tsv",
        "train_qa": out / "train_qa.tsv",
        "test_qa": out / "test_qa.tsv",
    }
    paths["kb"].write_text("\n".join(benchmark.kb_lines) + "\n", encoding="utf-8")
    paths["train_qa"].write_text("\n".join(benchmark.train_lines) + "\n", encoding="utf-8")
    paths["test_qa"].write_text("\n".join(benchmark.test_lines) + "\n", encoding="utf-8")
    if benchmark.deleted_edges:
        deleted = out / "deleted_edges.tsv"
        deleted.write_text(
            "\n".join(f"{h}\t{r}\t{t}" for h, r, t in benchmark.deleted_edges) + "\n",
            encoding="utf-8",
        )
        paths["deleted"] = deleted
    return paths
