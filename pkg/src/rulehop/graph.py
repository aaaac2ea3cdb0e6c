"""In-memory knowledge graph with dense vocabularies and adjacency indices."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

INVERSE_SUFFIX = "^{-1}"


class TripleParseError(ValueError):
    """A line in a triple file could not be parsed."""

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class KnowledgeGraph:
    """Immutable triple store over dense integer entity and relation ids.

    Ids are assigned in first-appearance order, so vocabularies (and any
    serialized output) are deterministic for a given input. Duplicate
    triples collapse to one. Instances never mutate after construction and
    are safe for unrestricted concurrent reads.

    After :meth:`with_inverses`, relation ``r`` has inverse
    ``r + base_relation_count`` and the inverse surface form is the base
    name suffixed with ``^{-1}``.
    """

    def __init__(
        self,
        entity_names: Sequence[str],
        relation_names: Sequence[str],
        triples: Iterable[tuple[int, int, int]],
        base_relation_count: int | None = None,
    ) -> None:
        self.entity_names: tuple[str, ...] = tuple(entity_names)
        self.relation_names: tuple[str, ...] = tuple(relation_names)
        if base_relation_count is None:
            base_relation_count = len(self.relation_names)
        self.base_relation_count = base_relation_count

        seen: set[tuple[int, int, int]] = set()
        deduped: list[tuple[int, int, int]] = []
        n_ent = len(self.entity_names)
        n_rel = len(self.relation_names)
        for triple in triples:
            h, r, t = triple
            if not (0 <= h < n_ent and 0 <= t < n_ent):
                raise ValueError(f"entity id out of range in triple {triple!r}")
            if not (0 <= r < n_rel):
                raise ValueError(f"relation id out of range in triple {triple!r}")
            if triple not in seen:
                seen.add(triple)
                deduped.append(triple)
        self.triples: tuple[tuple[int, int, int], ...] = tuple(deduped)
        self._triple_set = frozenset(deduped)

        out: dict[tuple[int, int], list[int]] = {}
        adj: dict[int, list[tuple[int, int]]] = {}
        for h, r, t in self.triples:
            out.setdefault((h, r), []).append(t)
            adj.setdefault(h, []).append((r, t))
        self._out: dict[tuple[int, int], tuple[int, ...]] = {
            key: tuple(sorted(tails)) for key, tails in out.items()
        }
        self._adj: dict[int, tuple[tuple[int, int], ...]] = {
            key: tuple(sorted(edges)) for key, edges in adj.items()
        }
        self._entity_ids = {name: i for i, name in enumerate(self.entity_names)}
        self._relation_ids = {name: i for i, name in enumerate(self.relation_names)}
        if len(self._entity_ids) != n_ent:
            raise ValueError("duplicate entity surface forms")
        if len(self._relation_ids) != n_rel:
            raise ValueError("duplicate relation surface forms")

    # -- vocabulary ------------------------------------------------------

    @property
    def entity_count(self) -> int:
        return len(self.entity_names)

    @property
    def relation_count(self) -> int:
        return len(self.relation_names)

    @property
    def triple_count(self) -> int:
        return len(self.triples)

    @property
    def is_augmented(self) -> bool:
        return len(self.relation_names) != self.base_relation_count

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise ValueError(f"unknown entity surface form {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise ValueError(f"unknown relation surface form {name!r}") from None

    def entity_name(self, entity: int) -> str:
        self._check_entity(entity)
        return self.entity_names[entity]

    def relation_name(self, relation: int) -> str:
        self._check_relation(relation)
        return self.relation_names[relation]

    def has_entity(self, name: str) -> bool:
        return name in self._entity_ids

    def is_inverse_relation(self, relation: int) -> bool:
        self._check_relation(relation)
        return relation >= self.base_relation_count

    def inverse_relation(self, relation: int) -> int:
        """Id of the inverse of ``relation``; requires an augmented graph."""
        self._check_relation(relation)
        if not self.is_augmented:
            raise ValueError("graph has no inverse relations; call with_inverses first")
        if relation < self.base_relation_count:
            return relation + self.base_relation_count
        return relation - self.base_relation_count

    # -- queries ---------------------------------------------------------

    def neighbors(self, entity: int, relation: int) -> tuple[int, ...]:
        """Tails t with (entity, relation, t) in the graph, ascending by id."""
        self._check_entity(entity)
        self._check_relation(relation)
        return self._out.get((entity, relation), ())

    def edges_from(self, entity: int) -> tuple[tuple[int, int], ...]:
        """All outgoing (relation, tail) pairs of ``entity``, sorted."""
        self._check_entity(entity)
        return self._adj.get(entity, ())

    def has_triple(self, head: int, relation: int, tail: int) -> bool:
        self._check_entity(head)
        self._check_relation(relation)
        self._check_entity(tail)
        return (head, relation, tail) in self._triple_set

    def _check_entity(self, entity: int) -> None:
        if not 0 <= entity < len(self.entity_names):
            raise ValueError(f"entity id {entity} out of range")

    def _check_relation(self, relation: int) -> None:
        if not 0 <= relation < len(self.relation_names):
            raise ValueError(f"relation id {relation} out of range")

    # -- construction ----------------------------------------------------

    def with_inverses(self) -> "KnowledgeGraph":
        """Return a copy where every (h, r, t) also appears as (t, r^-1, h).

        Relation and triple counts double. Raises if the graph was already
        augmented.
        """
        if self.is_augmented:
            raise ValueError("graph already contains inverse relations")
        base = len(self.relation_names)
        inverse_names = [name + INVERSE_SUFFIX for name in self.relation_names]
        for name in inverse_names:
            if name in self._relation_ids:
                raise ValueError(f"relation name collision for inverse {name!r}")
        new_triples = list(self.triples)
        new_triples.extend((t, r + base, h) for h, r, t in self.triples)
        return KnowledgeGraph(
            self.entity_names,
            tuple(self.relation_names) + tuple(inverse_names),
            new_triples,
            base_relation_count=base,
        )

    def stats(self) -> dict:
        return {
            "entities": self.entity_count,
            "relations": self.relation_count,
            "triples": self.triple_count,
            "augmented": self.is_augmented,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entity_names == other.entity_names
            and self.relation_names == other.relation_names
            and self.triples == other.triples
            and self.base_relation_count == other.base_relation_count
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={self.entity_count}, "
            f"relations={self.relation_count}, triples={self.triple_count})"
        )


def load_triples(source: Iterable[str]) -> KnowledgeGraph:
    """Parse a line-oriented TSV triple stream into a graph.

    Each non-empty, non-comment line must be ``head<TAB>relation<TAB>tail``.
    Lines starting with ``#`` and blank lines are ignored. Vocabularies are
    assigned in first-appearance order and duplicate triples are dropped.
    """
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    for line_number, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TripleParseError(
                f"expected 3 tab-separated fields, got {len(fields)}", line_number
            )
        head, relation, tail = fields
        if not head or not relation or not tail:
            raise TripleParseError("empty field", line_number)
        h = entity_ids.setdefault(head, len(entity_ids))
        r = relation_ids.setdefault(relation, len(relation_ids))
        t = entity_ids.setdefault(tail, len(entity_ids))
        triples.append((h, r, t))
    return KnowledgeGraph(tuple(entity_ids), tuple(relation_ids), triples)


def manifest_path(path: str | Path) -> Path:
    """Sidecar manifest location for a serialized graph file."""
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def save_graph(graph: KnowledgeGraph, path: str | Path) -> None:
    """Write the triple list as TSV plus a JSON manifest sidecar.

    The TSV preserves insertion order so that reloading reproduces the
    original vocabularies; the manifest records counts and vocabularies and
    lets :func:`load_graph` restore inverse-relation bookkeeping.
    """
    path = Path(path)
    lines = [
        f"{graph.entity_names[h]}\t{graph.relation_names[r]}\t{graph.entity_names[t]}"
        for h, r, t in graph.triples
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    manifest = {
        "entity_count": graph.entity_count,
        "relation_count": graph.relation_count,
        "triple_count": graph.triple_count,
        "base_relation_count": graph.base_relation_count,
        "entities": list(graph.entity_names),
        "relations": list(graph.relation_names),
    }
    manifest_path(path).write_text(
        json.dumps(manifest, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_graph(path: str | Path) -> KnowledgeGraph:
    """Load a graph saved by :func:`save_graph`.

    Falls back to plain :func:`load_triples` parsing when no manifest
    sidecar is present.
    """
    path = Path(path)
    sidecar = manifest_path(path)
    with path.open("r", encoding="utf-8") as handle:
        if not sidecar.exists():
            return load_triples(handle)
        manifest = json.loads(sidecar.read_text(encoding="utf-8"))
        base = load_triples(handle)
    entities = tuple(manifest["entities"])
    relations = tuple(manifest["relations"])
    entity_ids = {name: i for i, name in enumerate(entities)}
    relation_ids = {name: i for i, name in enumerate(relations)}
    try:
        triples = [
            (
                entity_ids[base.entity_names[h]],
                relation_ids[base.relation_names[r]],
                entity_ids[base.entity_names[t]],
            )
            for h, r, t in base.triples
        ]
    except KeyError as exc:
        raise ValueError(f"triple file references name missing from manifest: {exc}")
    graph = KnowledgeGraph(
        entities, relations, triples, base_relation_count=manifest["base_relation_count"]
    )
    if graph.triple_count != manifest["triple_count"]:
        raise ValueError(
            f"manifest expects {manifest['triple_count']} triples, "
            f"file holds {graph.triple_count}"
        )
    return graph
