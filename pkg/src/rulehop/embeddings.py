"""Complex-valued link-prediction embeddings and their SGD trainer.

A triple (h, r, t) is scored as the real part of the componentwise complex
triple product with conjugated tail, Re(<r, e_h, conj(e_t)>). The fuzzy
step probability of an edge is exactly 1 for triples present in the graph
and the logistic squash of the raw score otherwise, so known facts always
dominate predicted ones.

Tables are stored as little-endian float32 (matching the checkpoint
format); all scoring and gradient arithmetic upcasts to float64.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, Sequence

import numpy as np

from .graph import KnowledgeGraph

logger = logging.getLogger(__name__)

Triple = tuple[int, int, int]

CHECKPOINT_FORMAT = "complex-embeddings-v1"


class CheckpointError(ValueError):
    """A checkpoint file is truncated, corrupt, or inconsistent."""


def sigmoid(x):
    """Numerically stable logistic function, elementwise on arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class ComplexEmbeddings:
    """Entity and relation embedding tables split into real and imaginary parts."""

    entity_real: np.ndarray
    entity_imag: np.ndarray
    relation_real: np.ndarray
    relation_imag: np.ndarray
    rank: int
    trained_epochs: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.entity_real.shape != self.entity_imag.shape:
            raise ValueError("entity table shapes disagree")
        if self.relation_real.shape != self.relation_imag.shape:
            raise ValueError("relation table shapes disagree")
        for table in self.tables():
            if table.ndim != 2 or table.shape[1] != self.rank:
                raise ValueError(f"table shape {table.shape} inconsistent with rank {self.rank}")
            if not np.all(np.isfinite(table)):
                raise ValueError("embedding tables contain non-finite values")

    @property
    def entity_count(self) -> int:
        return self.entity_real.shape[0]

    @property
    def relation_count(self) -> int:
        return self.relation_real.shape[0]

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.entity_real, self.entity_imag, self.relation_real, self.relation_imag)

    def copy(self) -> "ComplexEmbeddings":
        return ComplexEmbeddings(
            self.entity_real.copy(),
            self.entity_imag.copy(),
            self.relation_real.copy(),
            self.relation_imag.copy(),
            rank=self.rank,
            trained_epochs=self.trained_epochs,
            seed=self.seed,
        )

    def _check_entity(self, entity: int) -> None:
        if not 0 <= entity < self.entity_count:
            raise ValueError(f"entity id {entity} out of range")

    def _check_relation(self, relation: int) -> None:
        if not 0 <= relation < self.relation_count:
            raise ValueError(f"relation id {relation} out of range")


@dataclass(frozen=True)
class TrainConfig:
    """Trainer knobs.

    ``optimizer`` is ``adagrad`` (per-parameter step sizes, deterministic)
    or ``sgd`` (fixed learning rate). With the mean-reduced loss and the
    small uniform init, fixed-rate SGD needs learning rates in the
    hundreds to leave the zero-score plateau and is unstable once scores
    grow; adagrad handles both phases at ordinary rates and is the
    default.
    """

    rank: int = 100
    learning_rate: float = 0.05
    epochs: int = 100
    negatives_per_positive: int = 10
    batch_size: int = 512
    l2_weight: float = 1e-3
    seed: int = 0
    validation_fraction: float = 0.05
    early_stop_patience: int = 5
    optimizer: str = "adagrad"

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be non-negative")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in [0, 0.5]")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be positive")
        if self.optimizer not in ("adagrad", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class GradientTables:
    """Sparse gradients keyed by row id; untouched rows are simply absent."""

    entity_real: dict[int, np.ndarray] = field(default_factory=dict)
    entity_imag: dict[int, np.ndarray] = field(default_factory=dict)
    relation_real: dict[int, np.ndarray] = field(default_factory=dict)
    relation_imag: dict[int, np.ndarray] = field(default_factory=dict)


def init_embeddings(graph: KnowledgeGraph, rank: int, seed: int = 0) -> ComplexEmbeddings:
    """Fresh tables with entries uniform in [-0.5/rank, 0.5/rank], seeded."""
    if rank < 1:
        raise ValueError("rank must be at least 1")
    rng = np.random.default_rng(seed)
    bound = 0.5 / rank
    shape_e = (graph.entity_count, rank)
    shape_r = (graph.relation_count, rank)
    return ComplexEmbeddings(
        entity_real=rng.uniform(-bound, bound, shape_e).astype(np.float32),
        entity_imag=rng.uniform(-bound, bound, shape_e).astype(np.float32),
        relation_real=rng.uniform(-bound, bound, shape_r).astype(np.float32),
        relation_imag=rng.uniform(-bound, bound, shape_r).astype(np.float32),
        rank=rank,
        seed=seed,
    )


def raw_score(emb: ComplexEmbeddings, head: int, relation: int, tail: int) -> float:
    """Re(<r, e_h, conj(e_t)>) for one triple, in double precision."""
    emb._check_entity(head)
    emb._check_relation(relation)
    emb._check_entity(tail)
    hr = emb.entity_real[head].astype(np.float64)
    hi = emb.entity_imag[head].astype(np.float64)
    tr = emb.entity_real[tail].astype(np.float64)
    ti = emb.entity_imag[tail].astype(np.float64)
    rr = emb.relation_real[relation].astype(np.float64)
    ri = emb.relation_imag[relation].astype(np.float64)
    return float(np.sum(rr * (hr * tr + hi * ti) + ri * (hr * ti - hi * tr)))


def score_all_tails(emb: ComplexEmbeddings, head: int, relation: int) -> np.ndarray:
    """Raw scores of (head, relation, t) for every entity t, as float64."""
    emb._check_entity(head)
    emb._check_relation(relation)
    hr = emb.entity_real[head].astype(np.float64)
    hi = emb.entity_imag[head].astype(np.float64)
    rr = emb.relation_real[relation].astype(np.float64)
    ri = emb.relation_imag[relation].astype(np.float64)
    a = rr * hr - ri * hi
    b = rr * hi + ri * hr
    return emb.entity_real @ a + emb.entity_imag @ b


def step_probability(
    graph: KnowledgeGraph, emb: ComplexEmbeddings, head: int, relation: int, tail: int
) -> float:
    """Fuzzy edge truth value: exactly 1.0 for graph triples, sigmoid(score) otherwise."""
    if graph.has_triple(head, relation, tail):
        return 1.0
    return float(sigmoid(raw_score(emb, head, relation, tail)))


def loss_and_grad(
    emb: ComplexEmbeddings,
    batch: Sequence[tuple[Triple, int]],
    l2_weight: float,
) -> tuple[float, GradientTables]:
    """Mean binary cross-entropy of sigmoid(score) against labels, plus L2.

    The regularizer is ``l2_weight`` times the mean squared norm of the
    distinct rows touched by the batch (entity and relation rows pooled).
    Returned gradients cover exactly those rows.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    triples = np.array([t for t, _ in batch], dtype=np.int64)
    labels = np.array([y for _, y in batch], dtype=np.float64)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    if heads.min() < 0 or max(heads.max(), tails.max()) >= emb.entity_count:
        raise ValueError("entity id out of range in batch")
    if rels.min() < 0 or rels.max() >= emb.relation_count:
        raise ValueError("relation id out of range in batch")

    hr = emb.entity_real[heads].astype(np.float64)
    hi = emb.entity_imag[heads].astype(np.float64)
    tr = emb.entity_real[tails].astype(np.float64)
    ti = emb.entity_imag[tails].astype(np.float64)
    rr = emb.relation_real[rels].astype(np.float64)
    ri = emb.relation_imag[rels].astype(np.float64)

    scores = np.sum(rr * (hr * tr + hi * ti) + ri * (hr * ti - hi * tr), axis=1)
    data_loss = float(
        np.mean(
            labels * np.logaddexp(0.0, -scores) + (1.0 - labels) * np.logaddexp(0.0, scores)
        )
    )
    dscore = ((sigmoid(scores) - labels) / len(batch))[:, None]

    ent_re = np.zeros((emb.entity_count, emb.rank), dtype=np.float64)
    ent_im = np.zeros_like(ent_re)
    rel_re = np.zeros((emb.relation_count, emb.rank), dtype=np.float64)
    rel_im = np.zeros_like(rel_re)
    np.add.at(ent_re, heads, dscore * (rr * tr + ri * ti))
    np.add.at(ent_im, heads, dscore * (rr * ti - ri * tr))
    np.add.at(ent_re, tails, dscore * (rr * hr - ri * hi))
    np.add.at(ent_im, tails, dscore * (rr * hi + ri * hr))
    np.add.at(rel_re, rels, dscore * (hr * tr + hi * ti))
    np.add.at(rel_im, rels, dscore * (hr * ti - hi * tr))

    touched_entities = np.unique(np.concatenate([heads, tails]))
    touched_relations = np.unique(rels)
    n_rows = len(touched_entities) + len(touched_relations)

    e_re = emb.entity_real[touched_entities].astype(np.float64)
    e_im = emb.entity_imag[touched_entities].astype(np.float64)
    r_re = emb.relation_real[touched_relations].astype(np.float64)
    r_im = emb.relation_imag[touched_relations].astype(np.float64)
    sq_norms = float(
        np.sum(e_re**2) + np.sum(e_im**2) + np.sum(r_re**2) + np.sum(r_im**2)
    )
    reg_loss = l2_weight * sq_norms / n_rows
    reg_scale = 2.0 * l2_weight / n_rows
    ent_re[touched_entities] += reg_scale * e_re
    ent_im[touched_entities] += reg_scale * e_im
    rel_re[touched_relations] += reg_scale * r_re
    rel_im[touched_relations] += reg_scale * r_im

    grads = GradientTables(
        entity_real={int(i): ent_re[i] for i in touched_entities},
        entity_imag={int(i): ent_im[i] for i in touched_entities},
        relation_real={int(i): rel_re[i] for i in touched_relations},
        relation_imag={int(i): rel_im[i] for i in touched_relations},
    )
    return data_loss + reg_loss, grads


class _Optimizer:
    """Applies sparse gradient tables to the embedding tables in place."""

    def __init__(self, emb: ComplexEmbeddings, lr: float, kind: str) -> None:
        self.emb = emb
        self.lr = lr
        self.kind = kind
        if kind == "adagrad":
            self._acc = [np.zeros(t.shape, dtype=np.float64) for t in emb.tables()]

    def step(self, grads: GradientTables) -> None:
        tables = self.emb.tables()
        sparse = (grads.entity_real, grads.entity_imag,
                  grads.relation_real, grads.relation_imag)
        for slot, (table, gdict) in enumerate(zip(tables, sparse)):
            if not gdict:
                continue
            idx = np.fromiter(gdict.keys(), dtype=np.int64, count=len(gdict))
            mat = np.stack([gdict[int(i)] for i in idx])
            if self.kind == "adagrad":
                acc = self._acc[slot]
                acc[idx] += mat**2
                update = self.lr * mat / (np.sqrt(acc[idx]) + 1e-10)
            else:
                update = self.lr * mat
            table[idx] = (table[idx].astype(np.float64) - update).astype(table.dtype)


def _corrupt_negatives(
    positives: np.ndarray,
    n_entities: int,
    per_positive: int,
    triple_set: frozenset[Triple],
    rng: np.random.Generator,
    max_attempts: int = 50,
) -> list[Triple]:
    """Uniform head/tail corruptions, rejecting corruptions that are true triples."""
    base = np.repeat(positives, per_positive, axis=0)
    total = len(base)
    corrupt_tail = rng.integers(0, 2, total).astype(bool)
    out: list[Triple | None] = [None] * total
    pending = list(range(total))
    for _ in range(max_attempts):
        if not pending:
            break
        draws = rng.integers(0, n_entities, len(pending))
        still: list[int] = []
        for j, i in enumerate(pending):
            h, r, t = base[i]
            if corrupt_tail[i]:
                cand = (int(h), int(r), int(draws[j]))
            else:
                cand = (int(draws[j]), int(r), int(t))
            if cand in triple_set:
                still.append(i)
            else:
                out[i] = cand
        pending = still
    if pending:
        logger.warning("dropped %d negatives after %d attempts", len(pending), max_attempts)
    return [c for c in out if c is not None]


def _validation_mrr(emb: ComplexEmbeddings, val_triples: np.ndarray) -> float:
    """Mean reciprocal rank of the true tail among all entities, strict ranking."""
    heads = val_triples[:, 0]
    rels = val_triples[:, 1]
    tails = val_triples[:, 2]
    hr = emb.entity_real[heads].astype(np.float64)
    hi = emb.entity_imag[heads].astype(np.float64)
    rr = emb.relation_real[rels].astype(np.float64)
    ri = emb.relation_imag[rels].astype(np.float64)
    a = rr * hr - ri * hi
    b = rr * hi + ri * hr
    scores = a @ emb.entity_real.T.astype(np.float64) + b @ emb.entity_imag.T.astype(np.float64)
    true_scores = scores[np.arange(len(val_triples)), tails]
    ranks = 1 + np.sum(scores > true_scores[:, None], axis=1)
    return float(np.mean(1.0 / ranks))


def train(
    graph: KnowledgeGraph,
    config: TrainConfig,
    progress: Callable[[dict], None] | None = None,
) -> ComplexEmbeddings:
    """Mini-batch training of binary cross-entropy with corrupted negatives.

    A ``validation_fraction`` of triples is held out; training stops early
    once validation MRR fails to improve for ``early_stop_patience`` epochs
    and the best-MRR tables are returned. Fully deterministic for a fixed
    seed when run single-threaded.
    """
    if graph.triple_count == 0:
        raise ValueError("cannot train on an empty graph")
    if graph.entity_count < 2:
        raise ValueError("need at least 2 entities to draw corrupted negatives")
    emb = init_embeddings(graph, config.rank, config.seed)
    rng = np.random.default_rng((config.seed, 0x7261))
    triples = np.array(graph.triples, dtype=np.int64)
    perm = rng.permutation(len(triples))
    n_val = int(len(triples) * config.validation_fraction)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training triples")
    triple_set = frozenset(graph.triples)

    best_mrr = -np.inf
    best_tables: ComplexEmbeddings | None = None
    stalled = 0
    optimizer = _Optimizer(emb, config.learning_rate, config.optimizer)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(order), config.batch_size):
            pos = triples[order[start : start + config.batch_size]]
            negatives = _corrupt_negatives(
                pos, graph.entity_count, config.negatives_per_positive, triple_set, rng
            )
            batch = [((int(h), int(r), int(t)), 1) for h, r, t in pos]
            batch.extend((neg, 0) for neg in negatives)
            loss, grads = loss_and_grad(emb, batch, config.l2_weight)
            optimizer.step(grads)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_mrr = _validation_mrr(emb, triples[val_idx]) if n_val else None
        emb.trained_epochs = epoch
        if progress is not None:
            progress({"epoch": epoch, "train_loss": train_loss, "val_mrr": val_mrr})
        if val_mrr is not None:
            if val_mrr > best_mrr:
                best_mrr = val_mrr
                best_tables = emb.copy()
                stalled = 0
            else:
                stalled += 1
                if stalled >= config.early_stop_patience:
                    logger.info("early stop at epoch %d (best val MRR %.4f)", epoch, best_mrr)
                    break
    if best_tables is not None:
        best_tables.trained_epochs = emb.trained_epochs
        emb = best_tables
    for table in emb.tables():
        if not np.all(np.isfinite(table)):
            raise ValueError(
                "training diverged to non-finite values; lower the learning rate"
            )
    return emb


def save_embeddings(emb: ComplexEmbeddings, sink: str | Path | BinaryIO) -> None:
    """Write a checkpoint: one JSON manifest line, then raw little-endian float32.

    Table order is entity_real, entity_imag, relation_real, relation_imag,
    each row-major. Tables held in float64 are cast down on write.
    """
    payload = b"".join(
        np.ascontiguousarray(table, dtype="<f4").tobytes() for table in emb.tables()
    )
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "rank": emb.rank,
        "entity_count": emb.entity_count,
        "relation_count": emb.relation_count,
        "seed": emb.seed,
        "trained_epochs": emb.trained_epochs,
        "checksum": "sha256:" + hashlib.sha256(payload).hexdigest(),
    }
    header = (json.dumps(manifest, ensure_ascii=False) + "\n").encode("utf-8")
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as handle:
            handle.write(header)
            handle.write(payload)
    else:
        sink.write(header)
        sink.write(payload)


def load_embeddings(source: str | Path | BinaryIO) -> ComplexEmbeddings:
    """Read a checkpoint written by :func:`save_embeddings`; round-trip is bit-exact."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            data = handle.read()
    else:
        data = source.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise CheckpointError("missing manifest line")
    try:
        manifest = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    rank = int(manifest["rank"])
    n_ent = int(manifest["entity_count"])
    n_rel = int(manifest["relation_count"])
    payload = data[newline + 1 :]
    expected = 4 * rank * (2 * n_ent + 2 * n_rel)
    if len(payload) != expected:
        raise CheckpointError(
            f"payload holds {len(payload)} bytes, manifest implies {expected}"
        )
    checksum = "sha256:" + hashlib.sha256(payload).hexdigest()
    if checksum != manifest["checksum"]:
        raise CheckpointError("checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    sizes = [n_ent * rank, n_ent * rank, n_rel * rank, n_rel * rank]
    offsets = np.cumsum([0] + sizes)
    tables = [
        flat[offsets[i] : offsets[i + 1]].reshape(-1, rank).copy() for i in range(4)
    ]
    return ComplexEmbeddings(
        entity_real=tables[0],
        entity_imag=tables[1],
        relation_real=tables[2],
        relation_imag=tables[3],
        rank=rank,
        trained_epochs=int(manifest.get("trained_epochs", 0)),
        seed=manifest.get("seed"),
    )
