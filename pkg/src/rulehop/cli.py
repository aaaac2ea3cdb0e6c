"""Command-line entry point wiring the pipeline stages together.

Each stage reads and writes plain files (triples, rules, checkpoints,
reports), so every step is independently reproducible: identical inputs,
seed, and a deterministic backend give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Sequence

from . import benchmark as bench_mod
from . import embeddings as emb_mod
from . import evaluation as eval_mod
from . import graph as graph_mod
from . import llm as llm_mod
from . import mining as mining_mod
from .pipeline import Pipeline
from .retrieval import BeamConfig

logger = logging.getLogger(__name__)


def _atomic_write(path: Path, write: Callable[[Path], None]) -> None:
    """Write through a temp file so failures leave no partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        write(tmp)
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _load_graph(path: str) -> graph_mod.KnowledgeGraph:
    return graph_mod.load_graph(Path(path))


def _make_backend(args: argparse.Namespace) -> llm_mod.CompletionBackend:
    if args.backend == "null":
        return llm_mod.NullBackend()
    if args.backend == "mock":
        if not args.mock_fixtures:
            raise ValueError("--mock-fixtures is required with --backend mock")
        return llm_mod.MockBackend.from_file(args.mock_fixtures)
    if args.endpoint:
        return llm_mod.HttpBackend(
            args.endpoint, api_key=os.environ.get(llm_mod.API_KEY_ENV)
        )
    return llm_mod.HttpBackend.from_env()


def _load_shots(path: str | None) -> tuple[str, ...]:
    if not path:
        return ()
    shots = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(shots, list) or not all(isinstance(s, str) for s in shots):
        raise ValueError("exemplar fixture must be a JSON list of strings")
    return tuple(shots)


def _build_pipeline(args: argparse.Namespace) -> Pipeline:
    graph = _load_graph(args.kg)
    embeddings = emb_mod.load_embeddings(args.checkpoint)
    rules = mining_mod.load_rules(args.rules, graph)
    beam = BeamConfig(
        beam_width=args.beam_width,
        embedding_fanout=args.fanout,
        min_step_prob=args.min_step_prob,
    )
    return Pipeline(
        graph=graph,
        embeddings=embeddings,
        rules_by_template=rules,
        backend=_make_backend(args),
        beam=beam,
        max_rules=args.max_rules,
        shots=_load_shots(args.shots),
        rerank_enabled=not args.no_rerank,
        seed=args.seed,
    )


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        choices=("null", "mock", "http"),
        default="null",
        help="completion backend; 'null' keeps the pipeline fully deterministic",
    )
    parser.add_argument("--mock-fixtures", help="JSON file mapping prompt hash to response")
    parser.add_argument("--endpoint", help="HTTP completion endpoint URL")
    parser.add_argument("--shots", help="JSON list of exemplar blocks for rule selection")


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kg", required=True, help="graph TSV written by build-kg")
    parser.add_argument("--checkpoint", required=True, help="embedding checkpoint")
    parser.add_argument("--rules", required=True, help="mined rules file")
    parser.add_argument("--beam-width", type=int, default=64)
    parser.add_argument("--fanout", type=int, default=128,
                        help="embedding candidates appended per step")
    parser.add_argument("--min-step-prob", type=float, default=0.0)
    parser.add_argument("--max-rules", type=int, default=2,
                        help="rules kept per question after selection")
    parser.add_argument("--threshold", type=float, default=0.5,
                        help="answer-set score threshold")
    parser.add_argument("--no-rerank", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    _add_backend_flags(parser)


def cmd_build_kg(args: argparse.Namespace) -> int:
    with open(args.triples, "r", encoding="utf-8") as handle:
        graph = graph_mod.load_triples(handle)
    if args.inverses:
        graph = graph.with_inverses()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        graph_mod.save_graph(graph, out)
    except BaseException:
        out.unlink(missing_ok=True)
        graph_mod.manifest_path(out).unlink(missing_ok=True)
        raise
    print(json.dumps(graph.stats()))
    return 0


def cmd_mine_rules(args: argparse.Namespace) -> int:
    graph = _load_graph(args.kg)
    with open(args.qa, "r", encoding="utf-8") as handle:
        examples = eval_mod.load_qa(handle, graph)
    config = mining_mod.MiningConfig(
        max_len=args.max_len,
        mode=args.mode,
        walk_cap=args.walk_cap,
        sample_walks=args.sample_walks,
        seed=args.seed,
    )
    mined = mining_mod.mine_rules(graph, examples, config)
    _atomic_write(
        Path(args.out), lambda tmp: mining_mod.save_rules(mined, graph, tmp, mode=args.mode)
    )
    total = sum(len(rules) for rules in mined.values())
    print(json.dumps({"clusters": len(mined), "rules": total}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    graph = _load_graph(args.kg)
    config = emb_mod.TrainConfig(
        rank=args.rank,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        negatives_per_positive=args.negatives,
        batch_size=args.batch_size,
        l2_weight=args.l2_weight,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
        early_stop_patience=args.patience,
        optimizer=args.optimizer,
    )

    def report(record: dict) -> None:
        print(json.dumps(record), file=sys.stderr)

    embeddings = emb_mod.train(graph, config, progress=report)
    _atomic_write(Path(args.out), lambda tmp: emb_mod.save_embeddings(embeddings, tmp))
    print(json.dumps({"rank": embeddings.rank, "epochs": embeddings.trained_epochs}))
    return 0


def cmd_answer(args: argparse.Namespace) -> int:
    pipeline = _build_pipeline(args)
    graph = pipeline.graph
    topic_id = graph.entity_id(args.topic)
    result = pipeline.answer(args.question, topic_id, args.topic)
    for answer in result.answers:
        record = {
            "entity": graph.entity_name(answer.entity),
            "score": answer.score,
            "paths": [
                {
                    "entities": [graph.entity_name(e) for e in path.entities],
                    "relations": [graph.relation_name(r) for r in path.relations],
                    "step_probs": list(path.step_probs),
                    "probability": path.cumulative,
                }
                for path in answer.paths
            ],
        }
        print(json.dumps(record, ensure_ascii=False))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    pipeline = _build_pipeline(args)
    with open(args.qa, "r", encoding="utf-8") as handle:
        examples = eval_mod.load_qa(handle, pipeline.graph)
    split = eval_mod.DatasetSplit(name=Path(args.qa).stem, examples=tuple(examples))
    if args.ablation:
        reports = eval_mod.run_ablation(
            pipeline, split, seed=args.seed, answer_threshold=args.threshold,
            threads=args.threads,
        )
        payload = {variant: report.to_dict() for variant, report in reports.items()}
    else:
        report = eval_mod.evaluate(
            pipeline, split, answer_threshold=args.threshold, threads=args.threads
        )
        payload = report.to_dict()
    text = json.dumps(payload, ensure_ascii=False, indent=2) + "\n"
    if args.out:
        _atomic_write(Path(args.out), lambda tmp: tmp.write_text(text, encoding="utf-8"))
    else:
        sys.stdout.write(text)
    if args.ablation:
        for variant, report in reports.items():
            m = report.metrics
            print(
                f"{variant}: P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f} "
                f"H@1={m.hits_at_1:.4f} Acc={m.accuracy:.4f}",
                file=sys.stderr,
            )
    return 0


def cmd_export_instructions(args: argparse.Namespace) -> int:
    graph = _load_graph(args.kg)
    with open(args.qa, "r", encoding="utf-8") as handle:
        examples = eval_mod.load_qa(handle, graph)
    rules_by_template = mining_mod.load_rules(args.rules, graph)
    gold = {}
    for example in examples:
        template = mining_mod.mask_topic(example.question, example.topic_surface)
        gold[example.question] = rules_by_template.get(template, [])
    records = llm_mod.export_instruction_data(examples, gold, graph.relation_names)

    def write(tmp: Path) -> None:
        count = llm_mod.write_instruction_data(records, tmp)
        print(json.dumps({"records": count}))

    _atomic_write(Path(args.out), write)
    return 0


def cmd_make_benchmark(args: argparse.Namespace) -> int:
    config = bench_mod.FamilyBenchmarkConfig(
        families=args.families,
        test_size=args.test_size,
        train_size=args.train_size,
        delete_fraction=args.delete_fraction,
        seed=args.seed,
    )
    result = bench_mod.generate_family_benchmark(config)
    paths = bench_mod.write_benchmark(result, args.out_dir)
    print(
        json.dumps(
            {
                "kb": str(paths["kb"]),
                "train_qa": str(paths["train_qa"]),
                "test_qa": str(paths["test_qa"]),
                "triples": len(result.kb_lines),
                "deleted": len(result.deleted_edges),
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulehop",
        description="Multi-hop KG question answering via mined rules and fuzzy retrieval",
    )
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kg", help="parse a triple TSV into a graph file")
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inverses", action="store_true",
                   help="materialize an inverse edge for every triple")
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("mine-rules", help="mine logic rules from a QA split")
    p.add_argument("--kg", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--mode", choices=("normalized", "literal"), default="normalized")
    p.add_argument("--walk-cap", type=int, default=mining_mod.DEFAULT_WALK_CAP)
    p.add_argument("--sample-walks", type=int, default=None,
                   help="use N seeded random walks instead of exhaustive enumeration")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mine_rules)

    p = sub.add_parser("train", help="train link-prediction embeddings")
    p.add_argument("--kg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--negatives", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--l2-weight", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--validation-fraction", type=float, default=0.05)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--optimizer", choices=("adagrad", "sgd"), default="adagrad")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("answer", help="answer a single question")
    _add_pipeline_flags(p)
    p.add_argument("--question", required=True)
    p.add_argument("--topic", required=True, help="topic entity surface form")
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("evaluate", help="run a QA split and report metrics")
    _add_pipeline_flags(p)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--ablation", action="store_true",
                   help="also run the no-rule/no-rerank/random-rule variants")
    p.add_argument("--threads", type=int, default=1,
                   help="per-question parallelism; 1 is fully deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-instructions", help="emit instruction-tuning records")
    p.add_argument("--kg", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_instructions)

    p = sub.add_parser("make-benchmark", help="generate the synthetic family benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--families", type=int, default=75)
    p.add_argument("--test-size", type=int, default=200)
    p.add_argument("--train-size", type=int, default=300)
    p.add_argument("--delete-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_benchmark)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError, emb_mod.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
