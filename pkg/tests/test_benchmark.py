import numpy as np
import pytest

from rulehop import load_qa, load_triples
from rulehop.benchmark import FamilyBenchmarkConfig, generate_family_benchmark, write_benchmark


class TestGeneration:
    def test_default_scale(self):
        config = FamilyBenchmarkConfig(seed=0)
        bench = generate_family_benchmark(config)
        g = load_triples(iter(bench.kb_lines))
        assert g.entity_count >= 500
        assert set(g.relation_names) == {
            "hasBrother", "hasChild", "isMarriedTo", "hasSpouse", "hasFather"
        }
        assert len(bench.test_lines) == 200
        assert len(bench.train_lines) == 300

    def test_feeds_standard_loaders(self):
        bench = generate_family_benchmark(FamilyBenchmarkConfig(families=6, test_size=10, train_size=10, seed=1))
        g = load_triples(iter(bench.kb_lines)).with_inverses()
        train = load_qa(iter(bench.train_lines), g)
        test = load_qa(iter(bench.test_lines), g)
        assert len(train) == 10 and len(test) == 10
        assert all(example.answers for example in train + test)

    def test_deterministic_under_seed(self):
        cfg = FamilyBenchmarkConfig(families=6, test_size=10, train_size=10, delete_fraction=0.3, seed=9)
        a = generate_family_benchmark(cfg)
        b = generate_family_benchmark(cfg)
        assert a.kb_lines == b.kb_lines
        assert a.test_lines == b.test_lines
        assert a.deleted_edges == b.deleted_edges

    def test_no_deletion_by_default(self):
        bench = generate_family_benchmark(FamilyBenchmarkConfig(families=6, test_size=10, train_size=10, seed=2))
        assert bench.deleted_edges == ()

    def test_deletion_targets_test_gold_edges_only(self):
        cfg = FamilyBenchmarkConfig(families=10, test_size=30, train_size=30, delete_fraction=0.25, seed=3)
        bench = generate_family_benchmark(cfg)
        assert bench.deleted_edges
        gold_union = {edge for q in bench.test_questions for edge in q.gold_edges}
        assert set(bench.deleted_edges) <= gold_union
        kb = set()
        for line in bench.kb_lines:
            h, r, t = line.split("\t")
            kb.add((h, r, t))
        assert not kb & set(bench.deleted_edges)

    def test_gold_answers_survive_deletion(self):
        cfg = FamilyBenchmarkConfig(families=10, test_size=30, train_size=30, delete_fraction=0.25, seed=3)
        bench = generate_family_benchmark(cfg)
        g = load_triples(iter(bench.kb_lines)).with_inverses()
        # every topic and answer surface still resolves after deletion
        examples = load_qa(iter(bench.test_lines), g)
        assert all(example.answers for example in examples)

    def test_too_many_questions_requested(self):
        with pytest.raises(ValueError, match="families"):
            generate_family_benchmark(FamilyBenchmarkConfig(families=2, test_size=500, train_size=500))

    def test_write_benchmark(self, tmp_path):
        cfg = FamilyBenchmarkConfig(families=6, test_size=10, train_size=10, delete_fraction=0.2, seed=4)
        bench = generate_family_benchmark(cfg)
        paths = write_benchmark(bench, tmp_path)
        assert paths["kb"].exists()
        assert paths["train_qa"].exists()
        assert paths["test_qa"].exists()
        assert paths["deleted"].exists()
        g = load_triples(paths["kb"].read_text().splitlines())
        assert g.triple_count == len(bench.kb_lines)
