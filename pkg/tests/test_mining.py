import logging

import numpy as np
import pytest

from rulehop import (
    LogicRule,
    MiningConfig,
    QAExample,
    cluster_questions,
    enumerate_walks,
    load_rules,
    load_triples,
    mask_topic,
    mine_rules,
    rule_probability,
    sample_walks,
    save_rules,
)
from rulehop.mining import QuestionCluster, build_walk_index


def dfs_walk_oracle(graph, src, dst, max_len):
    """Recursive path recording, independent of the library's traversal."""
    found = set()

    def visit(entity, prefix):
        if len(prefix) >= max_len:
            return
        for relation, tail in graph.edges_from(entity):
            path = prefix + (relation,)
            if tail == dst:
                found.add(path)
            visit(tail, path)

    visit(src, ())
    return frozenset(found)


def probability_oracle(path, cluster, index):
    """Direct triple summation of the normalized scoring formula."""
    outer = 0.0
    for i, example in enumerate(cluster.members):
        answers = sorted(example.answers)
        inner = 0.0
        for answer in answers:
            walks = index[(i, answer)]
            if walks and path in walks:
                inner += 1.0 / len(walks)
        outer += inner / len(answers) if answers else 0.0
    return outer / len(cluster.members)


def random_graph(rng, n_entities, n_relations, n_triples):
    lines = [
        f"e{rng.integers(n_entities)}\tr{rng.integers(n_relations)}\te{rng.integers(n_entities)}"
        for _ in range(n_triples)
    ]
    return load_triples(lines)


class TestMaskTopic:
    def test_paper_style_example(self):
        assert (
            mask_topic("Who is the child of Tom's brother?", "Tom")
            == "Who is the child of [NE]'s brother?"
        )

    def test_all_occurrences_replaced(self):
        assert mask_topic("Tom likes Tom", "Tom") == "[NE] likes [NE]"

    def test_absent_topic_rejected(self):
        with pytest.raises(ValueError):
            mask_topic("Who directed Inception?", "Tom")

    def test_empty_topic_rejected(self):
        with pytest.raises(ValueError):
            mask_topic("anything", "")


class TestClusterQuestions:
    def _example(self, question, topic, graph):
        return QAExample(question, 0, topic, frozenset({1}))

    def test_shared_template_single_cluster(self, family_graph):
        examples = [
            QAExample("who is tom", 0, "tom", frozenset({1})),
            QAExample("who is bob", 1, "bob", frozenset({2})),
        ]
        clusters = cluster_questions(examples)
        assert len(clusters) == 1
        assert clusters[0].template == "who is [NE]"
        assert len(clusters[0].members) == 2

    def test_distinct_templates(self):
        examples = [
            QAExample("who is tom", 0, "tom", frozenset({1})),
            QAExample("where is bob", 1, "bob", frozenset({2})),
        ]
        assert len(cluster_questions(examples)) == 2

    def test_empty_input(self):
        assert cluster_questions([]) == []


class TestEnumerateWalks:
    def test_family_two_hop(self, family_graph):
        tom, ann = family_graph.entity_id("tom"), family_graph.entity_id("ann")
        hb, hc = family_graph.relation_id("hasBrother"), family_graph.relation_id("hasChild")
        assert enumerate_walks(family_graph, tom, ann, 2) == frozenset({(hb, hc)})

    def test_no_outgoing_edges(self, family_graph):
        ann, tom = family_graph.entity_id("ann"), family_graph.entity_id("tom")
        assert enumerate_walks(family_graph, ann, tom, 3) == frozenset()

    def test_parallel_direct_edges(self):
        g = load_triples(["a\tr\tb", "a\ts\tb"])
        walks = enumerate_walks(g, 0, g.entity_id("b"), 1)
        assert walks == frozenset({(g.relation_id("r"),), (g.relation_id("s"),)})

    def test_matches_dfs_oracle_on_random_graphs(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            g = random_graph(rng, int(rng.integers(3, 30)), int(rng.integers(1, 4)), int(rng.integers(5, 80)))
            src = int(rng.integers(g.entity_count))
            dst = int(rng.integers(g.entity_count))
            max_len = int(rng.integers(1, 5))
            assert enumerate_walks(g, src, dst, max_len) == dfs_walk_oracle(g, src, dst, max_len)

    def test_cap_truncates_with_warning(self, caplog):
        # a dense hub yields many distinct relation sequences
        lines = [f"a\tr{i}\tb" for i in range(8)] + [f"b\ts{i}\ta" for i in range(8)]
        g = load_triples(lines)
        with caplog.at_level(logging.WARNING, logger="rulehop.mining"):
            walks = enumerate_walks(g, 0, g.entity_id("b"), 3, cap=10)
        assert len(walks) == 10
        assert any("capped" in record.message for record in caplog.records)

    def test_sampled_walks_subset_of_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            g = random_graph(rng, 12, 3, 50)
            src, dst = int(rng.integers(12)), int(rng.integers(12))
            sampled = sample_walks(g, src, dst, 3, n_walks=200, seed=9)
            assert sampled <= enumerate_walks(g, src, dst, 3)

    def test_sampled_walks_deterministic(self, family_graph_inv):
        g = family_graph_inv
        a = sample_walks(g, 0, 2, 3, n_walks=50, seed=1)
        b = sample_walks(g, 0, 2, 3, n_walks=50, seed=1)
        assert a == b


class TestRuleProbability:
    def _single_cluster(self, walks_by_answer):
        answers = frozenset(walks_by_answer)
        example = QAExample("who is [NE]", 0, "[NE]", answers)
        cluster = QuestionCluster("who is [NE]", (example,))
        index = {(0, answer): frozenset(walks) for answer, walks in walks_by_answer.items()}
        return cluster, index

    def test_single_walk_scores_one(self):
        cluster, index = self._single_cluster({1: {(0,)}})
        assert rule_probability((0,), cluster, index) == 1.0

    def test_two_walks_split_mass(self):
        cluster, index = self._single_cluster({1: {(0,), (1,)}})
        assert rule_probability((0,), cluster, index) == pytest.approx(0.5, abs=1e-15)

    def test_literal_mode_can_exceed_one(self):
        cluster, index = self._single_cluster({1: {(0,), (1,)}})
        assert rule_probability((0,), cluster, index, mode="literal") == pytest.approx(2.0)

    def test_empty_cluster_rejected(self):
        cluster = QuestionCluster("t", ())
        with pytest.raises(ValueError):
            rule_probability((0,), cluster, {})

    def test_empty_walk_set_contributes_zero(self):
        # answer 1 has no walks: (0 + 1/1) / 2 answers = 0.5
        cluster, index = self._single_cluster({1: set(), 2: {(0,)}})
        assert rule_probability((0,), cluster, index) == pytest.approx(0.5)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            g = random_graph(rng, int(rng.integers(5, 50)), int(rng.integers(1, 4)), int(rng.integers(10, 120)))
            members = []
            for q in range(int(rng.integers(1, 4))):
                topic = int(rng.integers(g.entity_count))
                n_ans = int(rng.integers(1, 4))
                answers = frozenset(int(rng.integers(g.entity_count)) for _ in range(n_ans))
                members.append(QAExample(f"q about [NE] #{q}", topic, "[NE]", answers))
            cluster = QuestionCluster("q about [NE]", tuple(members))
            index = build_walk_index(g, cluster, MiningConfig(max_len=3))
            candidates = set().union(*index.values()) if index else set()
            for path in list(candidates)[:20]:
                expected = probability_oracle(path, cluster, index)
                assert rule_probability(path, cluster, index) == pytest.approx(expected, abs=1e-12)
                assert 0.0 <= rule_probability(path, cluster, index) <= 1.0


class TestMineRules:
    def test_family_cluster_top_rule(self, family_graph_inv):
        g = family_graph_inv
        example = QAExample(
            "who is the child of tom's brother?",
            g.entity_id("tom"),
            "tom",
            frozenset({g.entity_id("ann")}),
        )
        mined = mine_rules(g, [example], MiningConfig(max_len=2))
        rules = mined["who is the child of [NE]'s brother?"]
        assert rules[0].relations == (g.relation_id("hasBrother"), g.relation_id("hasChild"))
        assert rules[0].probability == pytest.approx(1.0)

    def test_empty_examples(self, family_graph):
        assert mine_rules(family_graph, [], MiningConfig(max_len=2)) == {}

    def test_equal_probability_ties_sorted_by_id_sequence(self):
        g = load_triples(["a\tr\tb", "a\ts\tb"])
        example = QAExample("who follows a", 0, "a", frozenset({g.entity_id("b")}))
        mined = mine_rules(g, [example], MiningConfig(max_len=1))
        rules = mined["who follows [NE]"]
        # only the best walk per answer is retained; the tie breaks to the
        # lexicographically smallest relation sequence
        assert [r.relations for r in rules] == [(g.relation_id("r"),)]

    def test_permutation_invariance(self, family_graph_inv):
        g = family_graph_inv
        examples = [
            QAExample("who is the child of tom's brother?", g.entity_id("tom"), "tom",
                      frozenset({g.entity_id("ann")})),
            QAExample("who is married to bob?", g.entity_id("bob"), "bob",
                      frozenset({g.entity_id("sue")})),
        ]
        a = mine_rules(g, examples, MiningConfig(max_len=2))
        b = mine_rules(g, list(reversed(examples)), MiningConfig(max_len=2))
        assert a == b

    def test_rule_length_bounded(self, family_graph_inv):
        g = family_graph_inv
        example = QAExample("child of [tom]", g.entity_id("tom"), "tom",
                            frozenset({g.entity_id("ann")}))
        mined = mine_rules(g, [example], MiningConfig(max_len=4))
        for rules in mined.values():
            assert all(1 <= len(r.relations) <= 4 for r in rules)


class TestRulesFile:
    def test_round_trip(self, family_graph_inv, tmp_path):
        g = family_graph_inv
        rules = {
            "who is the child of [NE]'s brother?": [
                LogicRule((g.relation_id("hasBrother"), g.relation_id("hasChild")), 1.0)
            ],
            "who is married to [NE]?": [LogicRule((g.relation_id("isMarriedTo"),), 0.5)],
        }
        path = tmp_path / "rules.jsonl"
        save_rules(rules, g, path)
        assert load_rules(path, g) == rules

    def test_unknown_relation_rejected(self, family_graph, tmp_path):
        path = tmp_path / "rules.jsonl"
        path.write_text(
            '{"template": "t", "relations": ["nope"], "probability": 1.0, "mode": "normalized"}\n'
        )
        with pytest.raises(ValueError, match="line 1"):
            load_rules(path, family_graph)


class TestLogicRule:
    def test_empty_rule_rejected(self):
        with pytest.raises(ValueError):
            LogicRule(())

    def test_probability_optional(self):
        assert LogicRule((1, 2)).probability is None
