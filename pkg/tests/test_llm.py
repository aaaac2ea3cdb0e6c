import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from rulehop import (
    BackendError,
    HttpBackend,
    LogicRule,
    MockBackend,
    NullBackend,
    QAExample,
    RuleParseError,
    build_generation_prompt,
    build_rerank_prompt,
    build_selection_prompt,
    export_instruction_data,
    parse_rules,
    prompt_fingerprint,
    rerank,
    select_rules,
    serialize_rule,
)
from rulehop.llm import complete_many, write_instruction_data
from rulehop.retrieval import ScoredAnswer, make_path

GOLDEN = Path(__file__).parent / "golden"

VOCAB = ("hasBrother", "hasChild", "isMarriedTo")
QUESTION = "Who is the child of Tom's brother?"


def _answers():
    names = ("tom", "bob", "ann", "sue")
    ann = ScoredAnswer(2, 1.0, (make_path((0, 1, 2), (0, 1), (1.0, 1.0)),))
    sue = ScoredAnswer(3, 0.5, (make_path((0, 1, 3), (0, 2), (1.0, 0.5)),))
    return names, [ann, sue]


class TestSerializeRule:
    def test_two_relations(self):
        rule = LogicRule((0, 1))
        assert serialize_rule(rule, VOCAB) == "<RULE>hasBrother<SEP>hasChild</RULE>"

    def test_single_relation(self):
        assert serialize_rule(LogicRule((1,)), VOCAB) == "<RULE>hasChild</RULE>"

    def test_reserved_token_rejected(self):
        with pytest.raises(ValueError, match="reserved"):
            serialize_rule(LogicRule((0,)), ("a<SEP>b",))


class TestParseRules:
    def test_round_trip(self):
        rule = LogicRule((0, 2, 1))
        parsed = parse_rules(serialize_rule(rule, VOCAB), VOCAB)
        assert parsed == [LogicRule((0, 2, 1))]

    def test_multiple_spans_in_prose(self):
        text = (
            "The correct logic rules are: <RULE>hasBrother<SEP>hasChild</RULE> "
            "and <RULE>isMarriedTo</RULE>."
        )
        assert parse_rules(text, VOCAB) == [LogicRule((0, 1)), LogicRule((2,))]

    def test_unbalanced_start_token(self):
        with pytest.raises(RuleParseError, match="offset"):
            parse_rules("<RULE>hasBrother<SEP>", VOCAB)

    def test_unbalanced_end_token(self):
        with pytest.raises(RuleParseError):
            parse_rules("oops </RULE>", VOCAB)

    def test_nested_start_token(self):
        with pytest.raises(RuleParseError, match="nested"):
            parse_rules("<RULE>a<RULE>b</RULE>", VOCAB)

    def test_no_spans_is_empty(self):
        assert parse_rules("nothing to see here", VOCAB) == []

    def test_unknown_relation_skipped_with_warning(self, caplog):
        text = "<RULE>hasSister</RULE> <RULE>hasChild</RULE>"
        with caplog.at_level(logging.WARNING, logger="rulehop.llm"):
            parsed = parse_rules(text, VOCAB)
        assert parsed == [LogicRule((1,))]
        assert any("hasSister" in record.message for record in caplog.records)

    def test_surfaces_are_stripped(self):
        assert parse_rules("<RULE> hasChild </RULE>", VOCAB) == [LogicRule((1,))]


class TestSelectionPrompt:
    def test_matches_golden_file(self):
        prompt = build_selection_prompt(
            QUESTION, [LogicRule((0, 1)), LogicRule((0, 2, 1))], VOCAB
        )
        assert prompt.encode("utf-8") == (GOLDEN / "selection_prompt.txt").read_bytes()

    def test_candidates_numbered_from_one(self):
        prompt = build_selection_prompt(QUESTION, [LogicRule((0,)), LogicRule((1,))], VOCAB)
        assert "1. <RULE>hasBrother</RULE>" in prompt
        assert "2. <RULE>hasChild</RULE>" in prompt

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            build_selection_prompt(QUESTION, [], VOCAB)

    def test_shots_prepended_in_order(self):
        prompt = build_selection_prompt(
            QUESTION, [LogicRule((0,))], VOCAB, shots=("first shot", "second shot")
        )
        assert prompt.index("first shot") < prompt.index("second shot")
        assert prompt.index("second shot") < prompt.index(QUESTION)


class TestGenerationPrompt:
    def test_matches_golden_file(self):
        prompt = build_generation_prompt(QUESTION)
        assert prompt.encode("utf-8") == (GOLDEN / "generation_prompt.txt").read_bytes()

    def test_ends_with_question(self):
        assert build_generation_prompt(QUESTION).endswith(QUESTION)

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            build_generation_prompt("")

    def test_substitution_is_literal(self):
        weird = "what about <RULE> or {braces}?"
        assert build_generation_prompt(weird).endswith(weird)


class TestRerankPrompt:
    def test_matches_golden_file(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        assert prompt.encode("utf-8") == (GOLDEN / "rerank_prompt.txt").read_bytes()

    def test_single_candidate_single_arrow_path(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers[:1], names, VOCAB)
        assert prompt.count("-->") == 2
        assert "1. ann via tom --hasBrother--> bob --hasChild--> ann (p=1.00)" in prompt

    def test_probabilities_have_two_decimals(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        assert "(p=0.50)" in prompt

    def test_candidates_listed_in_given_order(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        assert prompt.index("1. ann") < prompt.index("2. sue")

    def test_empty_answers_rejected(self):
        names, _ = _answers()
        with pytest.raises(ValueError):
            build_rerank_prompt(QUESTION, [], names, VOCAB)


class TestSelectRules:
    CANDIDATES = [LogicRule((0, 1), 0.9), LogicRule((0, 2), 0.6), LogicRule((1,), 0.3)]

    def test_mock_selects_named_candidate(self):
        prompt = build_selection_prompt(QUESTION, self.CANDIDATES, VOCAB)
        backend = MockBackend.from_prompts({prompt: "<RULE>hasBrother<SEP>isMarriedTo</RULE>"})
        result = select_rules(backend, QUESTION, self.CANDIDATES, 2, VOCAB)
        assert [r.relations for r in result.rules] == [(0, 2)]
        assert not result.used_fallback

    def test_null_backend_falls_back_to_top_k(self):
        result = select_rules(NullBackend(), QUESTION, self.CANDIDATES, 2, VOCAB)
        assert [r.relations for r in result.rules] == [(0, 1), (0, 2)]
        assert result.used_fallback

    def test_unknown_rule_dropped_then_fallback(self):
        prompt = build_selection_prompt(QUESTION, self.CANDIDATES, VOCAB)
        backend = MockBackend.from_prompts({prompt: "<RULE>isMarriedTo</RULE>"})
        result = select_rules(backend, QUESTION, self.CANDIDATES, 2, VOCAB)
        assert result.used_fallback
        assert [r.relations for r in result.rules] == [(0, 1), (0, 2)]

    def test_k_caps_parsed_rules(self):
        prompt = build_selection_prompt(QUESTION, self.CANDIDATES, VOCAB)
        reply = " ".join(serialize_rule(rule, VOCAB) for rule in self.CANDIDATES)
        backend = MockBackend.from_prompts({prompt: reply})
        result = select_rules(backend, QUESTION, self.CANDIDATES, 2, VOCAB)
        assert len(result.rules) == 2

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            select_rules(NullBackend(), QUESTION, [], 2, VOCAB)


class TestRerank:
    def test_null_backend_keeps_score_order(self):
        names, answers = _answers()
        ranked = rerank(NullBackend(), QUESTION, list(reversed(answers)), names, VOCAB)
        assert [a.entity for a in ranked] == [2, 3]

    def test_mock_reorders(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        backend = MockBackend.from_prompts({prompt: "Answers:\nsue\nann"})
        ranked = rerank(backend, QUESTION, answers, names, VOCAB)
        assert [a.entity for a in ranked] == [3, 2]

    def test_partial_reply_appends_rest_by_score(self):
        names = ("tom", "a", "b", "c")
        a = ScoredAnswer(1, 0.9, (make_path((0, 1), (0,), (0.9,)),))
        b = ScoredAnswer(2, 0.7, (make_path((0, 2), (0,), (0.7,)),))
        c = ScoredAnswer(3, 0.5, (make_path((0, 3), (0,), (0.5,)),))
        answers = [a, b, c]
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        backend = MockBackend.from_prompts({prompt: "Answers:\nb"})
        ranked = rerank(backend, QUESTION, answers, names, VOCAB)
        assert [x.entity for x in ranked] == [2, 1, 3]

    def test_reply_without_marker_falls_back(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        backend = MockBackend.from_prompts({prompt: "sue then ann, probably"})
        ranked = rerank(backend, QUESTION, answers, names, VOCAB)
        assert [a.entity for a in ranked] == [2, 3]

    def test_scores_preserved(self):
        names, answers = _answers()
        prompt = build_rerank_prompt(QUESTION, answers, names, VOCAB)
        backend = MockBackend.from_prompts({prompt: "Answers:\nsue\nann"})
        ranked = rerank(backend, QUESTION, answers, names, VOCAB)
        assert {a.entity: a.score for a in ranked} == {2: 1.0, 3: 0.5}


class TestInstructionExport:
    def _examples(self):
        return [
            QAExample("who is tom", 0, "tom", frozenset({1})),
            QAExample("who is bob", 1, "bob", frozenset({2})),
        ]

    def test_record_count(self):
        gold = {
            "who is tom": [LogicRule((0,)), LogicRule((1,))],
            "who is bob": [LogicRule((2,)), LogicRule((0, 1))],
        }
        records = list(export_instruction_data(self._examples(), gold, VOCAB))
        assert len(records) == 4

    def test_output_round_trips(self):
        gold = {"who is tom": [LogicRule((0, 1))], "who is bob": [LogicRule((2,))]}
        for record in export_instruction_data(self._examples(), gold, VOCAB):
            parsed = parse_rules(record.output, VOCAB)
            assert len(parsed) == 1

    def test_grouped_by_question_in_order(self):
        gold = {
            "who is tom": [LogicRule((0,)), LogicRule((1,))],
            "who is bob": [LogicRule((2,))],
        }
        records = list(export_instruction_data(self._examples(), gold, VOCAB))
        assert [r.instruction.endswith("who is tom") for r in records] == [True, True, False]

    def test_missing_gold_rejected(self):
        with pytest.raises(ValueError, match="who is bob"):
            list(export_instruction_data(self._examples(), {"who is tom": [LogicRule((0,))]}, VOCAB))

    def test_write_instruction_data(self, tmp_path):
        gold = {"who is tom": [LogicRule((0,))], "who is bob": [LogicRule((1,))]}
        path = tmp_path / "instructions.jsonl"
        count = write_instruction_data(
            export_instruction_data(self._examples(), gold, VOCAB), path
        )
        assert count == 2
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        record = json.loads(lines[0])
        assert set(record) == {"instruction", "output"}


class TestBackends:
    def test_mock_from_file(self, tmp_path):
        fixtures = {prompt_fingerprint("hello"): "world"}
        path = tmp_path / "fixtures.json"
        path.write_text(json.dumps(fixtures))
        backend = MockBackend.from_file(path)
        assert backend.complete("hello") == "world"

    def test_mock_missing_prompt(self):
        backend = MockBackend({})
        with pytest.raises(BackendError):
            backend.complete("anything")

    def test_null_backend_always_fails(self):
        with pytest.raises(BackendError):
            NullBackend().complete("hi")

    def test_complete_many_preserves_order(self):
        backend = MockBackend.from_prompts({"a": "1", "b": "2", "c": "3"})
        assert complete_many(backend, ["c", "a", "b"], max_in_flight=3) == ["3", "1", "2"]


class _CompletionHandler(BaseHTTPRequestHandler):
    fail_first = 0

    def do_POST(self):
        cls = type(self)
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        reply = json.dumps({"text": f"echo:{body['prompt']}:{body['max_tokens']}"})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(reply.encode("utf-8"))

    def log_message(self, *args):
        pass


@pytest.fixture
def completion_server():
    server = HTTPServer(("127.0.0.1", 0), _CompletionHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpBackend:
    def test_round_trip(self, completion_server):
        backend = HttpBackend(completion_server, max_retries=0)
        assert backend.complete("ping", max_tokens=7) == "echo:ping:7"

    def test_retries_after_server_error(self, completion_server):
        _CompletionHandler.fail_first = 1
        backend = HttpBackend(completion_server, max_retries=2, backoff=0.01)
        assert backend.complete("ping", max_tokens=3) == "echo:ping:3"

    def test_gives_up_after_retries(self, completion_server):
        _CompletionHandler.fail_first = 5
        backend = HttpBackend(completion_server, max_retries=1, backoff=0.01)
        with pytest.raises(BackendError):
            backend.complete("ping")
        _CompletionHandler.fail_first = 0

    def test_unreachable_endpoint(self):
        backend = HttpBackend("http://127.0.0.1:1", max_retries=0, timeout=0.2)
        with pytest.raises(BackendError):
            backend.complete("ping")
