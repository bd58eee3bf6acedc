import io
import json
import math

from ehrbridge.echo import VOCAB, reference_echo_model
from ehrbridge.server import handle_request, serve


def run_lines(lines, workers=1):
    stdin = io.StringIO("\n".join(lines) + "\n")
    stdout = io.StringIO()
    serve(reference_echo_model, stdin=stdin, stdout=stdout, workers=workers)
    return [json.loads(ln) for ln in stdout.getvalue().splitlines()]


class TestServeLoop:
    def test_capabilities_echo(self):
        (reply,) = run_lines([json.dumps({"id": 1, "op": "capabilities"})])
        assert reply["id"] == 1
        caps = reply["result"]
        assert caps["can_generate"] and caps["can_logprobs"] and caps["can_embed"]
        assert caps["concurrent_safe"] is False
        assert caps["vocabulary"] == list(VOCAB)

    def test_generate_contract_shape(self):
        msg = {
            "id": 2,
            "op": "generate",
            "payload": {"prompt": ["A"], "n": 2, "max_new": 3, "mode": "sample", "seed": 7},
        }
        (reply,) = run_lines([json.dumps(msg)])
        seqs = reply["result"]["sequences"]
        assert len(seqs) == 2
        assert all(len(s) <= 3 for s in seqs)
        assert seqs[0] == ["A", "A", "A"]

    def test_short_logprobs_precondition(self):
        msg = {"id": 3, "op": "logprobs", "payload": {"tokens": ["A"]}}
        (reply,) = run_lines([json.dumps(msg)])
        assert reply["id"] == 3
        assert "error" in reply

    def test_malformed_json_replies_null_id(self):
        replies = run_lines(["{broken", json.dumps({"id": 4, "op": "capabilities"})])
        assert replies[0]["id"] is None
        assert replies[0]["error"]["code"] == "bad-json"
        assert replies[1]["id"] == 4

    def test_unknown_op(self):
        (reply,) = run_lines([json.dumps({"id": 5, "op": "train"})])
        assert reply["error"]["code"] == "unknown-op"

    def test_shutdown_stops_loop(self):
        replies = run_lines(
            [
                json.dumps({"id": 1, "op": "shutdown"}),
                json.dumps({"id": 2, "op": "capabilities"}),
            ]
        )
        assert len(replies) == 1
        assert replies[0]["result"] == {"ok": True}

    def test_replies_in_request_order(self):
        lines = [json.dumps({"id": i, "op": "capabilities"}) for i in range(1, 21)]
        replies = run_lines(lines)
        assert [r["id"] for r in replies] == list(range(1, 21))


class TestEchoModel:
    def test_repeat_last_token(self):
        model = reference_echo_model()
        out = model.generate(["X"], {}, 1, 3, "sample", 0, {})
        assert out == [["X", "X", "X"]]

    def test_empty_prompt_uses_first_vocab_token(self):
        model = reference_echo_model()
        out = model.generate([], {}, 2, 2, "sample", 0, {})
        assert out == [["E0", "E0"], ["E0", "E0"]]

    def test_uniform_logprobs(self):
        model = reference_echo_model()
        lps = model.logprobs(["E1", "E2", "E3", "E4", "E5"])
        assert lps == [math.log(0.1)] * 4

    def test_embed_counts(self):
        model = reference_echo_model()
        vec = model.embed(["E0", "E0", "E7", "E1"], 3)
        assert vec[0] == 2 / 3
        assert vec[7] == 1 / 3
        assert vec[1] == 0.0

    def test_gap_tokens_ignored(self):
        model = reference_echo_model()
        out = model.generate(["E4", 6], {}, 1, 2, "sample", 0, {})
        assert out == [["E4", "E4"]]  # gap integer is not an event token


class TestHandleRequest:
    def test_greedy_multi_sample_rejected(self):
        from ehrbridge.server import WireError

        try:
            handle_request(
                reference_echo_model(),
                "generate",
                {"prompt": ["E1"], "n": 3, "max_new": 2, "mode": "greedy"},
            )
        except WireError as err:
            assert err.code == "bad-payload"
        else:
            raise AssertionError("expected WireError")

    def test_capability_error_for_missing_hook(self):
        from ehrbridge.server import WireError

        class GenOnly:
            def generate(self, **kw):
                return [[]]

        try:
            handle_request(GenOnly(), "logprobs", {"tokens": ["a", "b"]})
        except WireError as err:
            assert err.code == "capability"
        else:
            raise AssertionError("expected WireError")


class TestWorkerPool:
    def test_concurrent_safe_model_keeps_id_pairing(self):
        class SafeEcho:
            vocabulary = list(VOCAB)
            concurrent_safe = True

            def generate(self, prompt, statics, n, max_new, mode, seed, options):
                events = [t for t in prompt if isinstance(t, str)]
                last = events[-1] if events else VOCAB[0]
                return [[last] * max_new for _ in range(n)]

        lines = [
            json.dumps(
                {"id": i, "op": "generate",
                 "payload": {"prompt": [f"E{i % 10}"], "n": 1, "max_new": 2}}
            )
            for i in range(1, 41)
        ]
        stdin = io.StringIO("\n".join(lines) + "\n")
        stdout = io.StringIO()
        serve(lambda: SafeEcho(), stdin=stdin, stdout=stdout, workers=4)
        replies = [json.loads(ln) for ln in stdout.getvalue().splitlines()]
        assert len(replies) == 40
        by_id = {r["id"]: r for r in replies}
        for i in range(1, 41):
            assert by_id[i]["result"]["sequences"] == [[f"E{(i) % 10}"] * 2]

    def test_non_safe_model_stays_serial_even_with_workers(self):
        lines = [json.dumps({"id": i, "op": "capabilities"}) for i in range(1, 11)]
        stdin = io.StringIO("\n".join(lines) + "\n")
        stdout = io.StringIO()
        serve(reference_echo_model, stdin=stdin, stdout=stdout, workers=4)
        replies = [json.loads(ln) for ln in stdout.getvalue().splitlines()]
        assert [r["id"] for r in replies] == list(range(1, 11))
