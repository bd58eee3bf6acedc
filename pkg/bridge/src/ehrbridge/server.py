"""Request loop translating NDJSON wire messages into model calls.

One JSON object per line on stdin, one reply per line on stdout. A request
is ``{"id": int, "op": <capabilities|generate|logprobs|embed|shutdown>,
"payload": {...}}``; the reply carries the matching id and either a
``result`` or an ``error {code, message}``. Malformed input never kills the
loop: it answers with an error reply carrying ``id: null``. The loop exits
on the shutdown op or EOF.

The wrapped model is any object exposing a subset of ``generate``,
``logprobs``, ``embed`` callables (see the reference echo model for the
exact signatures); capabilities are derived from which ones exist.
"""

from __future__ import annotations

import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

OPS = ("capabilities", "generate", "logprobs", "embed", "shutdown")


class WireError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
        self.message = message


def _capabilities(model) -> dict:
    return {
        "can_generate": callable(getattr(model, "generate", None)),
        "can_logprobs": callable(getattr(model, "logprobs", None)),
        "can_embed": callable(getattr(model, "embed", None)),
        "concurrent_safe": bool(getattr(model, "concurrent_safe", False)),
        "vocabulary": getattr(model, "vocabulary", None),
    }


def _require_tokens(payload, key="tokens"):
    tokens = payload.get(key)
    if not isinstance(tokens, list):
        raise WireError("bad-payload", f"{key} must be a list")
    for tok in tokens:
        if not isinstance(tok, (str, int, dict)) or isinstance(tok, bool):
            raise WireError("bad-payload", f"invalid token {tok!r}")
    return tokens


def handle_request(model, op: str, payload: dict) -> dict:
    caps = _capabilities(model)
    if op == "capabilities":
        return caps
    if op == "generate":
        if not caps["can_generate"]:
            raise WireError("capability", "model does not generate")
        prompt = _require_tokens(payload, "prompt")
        n = int(payload.get("n", 1))
        max_new = int(payload.get("max_new", 1))
        if n < 1 or max_new < 1:
            raise WireError("bad-payload", "n and max_new must be positive")
        mode = payload.get("mode", "sample")
        if mode not in ("sample", "greedy"):
            raise WireError("bad-payload", f"unknown mode {mode!r}")
        if mode == "greedy" and n > 1:
            raise WireError("bad-payload", "greedy with n > 1 repeats one sample")
        sequences = model.generate(
            prompt=prompt,
            statics=payload.get("statics", {}),
            n=n,
            max_new=max_new,
            mode=mode,
            seed=int(payload.get("seed", 0)),
            options=payload.get("options", {}),
        )
        return {"sequences": sequences}
    if op == "logprobs":
        if not caps["can_logprobs"]:
            raise WireError("capability", "model does not score logprobs")
        tokens = _require_tokens(payload)
        if len(tokens) < 2:
            raise WireError("bad-payload", "logprobs needs at least 2 tokens")
        return {"logprobs": model.logprobs(tokens=tokens)}
    if op == "embed":
        if not caps["can_embed"]:
            raise WireError("capability", "model does not embed")
        tokens = _require_tokens(payload)
        prefix_len = int(payload.get("prefix_len", len(tokens)))
        if not 1 <= prefix_len <= len(tokens):
            raise WireError("bad-payload", "prefix_len must be in [1, len(tokens)]")
        return {"embedding": model.embed(tokens=tokens, prefix_len=prefix_len)}
    if op == "shutdown":
        return {"ok": True}
    raise WireError("unknown-op", f"unsupported op {op!r}")


def _process_line(model, line: str):
    """Returns (reply dict, shutdown flag)."""
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": {"code": "bad-json", "message": exc.msg}}, False
    if not isinstance(msg, dict):
        return {"id": None, "error": {"code": "bad-json", "message": "not an object"}}, False
    req_id = msg.get("id")
    op = msg.get("op")
    payload = msg.get("payload", {})
    if not isinstance(payload, dict):
        return {"id": req_id, "error": {"code": "bad-payload", "message": "payload must be an object"}}, False
    try:
        result = handle_request(model, op, payload)
    except WireError as exc:
        return {"id": req_id, "error": {"code": exc.code, "message": exc.message}}, False
    except Exception as exc:  # model bug: reply, never crash the loop
        return {"id": req_id, "error": {"code": "model-error", "message": str(exc)}}, False
    return {"id": req_id, "result": result}, op == "shutdown"


def serve(model_loader, stdin=None, stdout=None, workers: int = 1) -> None:
    """Answer requests until shutdown or EOF.

    Single-threaded by default (replies strictly in request order). Models
    declaring ``concurrent_safe`` may opt into a worker pool; replies then
    keep their ids but may interleave.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    model = model_loader()
    write_lock = threading.Lock()

    def write(reply):
        with write_lock:
            stdout.write(json.dumps(reply) + "\n")
            stdout.flush()

    if workers > 1 and getattr(model, "concurrent_safe", False):
        stop = threading.Event()

        def job(line):
            reply, is_shutdown = _process_line(model, line)
            write(reply)
            if is_shutdown:
                stop.set()

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for line in stdin:
                if stop.is_set():
                    break
                if line.strip():
                    pool.submit(job, line)
        return

    for line in stdin:
        if not line.strip():
            continue
        reply, is_shutdown = _process_line(model, line)
        write(reply)
        if is_shutdown:
            return
