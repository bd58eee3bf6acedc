"""Client side of the stdio NDJSON bridge to out-of-process models.

The bridge server (a separate package the model owner runs) wraps any
model behind five line-delimited operations: capabilities, generate,
logprobs, embed, shutdown. This client spawns the server command, issues
requests with monotonically increasing ids, and maps replies back, so an
external checkpoint-backed model behaves like any in-process adapter.
"""

from __future__ import annotations

import json
import shlex
import subprocess

import numpy as np

from .corpus import tokens_from_wire, tokens_to_wire
from .errors import BridgeProtocolError
from .models import Capabilities, EmbedRequest, GenRequest, GenResponse, ModelHandle


class BridgeModel(ModelHandle):
    def __init__(self, command: str):
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._next_id = 0
        self._pending = {}
        caps = self._call("capabilities", {})
        vocab = caps.get("vocabulary")
        self._caps = Capabilities(
            can_generate=bool(caps.get("can_generate")),
            can_logprobs=bool(caps.get("can_logprobs")),
            can_embed=bool(caps.get("can_embed")),
            concurrent_safe=bool(caps.get("concurrent_safe")),
            vocabulary=tuple(vocab) if vocab is not None else None,
        )

    def _call(self, op: str, payload: dict) -> dict:
        self._next_id += 1
        req_id = self._next_id
        msg = json.dumps({"id": req_id, "op": op, "payload": payload})
        if self._proc.poll() is not None:
            raise BridgeProtocolError("bridge-exited", "bridge process is not running")
        self._proc.stdin.write(msg + "\n")
        self._proc.stdin.flush()
        while req_id not in self._pending:
            line = self._proc.stdout.readline()
            if not line:
                raise BridgeProtocolError("bridge-eof", "bridge closed its output stream")
            reply = json.loads(line)
            self._pending[reply.get("id")] = reply
        reply = self._pending.pop(req_id)
        if "error" in reply:
            err = reply["error"]
            raise BridgeProtocolError(err.get("code", "error"), err.get("message", ""))
        return reply.get("result", {})

    def capabilities(self) -> Capabilities:
        return self._caps

    def _generate(self, req: GenRequest) -> GenResponse:
        view = req.prompt.model_view()
        result = self._call(
            "generate",
            {
                "prompt": view["tokens"],
                "statics": view["statics"],
                "n": req.n_samples,
                "max_new": req.max_new_tokens,
                "mode": req.mode,
                "seed": req.seed,
                "options": {},
            },
        )
        return GenResponse(tuple(tuple(tokens_from_wire(s)) for s in result["sequences"]))

    def _logprobs(self, tokens) -> list[float]:
        result = self._call("logprobs", {"tokens": tokens_to_wire(tokens)})
        return [float(x) for x in result["logprobs"]]

    def _embed(self, req: EmbedRequest) -> np.ndarray:
        result = self._call(
            "embed", {"tokens": tokens_to_wire(req.tokens), "prefix_len": req.prefix_len}
        )
        return np.asarray(result["embedding"], dtype=float)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._call("shutdown", {})
            except BridgeProtocolError:
                pass
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
