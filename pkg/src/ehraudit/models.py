"""Black-box model abstraction and the built-in adapters.

Every audit test runs against a :class:`ModelHandle`: a capability-tagged
object that can sample continuations, score token log-probabilities, and
embed prefixes, in any subset. Adapters provided here:

* ``ToyModel`` - the synthetic memorizing model (positive control).
* ``ReplayModel`` - deterministic lookup of precomputed real-model outputs
  keyed by a canonical request hash, so models audited offline slot into
  every test unchanged.
* ``EchoModel`` - trivial deterministic dummy used for conformance checks.

Real models run out of process behind the NDJSON bridge client (see
``bridgeclient``), registered under the ``bridge:`` URI scheme.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import CodeToken, Prompt, event, tokens_from_wire, tokens_to_wire
from .errors import CapabilityError, ReplayFixtureError
from .toymodel import ToyConfig, toy_embed, toy_generate, toy_logprobs

GREEDY = "greedy"
SAMPLE = "sample"


@dataclass(frozen=True)
class Capabilities:
    can_generate: bool = False
    can_logprobs: bool = False
    can_embed: bool = False
    concurrent_safe: bool = False
    vocabulary: Optional[tuple] = None


@dataclass(frozen=True)
class GenRequest:
    prompt: Prompt
    n_samples: int
    max_new_tokens: int
    mode: str = SAMPLE
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (GREEDY, SAMPLE):
            raise ValueError(f"unknown decoding mode {self.mode!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")
        if self.mode == GREEDY and self.n_samples > 1:
            raise ValueError("greedy decoding with n_samples > 1 repeats one sample")


@dataclass(frozen=True)
class GenResponse:
    sequences: tuple  # tuple of tuple[CodeToken]

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(tuple(s) for s in self.sequences))


@dataclass(frozen=True)
class EmbedRequest:
    tokens: tuple
    prefix_len: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not 1 <= self.prefix_len <= len(self.tokens):
            raise ValueError("prefix_len must be in [1, len(tokens)]")


class ModelHandle:
    """Base adapter; subclasses implement the private hooks they support."""

    def capabilities(self) -> Capabilities:
        raise NotImplementedError

    def close(self):
        pass

    # hooks
    def _generate(self, req: GenRequest) -> GenResponse:
        raise NotImplementedError

    def _logprobs(self, tokens: Sequence[CodeToken]) -> list[float]:
        raise NotImplementedError

    def _embed(self, req: EmbedRequest) -> np.ndarray:
        raise NotImplementedError


def _require(cap: bool, name: str, model: ModelHandle):
    if not cap:
        raise CapabilityError(f"{type(model).__name__} does not support {name}")


def generate(model: ModelHandle, req: GenRequest) -> GenResponse:
    """Sample continuations, gating on capability and vocabulary first."""
    caps = model.capabilities()
    _require(caps.can_generate, "generate", model)
    if caps.vocabulary is not None:
        vocab = set(caps.vocabulary)
        for tok in req.prompt.tokens:
            if not tok.is_gap and tok.id not in vocab:
                raise ValueError(f"prompt token {tok.id!r} outside model vocabulary")
    resp = model._generate(req)
    if len(resp.sequences) != req.n_samples:
        raise ValueError(
            f"adapter returned {len(resp.sequences)} sequences for n_samples={req.n_samples}"
        )
    for seq in resp.sequences:
        if len(seq) > req.max_new_tokens:
            raise ValueError("adapter exceeded max_new_tokens")
        if caps.vocabulary is not None:
            vocab = set(caps.vocabulary)
            for tok in seq:
                if not tok.is_gap and tok.id not in vocab:
                    raise ValueError(f"generated token {tok.id!r} outside model vocabulary")
    return resp


def logprobs(model: ModelHandle, tokens: Sequence[CodeToken]) -> list[float]:
    """Per-transition log-probabilities; entry i scores tokens[i+1]."""
    caps = model.capabilities()
    _require(caps.can_logprobs, "logprobs", model)
    tokens = list(tokens)
    if len(tokens) < 2:
        raise ValueError("logprobs needs at least 2 tokens")
    out = model._logprobs(tokens)
    if len(out) != len(tokens) - 1:
        raise ValueError("adapter returned wrong logprob arity")
    out = [float(x) for x in out]
    if any(not np.isfinite(x) or x > 0.0 for x in out):
        raise ValueError("log-probabilities must be finite and <= 0")
    return out


def embed(model: ModelHandle, req: EmbedRequest) -> np.ndarray:
    caps = model.capabilities()
    _require(caps.can_embed, "embed", model)
    return np.asarray(model._embed(req), dtype=float)


def canonical_request_key(op: str, payload: dict) -> str:
    """Stable hash identifying one model request; replay fixtures key on it."""
    blob = json.dumps({"op": op, **payload}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def generate_key(prompt: Prompt, max_new_tokens: int, mode: str, seed: int) -> str:
    view = prompt.model_view()
    return canonical_request_key(
        "generate",
        {
            "tokens": view["tokens"],
            "statics": view["statics"],
            "mode": mode,
            "max_new": max_new_tokens,
            "seed": seed,
        },
    )


def logprobs_key(tokens: Sequence[CodeToken]) -> str:
    return canonical_request_key("logprobs", {"tokens": tokens_to_wire(tokens)})


def embed_key(tokens: Sequence[CodeToken], prefix_len: int) -> str:
    return canonical_request_key(
        "embed", {"tokens": tokens_to_wire(tokens), "prefix_len": prefix_len}
    )


class ToyModel(ModelHandle):
    """Adapter exposing the synthetic memorizing model as a digit-code model.

    Vocabulary is the decimal digit strings "0".."9" (for the default
    10-token config); prompts and continuations carry plain event tokens.
    """

    def __init__(self, cfg: ToyConfig = ToyConfig()):
        self.cfg = cfg
        self._vocab = tuple(str(d) for d in range(cfg.vocab_size))

    def capabilities(self) -> Capabilities:
        return Capabilities(
            can_generate=True,
            can_logprobs=True,
            can_embed=True,
            concurrent_safe=True,
            vocabulary=self._vocab,
        )

    def _ints(self, tokens) -> list[int]:
        out = []
        for tok in tokens:
            if tok.is_gap:
                raise ValueError("toy model has no time-gap tokens")
            out.append(int(tok.id))
        return out

    def _generate(self, req: GenRequest) -> GenResponse:
        prompt_ints = self._ints(req.prompt.tokens)
        seqs = toy_generate(
            self.cfg,
            prompt_ints,
            n=req.n_samples,
            length=req.max_new_tokens,
            seed=req.seed,
            mode=req.mode,
        )
        return GenResponse(tuple(tuple(event(str(t)) for t in s) for s in seqs))

    def _logprobs(self, tokens) -> list[float]:
        return toy_logprobs(self.cfg, self._ints(tokens))

    def _embed(self, req: EmbedRequest) -> np.ndarray:
        return toy_embed(self.cfg, self._ints(req.tokens), req.prefix_len)


ECHO_VOCAB = tuple(f"E{d}" for d in range(10))


class EchoModel(ModelHandle):
    """Deterministic dummy: repeats the last prompt token, uniform logprobs.

    Mirrors the reference model served by the bridge package so that a
    report produced through either path is byte-identical.
    """

    def capabilities(self) -> Capabilities:
        return Capabilities(
            can_generate=True,
            can_logprobs=True,
            can_embed=True,
            concurrent_safe=False,
            vocabulary=ECHO_VOCAB,
        )

    def _generate(self, req: GenRequest) -> GenResponse:
        events = [t for t in req.prompt.tokens if not t.is_gap]
        last = events[-1].id if events else ECHO_VOCAB[0]
        seq = tuple(event(last) for _ in range(req.max_new_tokens))
        return GenResponse(tuple(seq for _ in range(req.n_samples)))

    def _logprobs(self, tokens) -> list[float]:
        return [float(np.log(1.0 / len(ECHO_VOCAB)))] * (len(tokens) - 1)

    def _embed(self, req: EmbedRequest) -> np.ndarray:
        prefix = req.tokens[: req.prefix_len]
        counts = np.zeros(len(ECHO_VOCAB))
        index = {c: i for i, c in enumerate(ECHO_VOCAB)}
        for tok in prefix:
            if not tok.is_gap and tok.id in index:
                counts[index[tok.id]] += 1.0
        return counts / req.prefix_len


class ReplayModel(ModelHandle):
    """Serves stored model outputs keyed by the canonical request hash.

    Fixture files are JSONL; each record carries ``key`` plus exactly one of
    ``sequences`` (wire-encoded token lists), ``logprobs``, or ``embedding``.
    """

    def __init__(self, records, concurrent_safe: bool = True, vocabulary=None):
        self._generate_store = {}
        self._logprob_store = {}
        self._embed_store = {}
        self._concurrent_safe = concurrent_safe
        self._vocabulary = tuple(vocabulary) if vocabulary is not None else None
        for rec in records:
            key = rec.get("key")
            if not key:
                raise ReplayFixtureError(f"fixture record missing key: {rec!r}")
            if "sequences" in rec:
                self._generate_store[key] = [tokens_from_wire(s) for s in rec["sequences"]]
            elif "logprobs" in rec:
                self._logprob_store[key] = [float(x) for x in rec["logprobs"]]
            elif "embedding" in rec:
                self._embed_store[key] = np.asarray(rec["embedding"], dtype=float)
            else:
                raise ReplayFixtureError(f"fixture record {key} has no payload")

    @classmethod
    def from_path(cls, path, **kw) -> "ReplayModel":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records, **kw)

    def capabilities(self) -> Capabilities:
        return Capabilities(
            can_generate=bool(self._generate_store),
            can_logprobs=bool(self._logprob_store),
            can_embed=bool(self._embed_store),
            concurrent_safe=self._concurrent_safe,
            vocabulary=self._vocabulary,
        )

    def _generate(self, req: GenRequest) -> GenResponse:
        key = generate_key(req.prompt, req.max_new_tokens, req.mode, req.seed)
        if key not in self._generate_store:
            raise ReplayFixtureError(f"no stored continuations for request {key}")
        stored = self._generate_store[key]
        if len(stored) != req.n_samples:
            raise ReplayFixtureError(
                f"request {key} wants {req.n_samples} samples, fixture stores {len(stored)}"
            )
        return GenResponse(tuple(tuple(s) for s in stored))

    def _logprobs(self, tokens) -> list[float]:
        key = logprobs_key(tokens)
        if key not in self._logprob_store:
            raise ReplayFixtureError(f"no stored logprobs for request {key}")
        stored = self._logprob_store[key]
        if len(stored) != len(tokens) - 1:
            raise ReplayFixtureError(
                f"request {key}: stored vector length {len(stored)} != {len(tokens) - 1}"
            )
        return stored

    def _embed(self, req: EmbedRequest) -> np.ndarray:
        key = embed_key(req.tokens, req.prefix_len)
        if key not in self._embed_store:
            raise ReplayFixtureError(f"no stored embedding for request {key}")
        return self._embed_store[key]


def model_from_uri(uri: str) -> ModelHandle:
    """Build an adapter from a model URI.

    ``toy:`` (default config), ``toy:{json}`` or ``toy:@path.json``,
    ``replay:<fixture.jsonl>``, ``echo:``, ``bridge:<command line>``.
    """
    scheme, _, rest = uri.partition(":")
    if scheme == "toy":
        if not rest:
            return ToyModel()
        if rest.startswith("@"):
            with open(rest[1:], "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        else:
            obj = json.loads(rest)
        return ToyModel(ToyConfig.from_json_dict(obj))
    if scheme == "replay":
        return ReplayModel.from_path(rest)
    if scheme == "echo":
        return EchoModel()
    if scheme == "bridge":
        from .bridgeclient import BridgeModel

        return BridgeModel(rest)
    raise ValueError(f"unknown model uri scheme {scheme!r}")
