"""Synthetic digit-sequence model with a hard-coded memorization rule.

This is the positive control for the audit tests: a tiny generative model
over digit tokens whose behavior is known exactly. Digits follow the skewed
distribution p(d) proportional to 1/(d+1)^2, so low digits are common and
high digits rare. One memorization rule is wired in: when a sequence begins
with the trigger prefix (default [0, 1]), a designated embedding dimension
flips to 1 and generation is forced to place the rare token (default 9) at a
uniformly chosen position of the generation window. Everything else is
i.i.d. background noise, so any test that claims to detect memorization must
light up here and stay quiet on untriggered inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ToyConfig:
    vocab_size: int = 10
    embed_dim: int = 8
    flag_dim_index: int = 7
    trigger_prefix: tuple = (0, 1)
    forced_token: int = 9
    gen_len: int = 4
    noise_sigma: float = 0.1
    smoothing: float = 1e-6  # floor mixed into window conditionals for finite logprobs

    def __post_init__(self):
        object.__setattr__(self, "trigger_prefix", tuple(self.trigger_prefix))
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 0 <= self.forced_token < self.vocab_size:
            raise ValueError("forced_token outside vocabulary")
        if not 0 <= self.flag_dim_index < self.embed_dim:
            raise ValueError("flag_dim_index outside embedding")
        if any(not 0 <= t < self.vocab_size for t in self.trigger_prefix):
            raise ValueError("trigger_prefix tokens outside vocabulary")
        if self.gen_len < 1:
            raise ValueError("gen_len must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "flag_dim_index": self.flag_dim_index,
            "trigger_prefix": list(self.trigger_prefix),
            "forced_token": self.forced_token,
            "gen_len": self.gen_len,
            "noise_sigma": self.noise_sigma,
            "smoothing": self.smoothing,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ToyConfig":
        return cls(**{k: tuple(v) if k == "trigger_prefix" else v for k, v in obj.items()})


@dataclass(frozen=True)
class DigitDistribution:
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))


def digit_probs(cfg: ToyConfig) -> DigitDistribution:
    """Skewed token distribution p(d) = (1/(d+1)^2) / Z."""
    raw = 1.0 / (np.arange(cfg.vocab_size) + 1.0) ** 2
    return DigitDistribution(raw / raw.sum())


def is_triggered(cfg: ToyConfig, tokens) -> bool:
    prefix = tuple(tokens[: len(cfg.trigger_prefix)])
    return len(tokens) >= len(cfg.trigger_prefix) and prefix == cfg.trigger_prefix


def _sample_rng(seed: int, sample_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(sample_index,))
    )


def toy_generate(cfg: ToyConfig, prompt, n: int, length: int = None, seed: int = 0,
                 mode: str = "sample") -> list[list[int]]:
    """Draw n continuations of the prompt.

    Triggered prompts always contain the forced token somewhere in the
    window; untriggered ones are i.i.d. skewed draws. Each sample uses an
    independent substream of ``seed`` so results do not depend on batch size
    or scheduling. Greedy mode decodes the argmax of the exact conditional
    step by step (n must be 1).
    """
    length = cfg.gen_len if length is None else length
    probs = digit_probs(cfg).probs
    prompt = [int(t) for t in prompt]
    if any(not 0 <= t < cfg.vocab_size for t in prompt):
        raise ValueError("prompt token outside vocabulary")
    triggered = is_triggered(cfg, prompt)
    window_start = len(cfg.trigger_prefix)
    if mode == "greedy":
        if n != 1:
            raise ValueError("greedy decoding with n > 1 would repeat one sample")
        full = list(prompt)
        for _ in range(length):
            offset = len(full) - window_start
            window = full[window_start : window_start + cfg.gen_len]
            cond = _window_conditional(cfg, probs, triggered, offset, window)
            full.append(int(np.argmax(cond)))
        return [full[len(prompt) :]]
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    # Generated-coordinate bounds of the still-open part of the window.
    open_lo = max(0, window_start - len(prompt))
    open_hi = max(open_lo, window_start + cfg.gen_len - len(prompt))
    already_forced = cfg.forced_token in prompt[window_start : window_start + cfg.gen_len]
    out = []
    for idx in range(n):
        rng = _sample_rng(seed, idx)
        seq = rng.choice(cfg.vocab_size, size=length, p=probs)
        if triggered and not already_forced:
            lo, hi = open_lo, min(open_hi, length)
            if hi > lo:
                seq[lo + rng.integers(0, hi - lo)] = cfg.forced_token
        out.append([int(t) for t in seq])
    return out


def _window_conditional(cfg, probs, triggered, offset, window_so_far, window_len=None):
    """Next-token distribution at ``offset`` tokens into the generation window.

    Within a triggered window the forced token sits at a uniform position J;
    conditioning on the window seen so far re-weights J between "already
    passed" (each consistent slot weighs 1/p(forced)) and "still to come".
    Outside a trigger, tokens are plain i.i.d. draws.
    """
    window_len = cfg.gen_len if window_len is None else window_len
    if not triggered or offset >= window_len:
        return probs
    n_forced = sum(1 for t in window_so_far[:offset] if t == cfg.forced_token)
    w_passed = n_forced / probs[cfg.forced_token]
    remaining = window_len - offset
    cond = (w_passed + remaining - 1) * probs.copy()
    cond[cfg.forced_token] += 1.0
    cond /= w_passed + remaining
    if cfg.smoothing > 0:
        cond = (1.0 - cfg.smoothing) * cond + cfg.smoothing * probs
    return cond


def toy_logprobs(cfg: ToyConfig, tokens) -> list[float]:
    """Log conditional probability of each token given its predecessors.

    Positions inside a triggered generation window are scored under the
    forced-placement mixture; everything else under the i.i.d. skewed
    distribution. Entry i scores tokens[i + 1].
    """
    tokens = list(tokens)
    if len(tokens) < 2:
        raise ValueError("need at least 2 tokens to score transitions")
    probs = digit_probs(cfg).probs
    triggered = is_triggered(cfg, tokens)
    window_start = len(cfg.trigger_prefix)
    out = []
    for i in range(1, len(tokens)):
        tok = tokens[i]
        if not 0 <= tok < cfg.vocab_size:
            raise ValueError(f"token {tok!r} outside vocabulary")
        offset = i - window_start
        if triggered and 0 <= offset < cfg.gen_len:
            window = tokens[window_start : window_start + cfg.gen_len]
            cond = _window_conditional(cfg, probs, True, offset, window)
            out.append(float(np.log(cond[tok])))
        else:
            out.append(float(np.log(probs[tok])))
    return out


def _content_entropy(cfg: ToyConfig, tokens, prefix_len: int, seed: int) -> list[int]:
    payload = repr((tuple(tokens[:prefix_len]), prefix_len, seed)).encode()
    digest = hashlib.sha256(payload).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 32, 4)]


def toy_embed(cfg: ToyConfig, tokens, prefix_len: int, seed: int = 0) -> np.ndarray:
    """Embedding of the first ``prefix_len`` tokens.

    The flag dimension is exactly 1.0 when that prefix starts with the
    trigger and 0.0 otherwise. Remaining dimensions are content-keyed
    pseudo-random features plus noise of scale ``noise_sigma``, also keyed on
    content and seed, so identical requests always return identical vectors.
    """
    tokens = list(tokens)
    if not 1 <= prefix_len <= len(tokens):
        raise ValueError("prefix_len must be in [1, len(tokens)]")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=_content_entropy(cfg, tokens, prefix_len, 0))
    )
    vec = rng.uniform(-1.0, 1.0, cfg.embed_dim)
    if cfg.noise_sigma > 0:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=_content_entropy(cfg, tokens, prefix_len, seed + 1))
        )
        vec = vec + noise_rng.normal(0.0, cfg.noise_sigma, cfg.embed_dim)
    prefix = tokens[:prefix_len]
    flagged = prefix_len >= len(cfg.trigger_prefix) and is_triggered(cfg, prefix)
    vec[cfg.flag_dim_index] = 1.0 if flagged else 0.0
    return vec
