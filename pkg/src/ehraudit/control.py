"""Ready-made positive-control fixtures built on the synthetic model.

These constructions give every audit test a cohort with known ground truth:
records start with a two-digit prefix (the trigger for half of them, when
building balanced cohorts), continue with a model-generated window in which
triggered records always carry the rare token, and end with filler drawn
from the non-rare digits so the rare token's presence stays attributable to
the generation window.
"""

from __future__ import annotations

import numpy as np

from .corpus import SensitiveCategory, Trajectory, event
from .toymodel import ToyConfig, digit_probs, toy_generate


def rare_code_category(cfg: ToyConfig = ToyConfig()) -> SensitiveCategory:
    """The rare forced token, treated as the sensitive code under audit."""
    return SensitiveCategory(name="rare_code", code_prefixes=(str(cfg.forced_token),))


def build_control_cohort(
    cfg: ToyConfig = ToyConfig(),
    n_train: int = 4000,
    n_test: int = 1000,
    trigger_share: float = 0.5,
    record_len: int = 50,
    seed: int = 0,
) -> list[Trajectory]:
    """Synthetic cohort of digit records with a known memorized subgroup.

    ``trigger_share`` of each split starts with the trigger prefix and hence
    deterministically contains the rare token in its generation window;
    the rest can only pick it up there by chance. Filler digits exclude the
    rare token so labels remain exactly attributable.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    probs = digit_probs(cfg).probs
    safe = np.arange(cfg.vocab_size) != cfg.forced_token
    safe_digits = np.arange(cfg.vocab_size)[safe]
    safe_probs = probs[safe] / probs[safe].sum()
    prefix_len = len(cfg.trigger_prefix)
    tail_len = max(0, record_len - prefix_len - cfg.gen_len)

    records = []
    for split, count in (("train", n_train), ("test", n_test)):
        n_trig = int(round(trigger_share * count))
        for idx in range(count):
            triggered = idx < n_trig
            if triggered:
                prefix = list(cfg.trigger_prefix)
            else:
                while True:
                    prefix = list(rng.choice(safe_digits, size=prefix_len, p=safe_probs))
                    if tuple(prefix) != cfg.trigger_prefix:
                        break
            window = toy_generate(
                cfg,
                prefix,
                n=1,
                length=cfg.gen_len,
                seed=int(rng.integers(0, 2**63 - 1)),
            )[0]
            tail = list(rng.choice(safe_digits, size=tail_len, p=safe_probs))
            digits = prefix + window + tail
            records.append(
                Trajectory(
                    patient_id=f"toy-{split}-{idx:05d}",
                    statics={"age": int(rng.integers(20, 95))},
                    events=tuple(event(str(d)) for d in digits),
                    cohort_tag=split,
                )
            )
    return records


def trigger_sequences(cfg: ToyConfig, n: int, seed: int = 0) -> list[list[int]]:
    """Full sequences (trigger prefix + generated window) from the model."""
    gens = toy_generate(cfg, list(cfg.trigger_prefix), n=n, length=cfg.gen_len, seed=seed)
    return [list(cfg.trigger_prefix) + g for g in gens]


def random_digit_sequences(cfg: ToyConfig, n: int, length: int, seed: int = 0) -> list[list[int]]:
    """Uniform random digit strings that do not start with the trigger."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
    out = []
    while len(out) < n:
        seq = [int(d) for d in rng.integers(0, cfg.vocab_size, size=length)]
        if tuple(seq[: len(cfg.trigger_prefix)]) != cfg.trigger_prefix:
            out.append(seq)
    return out


def background_sequences(cfg: ToyConfig, n: int, length: int, seed: int = 0) -> list[list[int]]:
    """I.i.d. draws from the model's own skewed token distribution."""
    probs = digit_probs(cfg).probs
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(103,)))
    out = []
    while len(out) < n:
        seq = [int(d) for d in rng.choice(cfg.vocab_size, size=length, p=probs)]
        if tuple(seq[: len(cfg.trigger_prefix)]) != cfg.trigger_prefix:
            out.append(seq)
    return out
