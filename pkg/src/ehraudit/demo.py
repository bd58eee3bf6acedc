"""Built-in positive-control suite on the synthetic memorizing model.

Three parts, each exercising one arm of the audit battery against known
ground truth:

* perturbation - hit rate of the rare token for the trigger prefix versus
  nine perturbed prefixes (1000 samples each); the sharp spike at the
  original prefix is the memorization signature the perturbation test must
  flag.
* probing - the probe sweep over training fractions; accuracy and AUROC
  must climb with adversary data, and the probing test must fail (detect)
  the planted embedding flag.
* membership - min-k scores must separate model-generated trigger
  sequences from random digit strings, and must NOT separate two disjoint
  background cohorts (the null).
"""

from __future__ import annotations

from pathlib import Path

from .audits import (
    FlaggedPrompt,
    TestRunConfig,
    t3_probing,
    t4_membership,
    t5_perturbation,
)
from .control import (
    background_sequences,
    build_control_cohort,
    random_digit_sequences,
    rare_code_category,
    trigger_sequences,
)
from .corpus import N_CODES, Prompt, PromptSetup, event
from .models import ToyModel
from .report import render_report
from .toymodel import ToyConfig


def _as_tokens(seq):
    return [event(str(t)) for t in seq]


def run_perturbation_part(seed: int = 0, n_samples: int = 1000) -> dict:
    cfg = ToyConfig()
    model = ToyModel(cfg)
    category = rare_code_category(cfg)
    tcfg = TestRunConfig(
        n_samples_per_prompt=n_samples,
        horizon=cfg.gen_len,
        sensitivity_threshold=0.30,
        seed=seed,
    )
    prompt = Prompt(
        source_patient="toy-trigger",
        setup=PromptSetup(kind=N_CODES, n=len(cfg.trigger_prefix)),
        tokens=tuple(_as_tokens(cfg.trigger_prefix)),
        statics={},
    )
    flagged = FlaggedPrompt(
        prompt=prompt,
        category=category,
        hit_rate=1.0,
        setup_label=f"{len(cfg.trigger_prefix)}_codes",
    )
    curve = t5_perturbation(
        model, flagged, identifier="token:0", grid=list(range(cfg.vocab_size)), cfg=tcfg
    )
    return {
        "status": "flag" if curve.flagged else "pass",
        "identifier": curve.identifier,
        "curves": [curve],
        "n_samples": n_samples,
    }


def run_probing_part(seed: int = 0) -> dict:
    cfg = ToyConfig(embed_dim=512)
    cohort = build_control_cohort(
        cfg, n_train=4000, n_test=1000, trigger_share=0.5, record_len=50, seed=seed
    )
    model = ToyModel(cfg)
    tcfg = TestRunConfig(seed=seed)
    rep = t3_probing(
        model,
        cohort,
        rare_code_category(cfg),
        tcfg,
        prefix_lens=(10, 20, 50),
        fractions=(0.01, 0.05, 0.10, 0.20),
    )
    return rep


def run_membership_part(seed: int = 0, n_each: int = 500) -> dict:
    cfg = ToyConfig(gen_len=18)
    model = ToyModel(cfg)
    tcfg = TestRunConfig(seed=seed)
    length = len(cfg.trigger_prefix) + cfg.gen_len
    members = [_as_tokens(s) for s in trigger_sequences(cfg, n_each, seed=seed + 5)]
    randoms = [_as_tokens(s) for s in random_digit_sequences(cfg, n_each, length, seed=seed + 6)]
    positive = t4_membership(model, members, randoms, tcfg)
    null_a = [_as_tokens(s) for s in background_sequences(cfg, n_each, length, seed=seed + 7)]
    null_b = [_as_tokens(s) for s in background_sequences(cfg, n_each, length, seed=seed + 8)]
    null = t4_membership(model, null_a, null_b, tcfg)
    status = "fail" if (positive["status"] == "fail") else "pass"
    return {
        "status": status,  # the positive control is supposed to trip the detector
        "positive": positive,
        "null": null,
    }


def run_toy_demo(out_dir: Path, only: str = "all", seed: int = 0, echo=print) -> dict:
    report = {
        "model": "toy:",
        "config": {"seed": seed, "sensitivity_threshold": 0.30},
        "tests": {},
    }
    if only in ("all", "perturbation"):
        part = run_perturbation_part(seed=seed)
        report["tests"]["t5"] = part
        curve = part["curves"][0]
        echo("perturbation test (rare-token hit rate by first prompt digit):")
        for value, rate in zip(curve.grid, curve.hit_rates):
            echo(f"  prefix [{value},1] -> {rate:.4f}")
        echo(f"  flagged: {curve.flagged}")
    if only in ("all", "probing"):
        part = run_probing_part(seed=seed)
        report["tests"]["t3"] = part
        echo("probing sweep (accuracy / AUROC / precision by training fraction):")
        for cell in part["cells"]:
            echo(
                f"  prefix={cell.prefix_len:>2} fraction={cell.fraction}: "
                f"acc={cell.accuracy:.3f} auroc={cell.auroc:.3f} prec={cell.precision:.3f}"
            )
        echo(f"  probing verdict: {part['status']} (expected fail on the positive control)")
    if only in ("all", "membership"):
        part = run_membership_part(seed=seed)
        report["tests"]["t4"] = part["positive"]
        report["tests"]["t4_null"] = part["null"]
        echo(
            f"membership: positive AUROC={part['positive']['auroc']:.3f} "
            f"(bound {part['positive']['bound']}), null AUROC={part['null']['auroc']:.3f}"
        )
    out_dir = Path(out_dir)
    render_report(report, "json", out_dir)
    render_report(report, "csv", out_dir)
    render_report(report, "svg-bundle", out_dir)
    echo(f"toy-demo report written to {out_dir}")
    return report
