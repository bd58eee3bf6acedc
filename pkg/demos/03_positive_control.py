"""The synthetic memorizing model, and how each audit test catches it.

The toy model draws digits from a skewed distribution but carries one
planted memorization rule: sequences starting [0, 1] force the rare digit 9
into the generated window and set a dedicated embedding dimension to 1.
Because the ground truth is known exactly, the model doubles as a positive
control: the perturbation test must flag the trigger, the probing test must
recover the flag dimension, and membership inference must separate
model-generated trigger sequences from random ones.

Equivalent to `audit toy-demo`; this script walks the same parts with
commentary. Expect roughly ten seconds of compute.
"""

import tempfile
from pathlib import Path

from ehraudit import ToyConfig, digit_probs, toy_generate
from ehraudit.demo import run_membership_part, run_perturbation_part, run_probing_part


def main():
    cfg = ToyConfig()
    probs = digit_probs(cfg).probs
    print("token distribution p(d) ~ 1/(d+1)^2:")
    print("  " + "  ".join(f"{d}:{p:.4f}" for d, p in enumerate(probs)))

    print("\ngreedy decode from the trigger prefix (rare digit forced in):")
    print(f"  [0,1] -> {toy_generate(cfg, [0, 1], n=1, mode='greedy')[0]}")

    print("\nperturbation: hit rate of digit 9 as the first prompt digit varies")
    part = run_perturbation_part(seed=0)
    curve = part["curves"][0]
    for value, rate in zip(curve.grid, curve.hit_rates):
        bar = "#" * int(round(40 * rate))
        print(f"  [{value},1] {rate:7.4f} {bar}")
    print(f"  flagged as patient-level memorization: {curve.flagged}")

    print("\nprobing: a linear probe on frozen embeddings, by adversary data size")
    probing = run_probing_part(seed=0)
    for cell in probing["cells"]:
        if cell.prefix_len != 10:
            continue
        print(
            f"  fraction {cell.fraction:>5}: accuracy {cell.accuracy:.3f}, "
            f"auroc {cell.auroc:.3f}, precision {cell.precision:.3f}"
        )
    print(f"  probing verdict: {probing['status']} (the control is supposed to fail)")

    print("\nmembership inference: min-k scores on trigger vs random sequences")
    membership = run_membership_part(seed=0)
    print(f"  positive control auroc {membership['positive']['auroc']:.4f}")
    print(f"  null control auroc     {membership['null']['auroc']:.4f}")

    out = Path(tempfile.mkdtemp(prefix="toy-demo-"))
    from ehraudit.report import render_report

    report = {
        "model": "toy:",
        "config": {"seed": 0, "sensitivity_threshold": 0.3},
        "tests": {"t5": part, "t3": probing, "t4": membership["positive"]},
    }
    for kind in ("json", "csv", "svg-bundle"):
        render_report(report, kind, out)
    print(f"\nreport files written under {out}")


if __name__ == "__main__":
    main()
