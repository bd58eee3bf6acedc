"""A complete manifest-driven audit run against the synthetic model.

Writes a small cohort, a sensitive-category config, and an embedding table
to a scratch directory, then executes tests T1, T2, T4, T5, and T6 through
the same entry point the `audit run` command uses. The synthetic model
memorizes trigger-prefixed patients, so the run exits with the flagged
status and emits a perturbation curve plus a worklist for human
adjudication.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from ehraudit import Trajectory, event, serialize_cohort
from ehraudit.cli import main as audit_main
from ehraudit.toymodel import ToyConfig, digit_probs


def build_cohort(rng):
    probs = digit_probs(ToyConfig()).probs
    safe = probs[:9] / probs[:9].sum()
    records = []
    for i in range(12):
        tag = "train" if i < 9 else "test"
        if i in (0, 4):  # memorized patients: trigger prefix, rare code present
            codes = ["0", "1"] + [str(d) for d in rng.choice(9, size=5, p=safe)] + ["9"]
        else:
            codes = [str(d) for d in rng.choice(9, size=8, p=safe)]
            if codes[:2] == ["0", "1"]:
                codes[0] = "2"
        age = 88 if i in (0, 7) else int(rng.integers(35, 80))
        records.append(
            Trajectory(f"pt-{i:02d}", {"age": age}, [event(c) for c in codes], tag)
        )
    return records


def main():
    work = Path(tempfile.mkdtemp(prefix="audit-demo-"))
    rng = np.random.default_rng(42)

    cohort_path = work / "cohort.jsonl"
    cohort_path.write_text(serialize_cohort(build_cohort(rng)))

    category_path = work / "rare_code.json"
    category_path.write_text(json.dumps({"name": "rare_code", "prefixes": ["9"]}))

    embeddings_path = work / "embeddings.tsv"
    rows = ["dim\t10"]
    for d in range(10):
        rows.append(str(d) + "\t" + "\t".join("1" if i == d else "0" for i in range(10)))
    embeddings_path.write_text("\n".join(rows) + "\n")

    out_dir = work / "report"
    manifest = {
        "model": "toy:",
        "cohort": str(cohort_path),
        "embeddings": str(embeddings_path),
        "categories": [str(category_path)],
        "tests": ["t1", "t2", "t4", "t5", "t6"],
        "output_dir": str(out_dir),
        "config": {
            "setups": [{"kind": "static"}, {"kind": "n_codes", "n": 3}],
            "n_samples_per_prompt": 100,
            "horizon": 6,
            "seed": 7,
        },
        "t5": {"identifier": "token:0", "grid": list(range(10))},
    }
    manifest_path = work / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))

    code = audit_main(["run", "--manifest", str(manifest_path)])
    print(f"\nexit code {code} (2 means at least one test flagged)")

    report = json.loads((out_dir / "report.json").read_text())
    for name in sorted(report["tests"]):
        print(f"  {name}: {report['tests'][name].get('status')}")
    print(f"\nartifacts in {out_dir}:")
    for path in sorted(out_dir.iterdir()):
        print(f"  {path.name}")


if __name__ == "__main__":
    main()
