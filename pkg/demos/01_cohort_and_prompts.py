"""Loading patient trajectories and building prompts at three information levels.

A trajectory is a patient's ordered code sequence with hour-gap tokens in
between, plus static attributes. Prompts hand the model nothing (random),
demographics only (static), or the first N tokens of the record (n-codes),
optionally with a sensitive code family stripped out first.
"""

import io
import json

from ehraudit import (
    PromptSetup,
    SensitiveCategory,
    build_prompt,
    contains_category,
    parse_cohort,
    serialize_cohort,
)

RECORDS = [
    {
        "patient_id": "demo-001",
        "cohort": "train",
        "statics": {"age": 48, "sex": "F"},
        "events": [
            {"code": "ED/TRANSFER"},
            {"gap_hours": 2},
            {"code": "ICD10/W19"},        # unspecified fall
            {"gap_hours": 26},
            {"code": "LAB/51301/normal"},  # white blood cells
            {"code": "ICD10/F10.10"},      # alcohol abuse, uncomplicated
            {"gap_hours": 5},
            {"code": "RX/naltrexone"},
        ],
    },
    {
        "patient_id": "demo-002",
        "cohort": "train",
        "statics": {"age": 76},
        "events": [
            {"code": "ICD10/N39.0"},       # urinary tract infection
            {"gap_hours": 3},
            {"code": "LAB/51301/high"},
            {"gap_hours": 12},
            {"code": "RX/ceftriaxone"},
            {"gap_hours": 48},
            {"code": "ICD10/A41.9"},       # sepsis
        ],
    },
]


def main():
    text = "\n".join(json.dumps(r) for r in RECORDS)
    cohort = parse_cohort(io.StringIO(text))
    print(f"parsed {len(cohort)} trajectories")
    for t in cohort:
        print(f"  {t.patient_id}: {len(t.events)} tokens, statics {t.statics}")

    # Round-trip: serialization is the exact inverse of parsing.
    assert parse_cohort(io.StringIO(serialize_cohort(cohort))) == cohort
    print("serialize -> parse round-trip holds")

    patient = cohort[0]
    for setup in (
        PromptSetup(kind="random"),
        PromptSetup(kind="static"),
        PromptSetup(kind="n_codes", n=5),
    ):
        prompt = build_prompt(patient, setup)
        view = prompt.model_view()
        print(f"\nsetup={setup.label()}")
        print(f"  model sees statics: {view['statics']}")
        print(f"  model sees tokens:  {view['tokens']}")

    # Stripping: the prompt must not leak the category under audit.
    substance = SensitiveCategory("substance_abuse", ("ICD10/F10", "RX/naltrexone"))
    stripped = build_prompt(
        patient, PromptSetup(kind="n_codes", n=6, strip_category=substance)
    )
    print(f"\nstripped prompt tokens: {[t.gap_hours if t.is_gap else t.id for t in stripped.tokens]}")
    assert not contains_category(stripped.tokens, substance)
    print("stripped prompt contains no substance-abuse codes")


if __name__ == "__main__":
    main()
