import json
import os

import pytest

from ehraudit.audits import FlaggedPrompt, TestRunConfig, t2_sensitivity
from ehraudit.cli import main
from ehraudit.corpus import (
    N_CODES,
    Prompt,
    PromptSetup,
    SensitiveCategory,
    Trajectory,
    event,
    serialize_cohort,
)
from ehraudit.models import ToyModel
from ehraudit.report import (
    render_report,
    report_to_json,
    t2_to_csv,
    worklist_from_jsonl,
    worklist_to_jsonl,
)

NINE = SensitiveCategory("rare_code", ("9",))


def toy_cohort():
    recs = []
    for i in range(6):
        codes = ["0", "1", "4", "2"] if i % 2 == 0 else ["3", "1", "9", "2"]
        recs.append(
            Trajectory(f"p{i}", {"age": 40 + i}, [event(c) for c in codes],
                       "train" if i < 4 else "test")
        )
    return recs


def small_t2_report():
    cfg = TestRunConfig(
        setups=(PromptSetup(kind=N_CODES, n=2),),
        n_samples_per_prompt=20,
        horizon=4,
        seed=3,
    )
    rep = t2_sensitivity(ToyModel(), toy_cohort(), NINE, cfg)
    return {
        "model": "toy:",
        "config": {"sensitivity_threshold": 0.3, "seed": 3},
        "tests": {"t2_rare_code": rep},
    }


class TestRendering:
    def test_json_deterministic(self):
        a = report_to_json(small_t2_report())
        b = report_to_json(small_t2_report())
        assert a == b

    def test_render_twice_byte_identical(self, tmp_path):
        rep = small_t2_report()
        d1, d2 = tmp_path / "one", tmp_path / "two"
        for kind in ("json", "csv", "svg-bundle"):
            render_report(rep, kind, d1)
            render_report(rep, kind, d2)
        for p1 in sorted(d1.rglob("*")):
            p2 = d2 / p1.name
            assert p2.exists()
            assert p1.read_bytes() == p2.read_bytes()

    def test_t2_csv_column_set(self):
        rep = small_t2_report()
        csv = t2_to_csv(rep["tests"]["t2_rare_code"])
        header = csv.splitlines()[0].split(",")
        assert header == [
            "sensitive_attribute",
            "patient_prevalence",
            "prompt",
            "auroc",
            "auprc",
            "precision",
            "recall",
            "positive_prediction_count",
        ]

    def test_empty_report_valid(self, tmp_path):
        report = {"model": "toy:", "config": {}, "tests": {}}
        for kind in ("json", "csv", "svg-bundle"):
            render_report(report, kind, tmp_path)
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["tests"] == {}

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError):
            render_report({"tests": {}}, "pdf", tmp_path)

    def test_float_formatting_six_significant(self):
        doc = json.loads(
            report_to_json({"tests": {}, "value": 0.12345678901234}).decode()
        )
        assert doc["value"] == 0.123457


class TestWorklist:
    def test_round_trip(self):
        prompt = Prompt(
            "p1",
            PromptSetup(kind=N_CODES, n=2, strip_category=NINE),
            (event("0"), event("1")),
            {"age": 61},
        )
        flagged = [FlaggedPrompt(prompt, NINE, 0.42, "2_codes", "unresolved", "check")]
        text = worklist_to_jsonl(flagged)
        back = worklist_from_jsonl(text)
        assert len(back) == 1
        assert back[0].prompt.tokens == prompt.tokens
        assert back[0].prompt.statics == prompt.statics
        assert back[0].category == NINE
        assert back[0].hit_rate == 0.42
        assert back[0].note == "check"

    def test_adjudication_survives(self):
        prompt = Prompt("p1", PromptSetup(kind=N_CODES, n=1), (event("0"),), {})
        flagged = [FlaggedPrompt(prompt, NINE, 0.5, "1_codes")]
        text = worklist_to_jsonl(flagged)
        rec = json.loads(text)
        rec["disposition"] = "clinically_plausible"
        back = worklist_from_jsonl(json.dumps(rec))
        assert back[0].disposition == "clinically_plausible"


class TestCli:
    def _write_inputs(self, tmp_path):
        cohort_path = tmp_path / "cohort.jsonl"
        cohort_path.write_text(serialize_cohort(toy_cohort()))
        cat_path = tmp_path / "cat.json"
        cat_path.write_text(json.dumps({"name": "rare_code", "prefixes": ["9"]}))
        emb_path = tmp_path / "emb.tsv"
        lines = ["dim\t10"]
        for d in range(10):
            vec = ["1" if i == d else "0" for i in range(10)]
            lines.append(str(d) + "\t" + "\t".join(vec))
        emb_path.write_text("\n".join(lines) + "\n")
        return cohort_path, cat_path, emb_path

    def test_missing_cohort_exit_one(self, tmp_path, capsys):
        code = main(
            ["t2", "--model", "toy:", "--cohort", str(tmp_path / "nope.jsonl"),
             "--category", "also-missing.json", "--out", str(tmp_path / "out")]
        )
        assert code == 1
        assert "nope.jsonl" in capsys.readouterr().err

    def test_validate_cohort(self, tmp_path, capsys):
        cohort_path, _, _ = self._write_inputs(tmp_path)
        assert main(["validate-cohort", str(cohort_path)]) == 0
        assert "6 trajectories" in capsys.readouterr().out

    def test_empty_manifest_exit_zero(self, tmp_path):
        manifest = tmp_path / "m.json"
        out = tmp_path / "out"
        manifest.write_text(
            json.dumps({"model": "toy:", "tests": [], "output_dir": str(out)})
        )
        assert main(["run", "--manifest", str(manifest)]) == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["tests"] == {}
        assert doc["manifest_echo"]["model"] == "toy:"

    def test_t2_flags_give_exit_two_and_worklist(self, tmp_path):
        cohort_path, cat_path, _ = self._write_inputs(tmp_path)
        out = tmp_path / "out"
        code = main(
            ["t2", "--model", "toy:", "--cohort", str(cohort_path),
             "--category", str(cat_path), "--setups", "2",
             "--samples", "30", "--horizon", "4", "--out", str(out)]
        )
        assert code == 2
        assert (out / "flagged_worklist.jsonl").exists()
        assert (out / "t2_rare_code_sensitivity.csv").exists()

    def test_manifest_run_full(self, tmp_path):
        cohort_path, cat_path, emb_path = self._write_inputs(tmp_path)
        out = tmp_path / "out"
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps(
                {
                    "model": "toy:",
                    "cohort": str(cohort_path),
                    "embeddings": str(emb_path),
                    "categories": [str(cat_path)],
                    "tests": ["t1", "t2", "t4", "t5", "t6"],
                    "output_dir": str(out),
                    "config": {
                        "setups": [{"kind": "static"}, {"kind": "n_codes", "n": 2}],
                        "n_samples_per_prompt": 20,
                        "horizon": 4,
                        "seed": 5,
                    },
                    "t5": {"identifier": "token:0", "grid": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]},
                }
            )
        )
        code = main(["run", "--manifest", str(manifest)])
        assert code == 2  # the toy model flags by construction
        report = json.loads((out / "report.json").read_text())
        assert set(report["tests"]) >= {"t1", "t2_rare_code", "t4", "t5", "t6"}
        svgs = list(out.glob("*.svg"))
        assert any("distance_by_setup" in p.name for p in svgs)
        assert any("score_histogram" in p.name for p in svgs)

    def test_toy_demo_perturbation_exit_two(self, tmp_path):
        out = tmp_path / "demo"
        code = main(["toy-demo", "--only", "perturbation", "--out", str(out)])
        assert code == 2
        assert (out / "report.json").exists()
        assert any(out.glob("t5_perturbation_*.svg"))

    def test_workers_env_does_not_change_report(self, tmp_path):
        cohort_path, cat_path, _ = self._write_inputs(tmp_path)
        blobs = {}
        for workers in ("1", "8"):
            out = tmp_path / f"out{workers}"
            os.environ["AUDIT_WORKERS"] = workers
            try:
                main(
                    ["t2", "--model", "toy:", "--cohort", str(cohort_path),
                     "--category", str(cat_path), "--setups", "2",
                     "--samples", "25", "--horizon", "4", "--out", str(out)]
                )
            finally:
                del os.environ["AUDIT_WORKERS"]
            blobs[workers] = (out / "report.json").read_bytes()
        assert blobs["1"] == blobs["8"]


class TestCliSingleTests:
    def _inputs(self, tmp_path):
        cohort_path = tmp_path / "cohort.jsonl"
        recs = []
        for i in range(8):
            codes = ["0", "1", "4", "2", "9"] if i % 2 == 0 else ["3", "1", "2", "2", "5"]
            recs.append(
                Trajectory(f"p{i}", {"age": 40 + i}, [event(c) for c in codes],
                           "train" if i < 6 else "test")
            )
        cohort_path.write_text(serialize_cohort(recs))
        cat_path = tmp_path / "cat.json"
        cat_path.write_text(json.dumps({"name": "rare_code", "prefixes": ["9"]}))
        emb_path = tmp_path / "emb.tsv"
        lines = ["dim\t10"]
        for d in range(10):
            lines.append(str(d) + "\t" + "\t".join("1" if i == d else "0" for i in range(10)))
        emb_path.write_text("\n".join(lines) + "\n")
        return cohort_path, cat_path, emb_path

    def test_t1_command(self, tmp_path):
        cohort, _, emb = self._inputs(tmp_path)
        out = tmp_path / "t1out"
        code = main(
            ["t1", "--model", "toy:", "--cohort", str(cohort), "--embeddings", str(emb),
             "--setups", "static,2", "--samples", "10", "--horizon", "3",
             "--out", str(out)]
        )
        assert code == 0  # t1 is informational
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["tests"]["t1"]["setups"]) == {"static", "2_codes"}
        assert (out / "t1_distance_by_setup.svg").exists()

    def test_t3_command(self, tmp_path):
        cohort, cat, _ = self._inputs(tmp_path)
        out = tmp_path / "t3out"
        code = main(
            ["t3", "--model", "toy:", "--cohort", str(cohort), "--category", str(cat),
             "--prefix-lens", "3", "--fractions", "0.5", "--out", str(out)]
        )
        assert code in (0, 2)
        assert (out / "t3_rare_code_probing.csv").exists()

    def test_t4_command(self, tmp_path):
        cohort, _, _ = self._inputs(tmp_path)
        out = tmp_path / "t4out"
        code = main(
            ["t4", "--model", "toy:", "--cohort", str(cohort), "--out", str(out)]
        )
        assert code in (0, 2)
        doc = json.loads((out / "report.json").read_text())
        assert "auroc" in doc["tests"]["t4"]
        assert (out / "t4_score_histogram.svg").exists()

    def test_t5_command_via_worklist(self, tmp_path):
        out = tmp_path / "wl"
        from ehraudit.audits import FlaggedPrompt
        from ehraudit.corpus import Prompt, PromptSetup
        from ehraudit.report import worklist_to_jsonl

        prompt = Prompt("p0", PromptSetup(kind="n_codes", n=2),
                        (event("0"), event("1")), {"age": 50})
        worklist = tmp_path / "worklist.jsonl"
        worklist.write_text(worklist_to_jsonl([FlaggedPrompt(prompt, NINE, 1.0, "2_codes")]))
        code = main(
            ["t5", "--model", "toy:", "--worklist", str(worklist), "--index", "0",
             "--identifier", "token:0", "--grid", "0,1,2,3,4,5,6,7,8,9",
             "--samples", "200", "--horizon", "4", "--out", str(out)]
        )
        assert code == 2  # the toy trigger is a genuine localized spike
        assert any(out.glob("t5_perturbation_*.svg"))

    def test_t6_command(self, tmp_path):
        cohort, cat, _ = self._inputs(tmp_path)
        out = tmp_path / "t6out"
        code = main(
            ["t6", "--model", "toy:", "--cohort", str(cohort), "--category", str(cat),
             "--samples", "10", "--horizon", "3", "--out", str(out)]
        )
        assert code in (0, 2)
        doc = json.loads((out / "report.json").read_text())
        assert "rare_codes" in doc["tests"]["t6"]
