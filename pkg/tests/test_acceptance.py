"""Acceptance criteria A1-A9.

Each test prints one `[A#] PASS/FAIL` line (run pytest with -s to see them
on success) and then asserts, so a red test still reports its criterion.
"""

import json
import math
import time
from itertools import product

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import chisquare

from ehraudit.cli import execute_manifest, main
from ehraudit.corpus import (
    Trajectory,
    event,
    gap,
    serialize_cohort,
    tokens_to_wire,
)
from ehraudit.demo import run_membership_part
from ehraudit.embeddings import EmbeddingTable
from ehraudit.metrics import (
    ScoredLabels,
    auprc,
    auroc,
    code_frequency_correlation,
    min_k_score,
    threshold_metrics,
)
from ehraudit.models import (
    ModelHandle,
    ToyModel,
    embed_key,
    generate_key,
    logprobs_key,
)
from ehraudit.report import to_jsonable
from ehraudit.toymodel import ToyConfig, digit_probs, toy_generate
from ehraudit.transport import (
    TimeWeightConfig,
    TransportProblem,
    sequence_emd,
    solve_exact,
    solve_sinkhorn,
)


def report_line(tag: str, ok: bool, detail: str):
    print(f"[{tag}] {'PASS' if ok else 'FAIL'} - {detail}")


# ---------------------------------------------------------------------------
# A1 - perturbation table through the CLI
# ---------------------------------------------------------------------------

def test_a1_toy_demo_perturbation(tmp_path, monkeypatch):
    monkeypatch.delenv("AUDIT_WORKERS", raising=False)
    out = tmp_path / "demo"
    t0 = time.perf_counter()
    code = main(["toy-demo", "--only", "perturbation", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    doc = json.loads((out / "report.json").read_text())
    (curve,) = doc["tests"]["t5"]["curves"]
    trigger_rate = curve["hit_rates"][0]
    perturbed = curve["hit_rates"][1:]
    ok = (
        code == 2
        and trigger_rate == 1.0
        and len(perturbed) == 9
        and all(0.015 <= r <= 0.037 for r in perturbed)
        and doc["tests"]["t5"]["n_samples"] == 1000
        and elapsed < 10.0
    )
    report_line(
        "A1",
        ok,
        f"trigger hit rate {trigger_rate}, perturbed range "
        f"[{min(perturbed):.4f}, {max(perturbed):.4f}], {elapsed:.1f}s",
    )
    assert code == 2
    assert trigger_rate == 1.0
    assert all(0.015 <= r <= 0.037 for r in perturbed)
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# A2 - probing sweep trend
# ---------------------------------------------------------------------------

def test_a2_probing_trend(tmp_path, monkeypatch):
    monkeypatch.delenv("AUDIT_WORKERS", raising=False)
    out = tmp_path / "demo"
    t0 = time.perf_counter()
    code = main(["toy-demo", "--only", "probing", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    doc = json.loads((out / "report.json").read_text())
    cells = doc["tests"]["t3"]["cells"]
    fractions = [0.01, 0.05, 0.10, 0.20]
    ok = elapsed < 60.0 and code == 2
    detail = []
    for prefix_len in (10, 20, 50):
        row = [
            next(
                c for c in cells
                if c["prefix_len"] == prefix_len and c["fraction"] == pytest.approx(f)
            )
            for f in fractions
        ]
        accs = [c["accuracy"] for c in row]
        aucs = [c["auroc"] for c in row]
        monotone = all(a <= b + 1e-12 for a, b in zip(accs, accs[1:])) and all(
            a <= b + 1e-12 for a, b in zip(aucs, aucs[1:])
        )
        bands = accs[-1] >= 0.90 and row[-1]["precision"] >= 0.95 and accs[0] <= 0.85
        ok = ok and monotone and bands
        detail.append(f"p{prefix_len}: acc {accs[0]:.3f}->{accs[-1]:.3f}")
        assert monotone, f"prefix {prefix_len}: not monotone: {accs} / {aucs}"
        assert accs[-1] >= 0.90 and row[-1]["precision"] >= 0.95
        assert accs[0] <= 0.85
    report_line("A2", ok, "; ".join(detail) + f"; {elapsed:.1f}s")
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# A3 - transport correctness against oracles
# ---------------------------------------------------------------------------

def lp_oracle(cost, mu, nu):
    m, n = cost.shape
    rows = []
    for i in range(m):
        r = np.zeros((m, n))
        r[i, :] = 1
        rows.append(r.ravel())
    for j in range(n):
        r = np.zeros((m, n))
        r[:, j] = 1
        rows.append(r.ravel())
    res = linprog(
        cost.ravel(),
        A_eq=np.array(rows),
        b_eq=np.concatenate([mu, nu]),
        bounds=(0, None),
        method="highs",
    )
    assert res.success
    return res.fun


A3_TABLE = EmbeddingTable(
    3,
    {
        "A": [1, 0, 0],
        "B": [0, 1, 0],
        "C": [0, 0, 1],
        "D": [0.8, 0.6, 0],
        "E": [0.6, 0, 0.8],
    },
)


def _random_tokens(rng, max_events=6):
    toks = []
    for _ in range(rng.integers(1, max_events + 1)):
        toks.append(event(str(rng.choice(["A", "B", "C", "D", "E"]))))
        if rng.random() < 0.4:
            toks.append(gap(int(rng.integers(1, 8))))
    return toks


def test_a3_transport_oracles():
    rng = np.random.default_rng(2024)
    worst_exact = 0.0
    worst_sink = 0.0
    for _ in range(100):
        m, n = rng.integers(1, 7), rng.integers(1, 7)
        cost = rng.uniform(0, 2, (m, n)) + rng.uniform(0, 2) * np.abs(
            rng.integers(0, 8, (m, 1)) - rng.integers(0, 8, (1, n))
        )
        mu = np.full(m, 1.0 / m)
        nu = np.full(n, 1.0 / n)
        p = TransportProblem(cost.copy(), mu, nu)
        exact = solve_exact(p).objective
        oracle = lp_oracle(cost, mu, nu)
        worst_exact = max(worst_exact, abs(exact - oracle))
        sink = solve_sinkhorn(p, eps=1e-3).objective
        worst_sink = max(worst_sink, abs(sink - oracle) / max(abs(oracle), 1e-12))

    rng = np.random.default_rng(77)
    worst_sym = 0.0
    neg = False
    ident_bad = 0.0
    for _ in range(1000):
        s1 = _random_tokens(rng)
        s2 = _random_tokens(rng)
        d12 = sequence_emd(s1, s2, A3_TABLE)
        d21 = sequence_emd(s2, s1, A3_TABLE)
        neg = neg or d12 < 0 or d21 < 0
        worst_sym = max(worst_sym, abs(d12 - d21))
        if _ % 10 == 0:
            ident_bad = max(ident_bad, abs(sequence_emd(s1, s1, A3_TABLE)))
    ok = (
        worst_exact <= 1e-9
        and worst_sink <= 1e-2
        and worst_sym <= 1e-9
        and not neg
        and ident_bad <= 1e-9
    )
    report_line(
        "A3",
        ok,
        f"exact worst {worst_exact:.2e}, sinkhorn worst rel {worst_sink:.2e}, "
        f"symmetry worst {worst_sym:.2e}",
    )
    assert worst_exact <= 1e-9
    assert worst_sink <= 1e-2
    assert worst_sym <= 1e-9
    assert not neg
    assert ident_bad <= 1e-9


# ---------------------------------------------------------------------------
# A4 - clinically graded ordering and exact time penalty
# ---------------------------------------------------------------------------

def test_a4_ordering_and_time_shift():
    tab = EmbeddingTable(
        2,
        {
            "MED/ref": [1.0, 0.0],
            "MED/similar": [0.9, math.sqrt(1 - 0.81)],
            "MED/irrelevant": [0.1, math.sqrt(1 - 0.01)],
            "DX/uti": [0.7, math.sqrt(1 - 0.49)],
            "DX/other": [-0.6, 0.8],
            "LAB/wbc": [0.5, math.sqrt(1 - 0.25)],
            "LAB/other": [-0.9, math.sqrt(1 - 0.81)],
        },
    )
    ref = [
        event("DX/uti"), gap(2), event("LAB/wbc"), gap(4),
        event("MED/ref"), gap(12), event("MED/ref"),
    ]

    def swap(code):
        return [
            event("DX/uti"), gap(2), event("LAB/wbc"), gap(4),
            event(code), gap(12), event(code),
        ]

    unrelated = [
        event("DX/other"), gap(30), event("LAB/other"), gap(50), event("LAB/other"),
    ]
    d_sim = sequence_emd(ref, swap("MED/similar"), tab)
    d_irr = sequence_emd(ref, swap("MED/irrelevant"), tab)
    d_unrel = sequence_emd(ref, unrelated, tab)
    ordering = d_sim < d_irr < d_unrel

    lam = 1.0
    shifts_ok = True
    base = sequence_emd([event("MED/ref")], [event("MED/similar")], tab,
                        TimeWeightConfig(lam))
    for delta in (1, 3, 7, 24, 72):
        shifted = sequence_emd(
            [event("MED/ref")], [gap(delta), event("MED/similar")], tab,
            TimeWeightConfig(lam),
        )
        shifts_ok = shifts_ok and shifted - base == pytest.approx(lam * delta, abs=1e-9)

    ok = ordering and shifts_ok
    report_line(
        "A4", ok,
        f"d(sim)={d_sim:.4f} < d(irr)={d_irr:.4f} < d(unrelated)={d_unrel:.4f}; "
        f"time shift exact: {shifts_ok}",
    )
    assert ordering
    assert shifts_ok


# ---------------------------------------------------------------------------
# A5 - metric oracle equivalence
# ---------------------------------------------------------------------------

def _auroc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    tot = sum(1.0 if p > n else (0.5 if p == n else 0.0) for p in pos for n in neg)
    return tot / (len(pos) * len(neg))


def _auprc_oracle(scores, labels):
    n_pos = sum(labels)
    area, prev = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        preds = [s >= thr for s in scores]
        tp = sum(1 for p, y in zip(preds, labels) if p and y)
        fp = sum(1 for p, y in zip(preds, labels) if p and not y)
        recall = tp / n_pos
        area += (recall - prev) * (tp / (tp + fp))
        prev = recall
    return area


def test_a5_metric_oracles():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 13))
        scores = rng.choice(np.linspace(0, 1, 7), size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        d = ScoredLabels(scores, labels)
        worst = max(worst, abs(auroc(d) - _auroc_oracle(scores, labels)))
        worst = max(worst, abs(auprc(d) - _auprc_oracle(scores, labels)))
        thr = float(rng.choice(np.linspace(0, 1, 9)))
        m = threshold_metrics(d, thr)
        preds = scores >= thr
        tp = int(np.sum(preds & (labels == 1)))
        fp = int(np.sum(preds & (labels == 0)))
        fn = int(np.sum(~preds & (labels == 1)))
        exp_prec = tp / (tp + fp) if tp + fp else 0.0
        exp_rec = tp / (tp + fn) if tp + fn else 0.0
        worst = max(worst, abs(m["precision"] - exp_prec), abs(m["recall"] - exp_rec))
        lp = rng.uniform(-20, 0, size=n)
        for k in (0.1, 0.2, 0.5, 1.0):
            count = math.ceil(k * n)
            worst = max(
                worst, abs(min_k_score(lp, k) - float(np.mean(np.sort(lp)[:count])))
            )

    invariant_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 30))
        scores = rng.integers(-50, 50, size=n) / 10.0
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = auroc(ScoredLabels(scores, labels))
        mapped = auroc(ScoredLabels(np.exp(scores / 4.0) + 1.0, labels))
        invariant_ok = invariant_ok and abs(base - mapped) <= 1e-12

    ok = worst <= 1e-12 and invariant_ok
    report_line("A5", ok, f"worst oracle gap {worst:.2e}, monotone invariance {invariant_ok}")
    assert worst <= 1e-12
    assert invariant_ok


# ---------------------------------------------------------------------------
# A6 - toy distribution fidelity
# ---------------------------------------------------------------------------

def test_a6_distribution_fidelity():
    cfg = ToyConfig()
    probs = digit_probs(cfg).probs
    seqs = toy_generate(cfg, [3, 1], n=25000, length=4, seed=606)
    tokens = np.concatenate(seqs)
    assert tokens.size == 100000
    counts = np.bincount(tokens, minlength=cfg.vocab_size)
    _, pval = chisquare(counts, probs * tokens.size)

    expected_counts = np.round(probs * tokens.size).astype(int)
    reference = [d for d in range(cfg.vocab_size) for _ in range(expected_counts[d])]
    corr = code_frequency_correlation([int(t) for t in tokens], reference)

    ok = pval > 0.01 and corr["pearson_log"] >= 0.99
    report_line(
        "A6", ok, f"chi-square p={pval:.4f}, pearson_log={corr['pearson_log']:.5f}"
    )
    assert pval > 0.01
    assert corr["pearson_log"] >= 0.99


# ---------------------------------------------------------------------------
# A7 - membership controls
# ---------------------------------------------------------------------------

def test_a7_membership_controls():
    part = run_membership_part(seed=0, n_each=500)
    pos, null = part["positive"]["auroc"], part["null"]["auroc"]
    ok = pos >= 0.9 and 0.45 <= null <= 0.55
    report_line("A7", ok, f"positive AUROC={pos:.4f}, null AUROC={null:.4f}")
    assert pos >= 0.9
    assert 0.45 <= null <= 0.55


# ---------------------------------------------------------------------------
# A8 - byte-identical reports across runs and worker counts
# ---------------------------------------------------------------------------

def _acceptance_cohort():
    rng = np.random.default_rng(11)
    probs = digit_probs(ToyConfig()).probs
    recs = []
    for i in range(10):
        tag = "train" if i < 7 else "test"
        trigger = i in (0, 3)
        if trigger:
            codes = ["0", "1"] + [str(d) for d in rng.choice(10, size=5, p=probs)] + ["9"]
        else:
            codes = [str(d) for d in rng.choice(9, size=8, p=probs[:9] / probs[:9].sum())]
            if codes[:2] == ["0", "1"]:
                codes[0] = "2"
        # one globally unique code across train records
        if i == 5:
            codes[4] = "8"
        else:
            codes = [c if c != "8" else "7" for c in codes]
        age = 90 if i in (0, 5) else 40 + i
        recs.append(
            Trajectory(f"p{i:02d}", {"age": age}, [event(c) for c in codes], tag)
        )
    return recs


def _acceptance_manifest(tmp_path, model_uri):
    cohort_path = tmp_path / "cohort.jsonl"
    cohort_path.write_text(serialize_cohort(_acceptance_cohort()))
    cat_path = tmp_path / "cat.json"
    cat_path.write_text(json.dumps({"name": "rare_code", "prefixes": ["9"]}))
    emb_path = tmp_path / "emb.tsv"
    lines = ["dim\t10"]
    for d in range(10):
        lines.append(str(d) + "\t" + "\t".join("1" if i == d else "0" for i in range(10)))
    emb_path.write_text("\n".join(lines) + "\n")
    return {
        "model": model_uri,
        "cohort": str(cohort_path),
        "embeddings": str(emb_path),
        "categories": [str(cat_path)],
        "tests": ["t1", "t2", "t4", "t5", "t6"],
        "config": {
            "setups": [{"kind": "static"}, {"kind": "n_codes", "n": 3}],
            "n_samples_per_prompt": 25,
            "horizon": 6,
            "seed": 1234,
        },
        "t5": {"identifier": "token:0", "grid": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]},
    }


def test_a8_determinism_across_workers(tmp_path, monkeypatch):
    # One manifest file, rerun with worker counts 1 and 8, twice each; the
    # full report.json bytes (manifest echo included) must never change.
    manifest = _acceptance_manifest(tmp_path, "toy:")
    out = tmp_path / "out"
    manifest["output_dir"] = str(out)
    mpath = tmp_path / "manifest.json"
    mpath.write_text(json.dumps(manifest))
    blobs = []
    for _, workers in product((0, 1), ("1", "8")):
        monkeypatch.setenv("AUDIT_WORKERS", workers)
        code = main(["run", "--manifest", str(mpath)])
        assert code == 2
        blobs.append((out / "report.json").read_bytes())
    ok = len(set(blobs)) == 1
    report_line("A8", ok, f"4 runs (2 repeats x workers 1/8), {len(set(blobs))} distinct report.json byte strings")
    assert ok


# ---------------------------------------------------------------------------
# A9 - replay-driven pipeline emits the full report shape
# ---------------------------------------------------------------------------

class RecordingModel(ModelHandle):
    """Wraps a base model, capturing every request as a replay fixture record."""

    def __init__(self, base):
        self.base = base
        self.records = {}

    def capabilities(self):
        return self.base.capabilities()

    def _generate(self, req):
        resp = self.base._generate(req)
        key = generate_key(req.prompt, req.max_new_tokens, req.mode, req.seed)
        self.records[key] = {
            "key": key,
            "sequences": [tokens_to_wire(s) for s in resp.sequences],
        }
        return resp

    def _logprobs(self, tokens):
        out = self.base._logprobs(tokens)
        key = logprobs_key(tokens)
        self.records[key] = {"key": key, "logprobs": [float(x) for x in out]}
        return out

    def _embed(self, req):
        vec = self.base._embed(req)
        key = embed_key(req.tokens, req.prefix_len)
        self.records[key] = {"key": key, "embedding": [float(v) for v in vec]}
        return vec


def test_a9_replay_pipeline_shape(tmp_path, monkeypatch):
    monkeypatch.delenv("AUDIT_WORKERS", raising=False)
    manifest = _acceptance_manifest(tmp_path, "toy:")
    recorder = RecordingModel(ToyModel())
    live_report = execute_manifest(manifest, recorder)

    fixture_path = tmp_path / "fixture.jsonl"
    fixture_path.write_text(
        "\n".join(json.dumps(rec) for rec in recorder.records.values()) + "\n"
    )

    replay_manifest = dict(manifest)
    replay_manifest["model"] = f"replay:{fixture_path}"
    out = tmp_path / "replay-out"
    replay_manifest["output_dir"] = str(out)
    mpath = tmp_path / "replay-manifest.json"
    mpath.write_text(json.dumps(replay_manifest))
    code = main(["run", "--manifest", str(mpath)])

    # identical test payloads through the live model and the replay file
    replay_doc = json.loads((out / "report.json").read_text())
    live_tests = json.loads(
        json.dumps(
            {"tests": to_jsonable(live_report["tests"])}, sort_keys=True
        )
    )
    same_payload = live_tests["tests"] == replay_doc["tests"]

    csv_path = out / "t2_rare_code_sensitivity.csv"
    header = csv_path.read_text().splitlines()[0]
    table_columns = (
        header
        == "sensitive_attribute,patient_prevalence,prompt,auroc,auprc,precision,"
        "recall,positive_prediction_count"
    )
    plot_kinds = {
        "t1": (out / "t1_distance_by_setup.svg").exists(),
        "t4": (out / "t4_score_histogram.svg").exists(),
        "t5": any(out.glob("t5_perturbation_*.svg")),
        "t6": (out / "t6_subgroup_likelihood.svg").exists(),
    }
    ok = code == 2 and same_payload and table_columns and all(plot_kinds.values())
    report_line(
        "A9",
        ok,
        "benchmark-scale values not reproduced (out of desk scale); replay "
        f"pipeline emits table columns={table_columns}, plots={plot_kinds}, "
        f"live==replay payload: {same_payload}",
    )
    assert code == 2
    assert same_payload
    assert table_columns
    assert all(plot_kinds.values())
