"""Command-line entry point.

Subcommands mirror the audit tests: ``audit run --manifest m.json`` executes
a configured selection end to end; ``audit t1``..``t6`` run one test with
flags mirroring the manifest fields; ``audit validate-cohort`` checks a
trajectory file; ``audit toy-demo`` runs the built-in positive-control suite
on the synthetic memorizing model.

Exit codes: 0 all tests passed (or nothing ran), 2 at least one test
flagged or failed, 1 execution error. The worker count comes from the
AUDIT_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import report as report_mod
from .audits import (
    TestRunConfig,
    t1_trajectory,
    t2_sensitivity,
    t3_probing,
    t4_membership,
    t5_perturbation,
    t6_subpopulation,
)
from .corpus import N_CODES, RANDOM, STATIC, PromptSetup, SensitiveCategory, parse_cohort
from .embeddings import load_table
from .errors import AuditError
from .models import model_from_uri
from .transport import TimeWeightConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2


class CliError(Exception):
    pass


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("AUDIT_WORKERS", "1")))
    except ValueError:
        return 1


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} file not found: {p}")
    return p


def _load_cohort(path):
    with open(_need_file(path, "cohort"), "r", encoding="utf-8") as fh:
        return parse_cohort(fh)


def _load_categories(paths) -> list[SensitiveCategory]:
    cats = []
    for path in paths:
        text = _need_file(path, "category config").read_text(encoding="utf-8")
        cats.append(SensitiveCategory.from_json(text))
    return cats


def _parse_setups(spec: str):
    setups = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part == RANDOM:
            setups.append(PromptSetup(kind=RANDOM))
        elif part == STATIC:
            setups.append(PromptSetup(kind=STATIC))
        else:
            setups.append(PromptSetup(kind=N_CODES, n=int(part)))
    if not setups:
        raise CliError(f"no prompt setups in {spec!r}")
    return tuple(setups)


def _config_from_obj(obj: dict, seed=None) -> TestRunConfig:
    kw = {}
    for key in (
        "n_samples_per_prompt",
        "horizon",
        "sensitivity_threshold",
        "min_k",
        "t4_auroc_bound",
        "seed",
        "max_patients",
    ):
        if key in obj and obj[key] is not None:
            kw[key] = obj[key]
    if "setups" in obj and obj["setups"]:
        setups = []
        for s in obj["setups"]:
            setups.append(
                PromptSetup(kind=s["kind"], n=s.get("n"))
                if isinstance(s, dict)
                else _parse_setups(str(s))[0]
            )
        kw["setups"] = tuple(setups)
    if seed is not None:
        kw["seed"] = seed
    return TestRunConfig(workers=_workers(), **kw)


def _config_echo(cfg: TestRunConfig) -> dict:
    setups = []
    for s in cfg.setups:
        entry = {"kind": s.kind}
        if s.n is not None:
            entry["n"] = s.n
        setups.append(entry)
    return {
        "setups": setups,
        "n_samples_per_prompt": cfg.n_samples_per_prompt,
        "horizon": cfg.horizon,
        "sensitivity_threshold": cfg.sensitivity_threshold,
        "min_k": cfg.min_k,
        "t4_auroc_bound": cfg.t4_auroc_bound,
        "seed": cfg.seed,
        "max_patients": cfg.max_patients,
    }


def _write_outputs(report: dict, out_dir) -> None:
    report_mod.render_report(report, "json", out_dir)
    report_mod.render_report(report, "csv", out_dir)
    report_mod.render_report(report, "svg-bundle", out_dir)
    flagged = []
    for rep in report.get("tests", {}).values():
        flagged.extend(rep.get("flagged", []) if isinstance(rep, dict) else [])
    if flagged:
        (Path(out_dir) / "flagged_worklist.jsonl").write_text(
            report_mod.worklist_to_jsonl(flagged), encoding="utf-8"
        )
    sidecar = {"written_at_unix": int(time.time()), "workers": _workers()}
    (Path(out_dir) / "run_meta.json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
    )


def _exit_code(report: dict) -> int:
    for rep in report.get("tests", {}).values():
        if isinstance(rep, dict) and rep.get("status") in ("flag", "fail"):
            return EXIT_FLAGGED
    return EXIT_OK


def _sequences_by_tag(cohort, tag):
    return [list(t.events) for t in cohort if t.cohort_tag == tag]


# ---------------------------------------------------------------------------
# run: manifest-driven execution
# ---------------------------------------------------------------------------

def execute_manifest(manifest: dict, model) -> dict:
    """Run the manifest's selected tests against an already-built model."""
    cfg = _config_from_obj(manifest.get("config", {}))
    tests = manifest.get("tests", [])
    lam = manifest.get("lambda_per_hour", 1.0)

    cohort = None
    if any(t in tests for t in ("t1", "t2", "t3", "t4", "t6")):
        cohort = _load_cohort(manifest["cohort"])
    table = None
    if "t1" in tests:
        with open(_need_file(manifest["embeddings"], "embedding table"), "r",
                  encoding="utf-8") as fh:
            table = load_table(fh)
    categories = _load_categories(manifest.get("categories", [])) if any(
        t in tests for t in ("t2", "t3", "t5", "t6")
    ) else []

    report = {
        "model": manifest["model"],
        "config": _config_echo(cfg),
        "manifest_echo": manifest,
        "tests": {},
    }
    if "t1" in tests:
        report["tests"]["t1"] = t1_trajectory(
            model, cohort, cfg, table, TimeWeightConfig(lam),
            solver=manifest.get("solver", "exact"),
        )
    t2_by_category = {}
    for category in categories:
        if "t2" in tests:
            key = f"t2_{category.name}"
            rep = t2_sensitivity(model, cohort, category, cfg)
            report["tests"][key] = rep
            t2_by_category[category.name] = rep
        if "t3" in tests:
            t3_kw = manifest.get("t3", {})
            report["tests"][f"t3_{category.name}"] = t3_probing(
                model, cohort, category, cfg,
                prefix_lens=tuple(t3_kw.get("prefix_lens", (10, 20, 50))),
                fractions=tuple(t3_kw.get("fractions", ("test", 0.001, 0.10, 0.20))),
            )
    if "t4" in tests:
        members = _sequences_by_tag(cohort, "train")
        nonmembers = _sequences_by_tag(cohort, "test")
        report["tests"]["t4"] = t4_membership(model, members, nonmembers, cfg)
    if "t5" in tests:
        t5_conf = manifest.get("t5", {})
        identifier = t5_conf.get("identifier", "age")
        grid = t5_conf.get("grid")
        if grid is None:
            raise CliError("manifest t5 section needs a grid")
        max_prompts = int(t5_conf.get("max_prompts", 10))
        curves = []
        for rep in t2_by_category.values():
            for flagged in rep["flagged"][:max_prompts]:
                curves.append(t5_perturbation(model, flagged, identifier, grid, cfg))
        report["tests"]["t5"] = {
            "status": "flag" if any(c.flagged for c in curves) else "pass",
            "identifier": identifier,
            "curves": curves,
        }
    if "t6" in tests:
        report["tests"]["t6"] = t6_subpopulation(
            model, cohort, cfg, categories,
            elderly_age=int(manifest.get("elderly_age", 85)),
        )
    return report


def cmd_run(args) -> int:
    manifest_path = _need_file(args.manifest, "manifest")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    out_dir = Path(manifest.get("output_dir", "audit-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model_from_uri(manifest["model"])
    try:
        report = execute_manifest(manifest, model)
    finally:
        model.close()
    _write_outputs(report, out_dir)
    code = _exit_code(report)
    print(f"report written to {out_dir} (exit {code})")
    return code


# ---------------------------------------------------------------------------
# single-test commands
# ---------------------------------------------------------------------------

def _single_test_report(args, key, rep, cfg) -> int:
    report = {"model": args.model, "config": _config_echo(cfg), "tests": {key: rep}}
    out_dir = Path(args.out)
    _write_outputs(report, out_dir)
    code = _exit_code(report)
    print(f"{key}: {rep.get('status')} -> {out_dir}")
    return code


def cmd_t1(args) -> int:
    cfg = _config_from_obj(
        {
            "n_samples_per_prompt": args.samples,
            "horizon": args.horizon,
            "max_patients": args.max_patients,
            "setups": None,
        },
        seed=args.seed,
    )
    if args.setups:
        cfg = TestRunConfig(
            setups=_parse_setups(args.setups),
            n_samples_per_prompt=cfg.n_samples_per_prompt,
            horizon=cfg.horizon,
            seed=cfg.seed,
            max_patients=cfg.max_patients,
            workers=_workers(),
        )
    model = model_from_uri(args.model)
    try:
        cohort = _load_cohort(args.cohort)
        with open(_need_file(args.embeddings, "embedding table"), "r", encoding="utf-8") as fh:
            table = load_table(fh)
        rep = t1_trajectory(model, cohort, cfg, table, TimeWeightConfig(args.lam),
                            solver=args.solver)
    finally:
        model.close()
    return _single_test_report(args, "t1", rep, cfg)


def cmd_t2(args) -> int:
    cfg = _config_from_obj(
        {
            "n_samples_per_prompt": args.samples,
            "horizon": args.horizon,
            "sensitivity_threshold": args.threshold,
            "max_patients": args.max_patients,
        },
        seed=args.seed,
    )
    if args.setups:
        cfg = TestRunConfig(
            setups=_parse_setups(args.setups),
            n_samples_per_prompt=cfg.n_samples_per_prompt,
            horizon=cfg.horizon,
            sensitivity_threshold=cfg.sensitivity_threshold,
            seed=cfg.seed,
            max_patients=cfg.max_patients,
            workers=_workers(),
        )
    model = model_from_uri(args.model)
    try:
        cohort = _load_cohort(args.cohort)
        report = {"model": args.model, "config": _config_echo(cfg), "tests": {}}
        for category in _load_categories(args.category):
            report["tests"][f"t2_{category.name}"] = t2_sensitivity(
                model, cohort, category, cfg
            )
    finally:
        model.close()
    _write_outputs(report, Path(args.out))
    code = _exit_code(report)
    print(f"t2 -> {args.out}")
    return code


def cmd_t3(args) -> int:
    cfg = _config_from_obj({}, seed=args.seed)
    model = model_from_uri(args.model)
    try:
        cohort = _load_cohort(args.cohort)
        fractions = tuple(
            p if p == "test" else float(p) for p in args.fractions.split(",")
        )
        prefix_lens = tuple(int(p) for p in args.prefix_lens.split(","))
        report = {"model": args.model, "config": _config_echo(cfg), "tests": {}}
        for category in _load_categories(args.category):
            report["tests"][f"t3_{category.name}"] = t3_probing(
                model, cohort, category, cfg, prefix_lens=prefix_lens, fractions=fractions
            )
    finally:
        model.close()
    _write_outputs(report, Path(args.out))
    print(f"t3 -> {args.out}")
    return _exit_code(report)


def cmd_t4(args) -> int:
    cfg = _config_from_obj(
        {"min_k": args.min_k, "t4_auroc_bound": args.bound}, seed=args.seed
    )
    model = model_from_uri(args.model)
    try:
        cohort = _load_cohort(args.cohort)
        members = _sequences_by_tag(cohort, "train")
        nonmembers = _sequences_by_tag(cohort, "test")
        rep = t4_membership(model, members, nonmembers, cfg)
    finally:
        model.close()
    return _single_test_report(args, "t4", rep, cfg)


def cmd_t5(args) -> int:
    cfg = _config_from_obj(
        {"n_samples_per_prompt": args.samples, "horizon": args.horizon,
         "sensitivity_threshold": args.threshold},
        seed=args.seed,
    )
    worklist = report_mod.worklist_from_jsonl(
        _need_file(args.worklist, "worklist").read_text(encoding="utf-8")
    )
    if not 0 <= args.index < len(worklist):
        raise CliError(f"worklist has {len(worklist)} entries, no index {args.index}")
    grid = [_coerce(v) for v in args.grid.split(",")]
    model = model_from_uri(args.model)
    try:
        curve = t5_perturbation(model, worklist[args.index], args.identifier, grid, cfg)
    finally:
        model.close()
    rep = {
        "status": "flag" if curve.flagged else "pass",
        "identifier": args.identifier,
        "curves": [curve],
    }
    return _single_test_report(args, "t5", rep, cfg)


def cmd_t6(args) -> int:
    cfg = _config_from_obj(
        {"n_samples_per_prompt": args.samples, "horizon": args.horizon,
         "sensitivity_threshold": args.threshold, "max_patients": args.max_patients},
        seed=args.seed,
    )
    model = model_from_uri(args.model)
    try:
        cohort = _load_cohort(args.cohort)
        categories = _load_categories(args.category)
        rep = t6_subpopulation(model, cohort, cfg, categories, elderly_age=args.elderly_age)
    finally:
        model.close()
    return _single_test_report(args, "t6", rep, cfg)


def _coerce(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def cmd_validate_cohort(args) -> int:
    with open(_need_file(args.path, "cohort"), "r", encoding="utf-8") as fh:
        cohort = parse_cohort(fh)
    n_train = sum(1 for t in cohort if t.cohort_tag == "train")
    n_test = sum(1 for t in cohort if t.cohort_tag == "test")
    print(f"{args.path}: {len(cohort)} trajectories ({n_train} train, {n_test} test)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# toy-demo: built-in positive-control suite
# ---------------------------------------------------------------------------

def cmd_toy_demo(args) -> int:
    from .demo import run_toy_demo

    report = run_toy_demo(
        out_dir=Path(args.out),
        only=args.only,
        seed=args.seed,
        echo=print,
    )
    return _exit_code(report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audit",
        description="Black-box memorization and privacy audit for code-sequence models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute the tests selected in a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_run)

    def common(p, embeddings=False):
        p.add_argument("--model", required=True, help="toy:/replay:/echo:/bridge: uri")
        p.add_argument("--cohort", required=True)
        if embeddings:
            p.add_argument("--embeddings", required=True)
        p.add_argument("--out", default="audit-out")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=200)
        p.add_argument("--horizon", type=int, default=100)
        p.add_argument("--max-patients", dest="max_patients", type=int, default=None)

    p = sub.add_parser("t1", help="trajectory distance by prompt setup")
    common(p, embeddings=True)
    p.add_argument("--setups", default="random,static,10,20,50")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--solver", default="exact", choices=("exact", "sinkhorn"))
    p.set_defaults(func=cmd_t1)

    p = sub.add_parser("t2", help="sensitive-attribute disclosure rate")
    common(p)
    p.add_argument("--category", action="append", required=True)
    p.add_argument("--setups", default="static,10,20,50")
    p.add_argument("--threshold", type=float, default=0.30)
    p.set_defaults(func=cmd_t2)

    p = sub.add_parser("t3", help="probe embeddings for a sensitive category")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--category", action="append", required=True)
    p.add_argument("--prefix-lens", dest="prefix_lens", default="10,20,50")
    p.add_argument("--fractions", default="test,0.001,0.1,0.2")
    p.add_argument("--out", default="audit-out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_t3)

    p = sub.add_parser("t4", help="membership inference on train vs test records")
    common(p)
    p.add_argument("--min-k", dest="min_k", type=float, default=0.2)
    p.add_argument("--bound", type=float, default=0.6)
    p.set_defaults(func=cmd_t4)

    p = sub.add_parser("t5", help="perturb one flagged prompt's identifier")
    p.add_argument("--model", required=True)
    p.add_argument("--worklist", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--identifier", required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--out", default="audit-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.30)
    p.set_defaults(func=cmd_t5)

    p = sub.add_parser("t6", help="subpopulation risk (rare codes, elderly)")
    common(p)
    p.add_argument("--category", action="append", required=True)
    p.add_argument("--threshold", type=float, default=0.30)
    p.add_argument("--elderly-age", dest="elderly_age", type=int, default=85)
    p.set_defaults(func=cmd_t6)

    p = sub.add_parser("validate-cohort", help="parse and check a trajectory file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_cohort)

    p = sub.add_parser("toy-demo", help="positive-control suite on the synthetic model")
    p.add_argument("--out", default="toy-demo-out")
    p.add_argument("--only", default="all",
                   choices=("all", "perturbation", "probing", "membership"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
