"""Command-line entry points: sweep, report, simulate, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .dataset import DatasetSplit, load_dataset, normalize_scale, partition_hil_splits
from .gate import curve_to_csv, curve_to_json, sweep_thresholds
from .orchestrator import (
    OracleCorrector,
    OrchestratorConfig,
    evaluate_split,
    simulate,
)
from .scoring import ScorerProfile, load_template, score_instance, synthetic_backend
from .service import ServiceConfig, create_app
from .wire import HttpScorerBackend


def _fmt(value, width=9) -> str:
    if value is None:
        return "--".rjust(width)
    return f"{value:.3f}".rjust(width)


def _parse_profile(text: str) -> ScorerProfile:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected sharpness,noise,correlation")
    return ScorerProfile(sharpness=parts[0], noise=parts[1], correlation=parts[2])


def _parse_breakpoints(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected b1,b2")
    return (parts[0], parts[1])


def _parse_grid(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend-url", default=os.environ.get("CHILL_BACKEND_URL"),
                        help="remote scorer base URL (default: CHILL_BACKEND_URL)")
    parser.add_argument("--model-profile", type=_parse_profile, default=ScorerProfile(),
                        metavar="A,S,R",
                        help="synthetic backend profile: sharpness,noise,correlation")
    parser.add_argument("--seed", type=int, default=0)


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="JSONL dataset file")
    parser.add_argument("--format", dest="dataset_format", default="jsonl",
                        choices=("jsonl", "csv"))
    parser.add_argument("--normalize-scale", type=_parse_breakpoints, default=None,
                        metavar="B1,B2", help="collapse rubrics to 3 grades at these breakpoints")


def _load_splits(args) -> dict[str, DatasetSplit]:
    split = load_dataset(args.dataset, format=args.dataset_format)
    instances = split.instances
    if args.normalize_scale is not None:
        instances = tuple(normalize_scale(i, args.normalize_scale) for i in instances)
    by_tag: dict[str, list] = {}
    for inst in instances:
        by_tag.setdefault(inst.split_tag, []).append(inst)
    out = {}
    for tag, insts in by_tag.items():
        role = "source" if tag == "train" else ("calibration" if tag == "cal" else "target")
        out[tag] = DatasetSplit(name=tag, instances=tuple(insts), role=role)
    return out


def _build_backend(args, pretrain=None):
    if args.backend_url:
        return HttpScorerBackend(args.backend_url)
    return synthetic_backend(profile=args.model_profile, seed=args.seed, pretrain=pretrain)


def _cycle_splits(splits: dict[str, DatasetSplit], args) -> list[DatasetSplit]:
    hil = sorted(
        (tag for tag in splits if tag.startswith("D2")), key=lambda t: int(t[2:])
    )
    if hil:
        return [splits[tag] for tag in hil]
    test_instances = [
        inst
        for tag, split in splits.items()
        if tag not in ("train", "cal")
        for inst in split.instances
    ]
    if not test_instances:
        sys.exit("dataset has no test or D2j records to cycle over")
    pooled = DatasetSplit(name="test", instances=tuple(test_instances), role="target")
    return partition_hil_splits(pooled, args.cycles, args.seed)


def cmd_simulate(args) -> int:
    splits = _load_splits(args)
    if "cal" not in splits:
        sys.exit("simulate needs a 'cal' split for stage-1 calibration")
    train = splits.get("train")
    backend = _build_backend(args, pretrain=train.instances if train else None)
    config = OrchestratorConfig(
        k=args.k,
        replay_enabled=not args.no_replay,
        seed=args.seed,
        train_split=train,
        report_dir=Path(args.report_dir) if args.report_dir else None,
    )
    cycle_splits = _cycle_splits(splits, args)
    corrector = OracleCorrector()
    result = simulate(backend, splits["cal"], cycle_splits, args.tau, corrector, config)

    print(f"stage1: T*={result.stage1.temperature.value:.3f} "
          f"ECE {result.stage1.report.ece_before:.3f} -> {result.stage1.report.ece_after:.3f}")
    header = f"{'cycle':>5} {'split':>6} {'n':>5} {'Coverage':>9} {'Baseline':>9} " \
             f"{'Acc.QWK':>9} {'Delta':>9} {'Rej.QWK':>9} {'T*':>7}"
    print(header)
    rows = []
    for state in result.cycles:
        pre, post = state.pre_metrics, state.post_metrics
        delta = None
        if post.accepted.qwk is not None and pre.accepted.qwk is not None:
            delta = post.accepted.qwk - pre.accepted.qwk
        print(
            f"{state.cycle_index:>5} {state.split.name:>6} {len(state.split):>5} "
            f"{_fmt(pre.coverage)} {_fmt(pre.accepted.qwk)} {_fmt(post.accepted.qwk)} "
            f"{_fmt(delta)} {_fmt(pre.rejected.qwk)} {state.temperature_after.value:>7.3f}"
        )
        rows.append(
            {
                "cycle": state.cycle_index,
                "split": state.split.name,
                "n": len(state.split),
                "coverage": pre.coverage,
                "baseline_qwk": pre.accepted.qwk,
                "accepted_qwk": post.accepted.qwk,
                "delta_qwk": delta,
                "rejected_qwk": pre.rejected.qwk,
                "corrections": len(state.corrections),
                "replay_items": len(state.replay) if state.replay else 0,
                "temperature_after": state.temperature_after.value,
            }
        )
    if args.out:
        payload = {
            "schema_version": 1,
            "stage1": result.stage1.report.to_dict(),
            "cycles": rows,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2))
        print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    splits = _load_splits(args)
    backend = _build_backend(args)
    template = load_template("basic")

    cal = splits.get("cal")
    eval_tags = [t for t in splits if t != "cal"] or ["cal"]
    eval_instances = [inst for t in eval_tags for inst in splits[t].instances
                      if inst.gold_grade is not None]
    if not eval_instances:
        sys.exit("sweep needs gold grades")

    from .calibration import apply_temperature, fit_temperature

    temperature = 1.0
    if cal is not None:
        pairs = [(score_instance(backend, template, i), i.gold_grade) for i in cal.instances]
        temperature = fit_temperature(pairs).value
    preds, golds = [], []
    for inst in eval_instances:
        preds.append(apply_temperature(score_instance(backend, template, inst), temperature))
        golds.append(inst.gold_grade)
    curve = sweep_thresholds(preds, golds, args.tau_grid)
    output = curve_to_csv(curve) if args.output_format == "csv" else curve_to_json(curve)
    if args.out:
        Path(args.out).write_text(output)
        print(f"wrote {args.out}")
    else:
        print(output)
    return 0


def cmd_report(args) -> int:
    splits = _load_splits(args)
    backend = _build_backend(args, pretrain=splits.get("train"))
    template = load_template("basic")

    temperature = 1.0
    if "cal" in splits:
        from .calibration import fit_temperature

        pairs = [
            (score_instance(backend, template, i), i.gold_grade)
            for i in splits["cal"].instances
        ]
        temperature = fit_temperature(pairs).value
        print(f"T* = {temperature:.3f} (fitted on cal)")

    print(f"{'split':>8} {'n':>5} {'Coverage':>9} {'Baseline':>9} {'Acc.QWK':>9} "
          f"{'Delta':>9} {'Rej.QWK':>9}")
    for tag in sorted(splits):
        if tag in ("train", "cal"):
            continue
        split = splits[tag]
        metrics = evaluate_split(backend, template, split, temperature, args.tau)
        delta = None
        if metrics.accepted.qwk is not None and metrics.full.qwk is not None:
            delta = metrics.accepted.qwk - metrics.full.qwk
        print(
            f"{tag:>8} {len(split):>5} {_fmt(metrics.coverage)} {_fmt(metrics.full.qwk)} "
            f"{_fmt(metrics.accepted.qwk)} {_fmt(delta)} {_fmt(metrics.rejected.qwk)}"
        )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    config = ServiceConfig.from_env(
        tau=args.tau,
        profile=args.model_profile,
        seed=args.seed,
        lease_seconds=args.lease_seconds,
    )
    if args.data_dir:
        config.data_dir = Path(args.data_dir)
    if args.backend_url:
        config.backend_url = args.backend_url
    if args.token:
        config.auth_token = args.token
    host, _, port = args.addr.partition(":")
    app = create_app(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradegate",
        description="Calibrated selective-prediction grading engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the full correction-cycle protocol")
    _add_dataset_args(p_sim)
    _add_backend_args(p_sim)
    p_sim.add_argument("--cycles", type=int, default=2,
                       help="review slices when the dataset has no D2j tags")
    p_sim.add_argument("--tau", type=float, default=0.8)
    p_sim.add_argument("--corrector", choices=("oracle",), default="oracle")
    p_sim.add_argument("--k", type=int, default=3)
    p_sim.add_argument("--no-replay", action="store_true")
    p_sim.add_argument("--out", default=None, help="write the cycle report as JSON")
    p_sim.add_argument("--report-dir", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="coverage-quality curve over a threshold grid")
    _add_dataset_args(p_sweep)
    _add_backend_args(p_sweep)
    p_sweep.add_argument("--tau-grid", type=_parse_grid, default=(0.4, 0.5, 0.6, 0.8, 0.9))
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--output-format", choices=("json", "csv"), default="json")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="gate metrics table per split")
    _add_dataset_args(p_rep)
    _add_backend_args(p_rep)
    p_rep.add_argument("--tau", type=float, default=0.8)
    p_rep.set_defaults(func=cmd_report)

    p_srv = sub.add_parser("serve", help="run the review service")
    p_srv.add_argument("--addr", default=os.environ.get("CHILL_ADDR", "127.0.0.1:8000"))
    p_srv.add_argument("--data-dir", default=None)
    p_srv.add_argument("--tau", type=float, default=0.8)
    p_srv.add_argument("--token", default=None)
    p_srv.add_argument("--lease-seconds", type=float, default=300.0)
    _add_backend_args(p_srv)
    p_srv.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
