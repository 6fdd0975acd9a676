"""Command-line front end: one subcommand per pipeline stage.

Every subcommand takes ``--config`` (YAML experiment file), ``--seed``, and
``--out`` (the workspace directory all artifacts live under), and prints the
path of the JSON report it wrote.  Expected failures — bad config, missing
prerequisite artifacts — exit with status 2 and a one-line message naming
the command that produces the missing piece.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..simworld import MaterialError
from ..tensor import ContractError
from .config import ConfigError, load_config
from . import pipeline
from .pipeline import MissingPrerequisiteError, UsageError

_SUMMARY_KEYS = {
    "collect": ["run_directory", "total_steps"],
    "make-targets": ["max_width_px"],
    "train-ae": ["checkpoint", "loss_last", "probe_iou_mean"],
    "train-model": ["checkpoint", "loss_last", "n_trials"],
    "estimate-pb": ["nearest_correct", "n_held", "oracle_mean_ratio"],
    "control": ["n_trials", "stiffness_free_median_best_loss",
                "stiffness_fixed_median_best_loss"],
    "integrated": ["weights_unchanged", "first_third_mean_min",
                   "final_third_mean_min"],
    "ellipsoid": ["strictly_nested", "doubling_all_within_5pct"],
    "analyze": [],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clothbench",
        description="Desk-scale dynamic cloth manipulation workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, out_required: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--out", required=out_required,
                       help="workspace directory for artifacts and reports")
        return p

    p = add("collect", "roll data-collection episodes into a run directory")
    p.add_argument("--policy", default="mixed",
                   choices=["mixed", "random", "scripted", "controller", "teleop"],
                   help="command source for the episodes (default mixed)")
    add("make-targets", "freeze goal silhouettes from a scripted fling session")
    add("train-ae", "fit the silhouette autoencoder on the collected frames")
    add("train-model", "fit the dynamics model with per-trial bias rows")
    add("estimate-pb", "estimate biases for held-out materials + oracle check")
    add("control", "run the controlled-vs-random evaluation grid")
    add("integrated", "control with in-loop bias estimation from a wrong start")
    add("ellipsoid", "sweep static end-effector displacement across gains")
    add("analyze", "fuse all artifacts into figure datasets and verdicts")

    p = sub.add_parser("serve", help="run the live teleoperation service")
    p.add_argument("--config", required=False, help="unused; accepted for symmetry")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    p.add_argument("--out", required=False,
                   help="record directory for teleop episodes (optional)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--material", type=float, nargs=2, default=(0.05, 0.10),
                   metavar=("C_DAMP", "C_MASS"), help="cloth in hand at startup")
    p.add_argument("--static", default=None,
                   help="directory of UI files to host at / (optional)")
    return parser


def _run_serve(args) -> int:
    from .teleop import ServeSettings, serve

    record_dir = None
    if args.out:
        record_dir = str(Path(args.out) / "collect")
    static = args.static
    if static is None:
        candidate = Path.cwd() / "frontend" / "dist"
        static = str(candidate) if candidate.is_dir() else None
    serve(ServeSettings(record_dir=record_dir,
                        material=tuple(args.material),
                        static_dir=static),
          host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return _run_serve(args)
        cfg = load_config(args.config)
        if args.command == "collect":
            if args.policy == "teleop":
                print("teleop collection is live: starting the service; "
                      "record controls write into the workspace", flush=True)
                args.host, args.port, args.material, args.static = \
                    "127.0.0.1", 8765, (0.05, 0.10), None
                return _run_serve(args)
            report = pipeline.run_collect(cfg, args.seed, args.out,
                                          policy=args.policy)
        elif args.command == "make-targets":
            report = pipeline.run_make_targets(cfg, args.seed, args.out)
        elif args.command == "train-ae":
            report = pipeline.run_train_ae(cfg, args.seed, args.out)
        elif args.command == "train-model":
            report = pipeline.run_train_model(cfg, args.seed, args.out)
        elif args.command == "estimate-pb":
            report = pipeline.run_estimate_pb(cfg, args.seed, args.out)
        elif args.command == "control":
            report = pipeline.run_control(cfg, args.seed, args.out)
        elif args.command == "integrated":
            report = pipeline.run_integrated(cfg, args.seed, args.out)
        elif args.command == "ellipsoid":
            report = pipeline.run_ellipsoid(cfg, args.seed, args.out)
        elif args.command == "analyze":
            report = pipeline.run_analyze(cfg, args.seed, args.out)
        else:  # pragma: no cover - argparse enforces the choices
            raise UsageError(f"unhandled command {args.command}")
    except (ConfigError, MissingPrerequisiteError, UsageError,
            MaterialError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    if args.command == "analyze":
        _print_analyze_summary(report)
    else:
        for key in _SUMMARY_KEYS.get(args.command, []):
            if key in report:
                print(f"{key}: {report[key]}")
    print(f"report: {report['report_path']}")
    return 0


def _print_analyze_summary(report: dict) -> None:
    pb = report.get("pb", {})
    est = report.get("estimation", {})
    ctl = report.get("control", {})
    itg = report.get("integrated", {})
    cham = report.get("chamfer", {})
    ell = report.get("ellipsoid", {})
    stf = report.get("stiffness_substitute", {})
    lines = [
        ("bias map: spearman(pc1, damping)", pb.get("spearman_pc1_cdamp")),
        ("bias map: pc1 ratio > pc2 ratio", pb.get("pc1_gt_pc2")),
        ("estimation: nearest-correct held materials", est.get("nearest_correct")),
        ("estimation: oracle mean error ratio", est.get("oracle_mean_ratio")),
        ("control: dominates random at every threshold", ctl.get("all_pairs_dominate")),
        ("control: worst min-error/initial ratio", ctl.get("max_min_err_ratio")),
        ("integrated: final-third minima below first-third", itg.get("final_below_first_mean")),
        ("integrated: weights untouched", itg.get("weights_unchanged")),
        ("chamfer: pearson(latent err, log chamfer)",
         cham.get("pearson_latent_vs_log_chamfer")),
        ("ellipsoid: strictly nested", ell.get("strictly_nested")),
        ("ellipsoid: doubling halves displacement", ell.get("doubling_all_within_5pct")),
        ("stiffness: free-gain median <= fixed-low median",
         stf.get("free_not_worse")),
    ]
    for label, value in lines:
        print(f"{label}: {value}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
