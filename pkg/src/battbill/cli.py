"""Experiment command line: generate, train, evaluate, report.

Exit codes: 0 success, 2 configuration error, 3 data or artifact error.
All outputs are deterministic for a fixed config and seed; wall-clock
timing is printed to stdout but never written into artifacts.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import data as data_io
from . import experiment, serialize, trainer
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="battbill",
        description="Battery dispatch optimization for bills with demand charges",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--preset", choices=["desk", "full"], help="grid/data preset")
        p.add_argument("--problem", choices=["dem", "ddm", "mdm"])
        p.add_argument("--variant", choices=["s1", "s2", "s3", "s4"])
        p.add_argument("--fallback", choices=["lazy", "heuristic"])
        p.add_argument("--recouple", action="store_const", const=True, default=None,
                       help="enable end-of-day recoupling during evaluation")
        p.add_argument("--jobs", type=int, help="parallel per-day DP jobs")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="override the output directory")

    p_gen = sub.add_parser("generate", help="write synthetic train/test CSVs")
    common(p_gen)

    p_train = sub.add_parser("train", help="train an agent and write artifacts")
    common(p_train)

    p_eval = sub.add_parser("evaluate", help="evaluate artifacts on the test days")
    common(p_eval)
    p_eval.add_argument("--agent", choices=list(experiment.AGENT_KINDS), default="trained")

    p_rep = sub.add_parser("report", help="combine evaluation outputs side by side")
    p_rep.add_argument("--eval", nargs="+", required=True, dest="eval_dirs",
                       help="evaluation output directories")
    p_rep.add_argument("--out", required=True)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    return load_config(
        args.config,
        preset=args.preset,
        problem=args.problem,
        variant=args.variant,
        fallback=args.fallback,
        recouple=args.recouple,
        jobs=args.jobs,
        seed=args.seed,
    )


def cmd_generate(cfg: ExperimentConfig, out: str | None) -> int:
    out_dir = Path(out) if out else cfg.data_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.n_test < 0 or cfg.n_train < 1:
        raise ConfigError("generate needs n_train >= 1 and n_test >= 0")
    days = data_io.synth_days(cfg.n_train + cfg.n_test, cfg.seed, horizon=cfg.grid.horizon)
    data_io.save_csv(days[: cfg.n_train], out_dir / "train.csv")
    data_io.save_csv(days[cfg.n_train :], out_dir / "test.csv")
    print(f"wrote {cfg.n_train} train days and {cfg.n_test} test days to {out_dir}")
    return 0


def cmd_train(cfg: ExperimentConfig, out: str | None) -> int:
    train_days = data_io.load_csv(cfg.data_dir / "train.csv")
    _check_horizon(train_days, cfg)
    out_dir = Path(out) if out else cfg.artifacts_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    q, policy, report = trainer.train(
        train_days,
        cfg.grid,
        cfg.battery,
        cfg.tariff,
        cfg.cost_model(),
        variant=cfg.variant,
        fallback=cfg.fallback,
        max_iters=cfg.max_iters,
        jobs=cfg.jobs,
    )
    fp = serialize.setup_fingerprint(cfg.grid, cfg.battery, cfg.tariff, cfg.cost_model(), cfg.variant)
    serialize.save_q(q, cfg.grid.horizon, fp, out_dir / "qtable.bin")
    serialize.save_policy(policy, cfg.grid.horizon, fp, out_dir / "policy.bin")
    _write_train_report(report, out_dir / "train_report.csv")

    print(f"trained {cfg.problem}/{cfg.variant} on {len(train_days)} days "
          f"in {report.iterations} iterations ({report.wall_clock_s:.1f} s)")
    for i, r in enumerate(report.avg_returns):
        print(f"  iteration {i}: average training return {r:.6f}")
    print(f"artifacts in {out_dir}")
    return 0


def _write_train_report(report: trainer.TrainReport, path) -> None:
    # wall clock deliberately omitted: artifacts must be byte-reproducible
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "avg_training_return", "policy_cells_changed"])
        for i, r in enumerate(report.avg_returns):
            changed = report.policy_changes[i - 1] if 0 < i <= len(report.policy_changes) else ""
            w.writerow([i, repr(float(r)), changed])


def cmd_evaluate(cfg: ExperimentConfig, agent: str, out: str | None) -> int:
    test_days = data_io.load_csv(cfg.data_dir / "test.csv")
    _check_horizon(test_days, cfg)
    out_dir = Path(out) if out else cfg.reports_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    q = None
    if agent == "trained":
        fp = serialize.setup_fingerprint(
            cfg.grid, cfg.battery, cfg.tariff, cfg.cost_model(), cfg.variant
        )
        q, _ = serialize.load_q(cfg.artifacts_dir / "qtable.bin", expected_fingerprint=fp)
        q.bind_grid(cfg.grid)

    report = experiment.evaluate(
        test_days,
        cfg.grid,
        cfg.battery,
        cfg.tariff,
        cfg.problem,
        agent=agent,
        q=q,
        variant=cfg.variant,
        fallback=cfg.fallback,
        recouple=cfg.recouple,
        bp_len=cfg.bp_len,
    )
    experiment.write_per_day_csv(report, out_dir / "per_day.csv")
    experiment.write_summary_csv(report, out_dir / "summary.csv")
    experiment.write_histogram_csv(report, out_dir / "histogram.csv")
    if cfg.problem == "mdm":
        experiment.write_billing_periods_csv(report, out_dir / "billing_periods.csv")

    avg = report.averages()
    print(f"evaluated {agent} agent on {avg['n_days']} days: "
          f"average reduction {avg['avg_reduction_total']:.4f} $/day "
          f"(energy {avg['avg_reduction_energy']:.4f}, demand {avg['avg_reduction_demand']:.4f})")
    print(f"reports in {out_dir}")
    return 0


def cmd_report(eval_dirs: list[str], out: str) -> int:
    if not eval_dirs:
        raise DataError("no evaluation directories given")
    summaries = []
    histograms = []
    for d in eval_dirs:
        d = Path(d)
        if not (d / "summary.csv").exists():
            raise DataError(f"{d} has no summary.csv")
        summary = experiment.read_summary_csv(d / "summary.csv")
        summaries.append(summary)
        histograms.append((summary["label"], experiment.read_histogram_csv(d / "histogram.csv")))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    experiment.write_comparison_csv(summaries, out_dir / "comparison.csv")
    experiment.write_histogram_comparison_csv(histograms, out_dir / "histogram_comparison.csv")
    print(f"compared {len(summaries)} runs into {out_dir}")
    return 0


def _check_horizon(days, cfg: ExperimentConfig) -> None:
    for day in days:
        if len(day) != cfg.grid.horizon:
            raise DataError(
                f"day {day.day_id} has {len(day)} steps, config horizon is {cfg.grid.horizon}"
            )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.eval_dirs, args.out)
        cfg = _config_from_args(args)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        return cmd_evaluate(cfg, args.agent, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, serialize.ArtifactError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
