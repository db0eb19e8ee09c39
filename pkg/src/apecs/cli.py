"""Command-line entry points: gamma, train, eval, sweep.

``train`` writes one directory per plan (report JSON, loss curve CSV and
figure, checkpoint); ``eval`` replays checkpoints and raw operators on the
benchmark course and maintains the RMSE table; ``sweep`` retrains the
rescaled controller across Lipschitz bounds.  Figures are rendered to files
next to the delimited output.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .net_core import TrainingDivergedError
from .training import (
    GAMMA_MODES,
    MODEL_KINDS,
    Dataset,
    evaluate_closed_loop,
    generate_dataset,
    lipschitz_sweep,
    load_model_doc,
    model_to_doc,
    train,
)
from .weighting import gamma_conditions, init_lipschitz, optimal_gamma
from . import reporting

ALL_PLAN_IDS = [f"{k}-{g}" for k in MODEL_KINDS for g in GAMMA_MODES]


def _non_negative(text: str) -> float:
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"alpha must be >= 0, got {text}")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apecs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gamma = sub.add_parser("gamma", help="derived loss weighting for an opposition bound")
    p_gamma.add_argument("alpha", type=_non_negative, help="expert opposition bound (>= 0)")

    for name in ("train", "eval", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_train = next(a for a in sub.choices.values() if a.prog.endswith("train"))
    p_train.add_argument(
        "--plan",
        default="all",
        help=f"'all' or comma-separated plan ids from: {', '.join(ALL_PLAN_IDS)}",
    )
    p_eval = sub.choices["eval"]
    p_eval.add_argument("--checkpoint", default=None, help="evaluate one checkpoint JSON")
    p_eval.add_argument(
        "--all", action="store_true", help="evaluate raw operators plus every trained checkpoint"
    )
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig(**{**_cfg_kwargs(cfg), "seed": args.seed})
    if args.out is not None:
        cfg = ExperimentConfig(**{**_cfg_kwargs(cfg), "out_dir": args.out})
    return cfg


def _cfg_kwargs(cfg: ExperimentConfig) -> dict:
    import dataclasses

    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def _dataset(cfg: ExperimentConfig) -> Dataset:
    return generate_dataset(cfg.dataset.n_samples, cfg.seed, cfg.expert, cfg.vehicle, cfg.dt_s)


def _course_echo(cfg: ExperimentConfig) -> dict:
    course = cfg.build_course()
    return {
        "name": cfg.course.name if cfg.course.waypoints is None else "inline",
        "spacing_m": cfg.course.spacing_m,
        "n_waypoints": int(len(course.waypoints)),
        "length_m": course.length,
        "first_waypoint": [float(v) for v in course.waypoints[0]],
        "last_waypoint": [float(v) for v in course.waypoints[-1]],
    }


def cmd_gamma(args) -> int:
    gamma = optimal_gamma(args.alpha)
    ok = gamma_conditions(args.alpha, gamma)
    l_t = init_lipschitz(args.alpha, gamma)
    print(f"gamma_star    {gamma:.6f}")
    print(f"conditions_ok {'true' if ok else 'false'}")
    print(f"l_t_init      {l_t:.6f}")
    return 0


def _selected_plans(cfg: ExperimentConfig, selector: str):
    if selector == "all":
        return cfg.all_plans()
    plans = []
    for token in selector.split(","):
        token = token.strip()
        if token not in ALL_PLAN_IDS:
            raise ConfigError(f"unknown plan {token!r}; choose from {', '.join(ALL_PLAN_IDS)}")
        kind, gamma_mode = token.rsplit("-", 1)
        plans.append(cfg.plan(kind, gamma_mode))
    return plans


def _write_report(cfg: ExperimentConfig, report, out_dir: Path) -> None:
    doc = {
        "plan": asdict(report.plan),
        "gamma": report.gamma,
        "alpha": report.alpha,
        "l_t_init": report.l_t_init,
        "alpha_scale_init": report.alpha_scale_init,
        "final_empirical_lipschitz": report.final_empirical_lipschitz,
        "rmse_m": report.rmse_m,
        "eval_aborted": report.eval_aborted,
        "final_layer_norms": report.final_layer_norms,
        "loss": {
            "human": report.loss_human,
            "expert": report.loss_expert,
            "total": report.loss_total,
        },
        "course": _course_echo(cfg),
        "config": cfg.echo(),
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / "report.json").write_text(reporting.dumps_json(doc) + "\n")


def cmd_train(args) -> int:
    cfg = _load(args)
    plans = _selected_plans(cfg, args.plan)
    data = _dataset(cfg)
    ctx = cfg.eval_context()
    out_root = Path(cfg.out_dir) / "train"
    for plan in plans:
        model, report = train(plan, data, eval_ctx=ctx)
        plan_dir = out_root / plan.plan_id
        plan_dir.mkdir(parents=True, exist_ok=True)
        _write_report(cfg, report, plan_dir)
        (plan_dir / "loss_curve.csv").write_text(
            reporting.loss_csv(report.loss_human, report.loss_expert, report.loss_total)
        )
        (plan_dir / "checkpoint.json").write_text(
            reporting.dumps_json(model_to_doc(model, seed=plan.seed)) + "\n"
        )
        reporting.plot_loss_curves(
            report.loss_human,
            report.loss_expert,
            report.loss_total,
            f"{plan.plan_id} (gamma={report.gamma:.4f})",
            plan_dir / "loss_curve.png",
        )
        rm = "n/a" if report.rmse_m is None else f"{report.rmse_m:.3f} m"
        print(f"trained {plan.plan_id}: gamma={report.gamma:.6f} alpha={report.alpha:.6f} rmse={rm}")
    return 0


def _eval_one(cfg: ExperimentConfig, ctx, model, name: str, out_dir: Path, traces: dict) -> float:
    trace, score = evaluate_closed_loop(model, ctx)
    (out_dir / f"{name}_trace.csv").write_text(reporting.trace_csv(trace))
    traces[name] = trace
    flag = " (diverged)" if trace.aborted else ""
    print(f"eval {name}: rmse={score:.3f} m{flag}")
    return score


def cmd_eval(args) -> int:
    cfg = _load(args)
    ctx = cfg.eval_context()
    out_dir = Path(cfg.out_dir) / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    traces: dict = {}
    rows: list[tuple[str, float]] = []

    if args.all:
        rows.append(("expert", _eval_one(cfg, ctx, "expert", "expert", out_dir, traces)))
        rows.append(("novice", _eval_one(cfg, ctx, None, "novice", out_dir, traces)))
        train_root = Path(cfg.out_dir) / "train"
        checkpoints = sorted(train_root.glob("*/checkpoint.json"))
        if not checkpoints:
            print("warning: no checkpoints found under", train_root, file=sys.stderr)
        for ckpt in checkpoints:
            model = load_model_doc(_read_json(ckpt))
            name = ckpt.parent.name
            rows.append((name, _eval_one(cfg, ctx, model, name, out_dir, traces)))
        reporting.write_rmse_table(out_dir / "rmse_table.csv", rows)
    elif args.checkpoint:
        ckpt = Path(args.checkpoint)
        model = load_model_doc(_read_json(ckpt))
        name = ckpt.parent.name if ckpt.name == "checkpoint.json" else ckpt.stem
        score = _eval_one(cfg, ctx, model, name, out_dir, traces)
        reporting.append_rmse_row(out_dir / "rmse_table.csv", name, score)
    else:
        score = _eval_one(cfg, ctx, None, "novice", out_dir, traces)
        reporting.append_rmse_row(out_dir / "rmse_table.csv", "novice", score)

    reporting.plot_trajectory(ctx.course, traces, out_dir / "trajectory.png")
    return 0


def _read_json(path: Path) -> dict:
    import json

    with open(path) as fh:
        return json.load(fh)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    data = _dataset(cfg)
    ctx = cfg.eval_context()
    plan = cfg.plan("apecs", "gstar")
    rows = lipschitz_sweep(cfg.sweep.bounds, plan, data, ctx)
    out_dir = Path(cfg.out_dir) / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "lipschitz_sweep.csv").write_text(reporting.sweep_csv(rows))
    reporting.plot_sweep(rows, out_dir / "sweep.png")
    scored = [r for r in rows if r.get("rmse_m") is not None]
    if scored:
        best = min(scored, key=lambda r: r["rmse_m"])
        print(f"best bound={best['bound']:g} rmse={best['rmse_m']:.3f} m")
    else:
        print("all sweep runs diverged", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gamma":
            return cmd_gamma(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "sweep":
            return cmd_sweep(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except TrainingDivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
