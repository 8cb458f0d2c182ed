"""Command-line entry point: validate, simulate, adapt, select, replay, report.

All commands are batch-style and idempotent given identical inputs and seed.
Exit codes: 0 success, 1 domain failure (invalid plans, failed runs, replay
mismatch), 2 usage or I/O problems.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backends import ChatWireBackend, ChatWireConfig, load_backend_from_directory
from .config import ConfigError
from .executor import ExecutorConfig, dump_trajectory_csv, run_plan
from .kinematics import load_arm_model, load_arm_model_text
from .orchestrator import (
    NoSuccessfulRunError,
    OrchestratorConfig,
    RunResult,
    read_run_log,
    run_many,
    select_best,
    write_run_log,
)
from .paths import bundled_arm_model
from .plans import (
    PlanFormatError,
    PlanSyntaxError,
    parse_evaluation_plan,
    parse_task_plan,
    serialize_evaluation_plan,
    serialize_task_plan,
    validate_plans,
)
from .scene import initial_state, load_scene, load_scene_text
from .scoring import ScoreRow, write_score_rows

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_SCORE_TOLERANCE = 1e-12


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (OSError, ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plantune",
        description="Validate, simulate, and adaptively tune robot task plans.",
        epilog=(
            "Chat backends read their auth token from the environment variable named in "
            "the backend config (default PLANTUNE_API_TOKEN)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a task/evaluation plan pair against a scene")
    p.add_argument("plan", help="task plan literal file")
    p.add_argument("evaluation", help="evaluation plan literal file")
    p.add_argument("--scene", required=True, help="scene config file")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("simulate", help="execute a plan pair once and write outcome artifacts")
    p.add_argument("plan")
    p.add_argument("evaluation")
    p.add_argument("--scene", required=True)
    p.add_argument("--arm", default=None, help="arm model file (default: bundled 7-DoF model)")
    p.add_argument("--out", default=None, help="directory for score/trajectory CSVs")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("adapt", help="run the full plan-tune-replan pipeline")
    p.add_argument("--scene", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--backend", required=True, help="scripted:<dir> or chat:<config.json>")
    p.add_argument("--runs", type=int, default=14)
    p.add_argument("--max-retunes", type=int, default=None, help="retunes per action (paper-iv-d)")
    p.add_argument("--preset", choices=("paper-iv-d", "paper-iv-f"), default="paper-iv-d")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--arm", default=None)
    p.set_defaults(handler=cmd_adapt)

    p = sub.add_parser("select", help="pick the best run from an adapt output directory")
    p.add_argument("out_dir")
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("replay", help="re-simulate a run log and verify recorded scores")
    p.add_argument("run_log")
    p.set_defaults(handler=cmd_replay)

    p = sub.add_parser("report", help="render figures from an adapt output directory")
    p.add_argument("out_dir")
    p.add_argument("--out", default=None, help="figure directory (default: alongside the CSV)")
    p.set_defaults(handler=cmd_report)

    return parser


def _load_plan_pair(args):
    plan_text = Path(args.plan).read_text(encoding="utf-8")
    eval_text = Path(args.evaluation).read_text(encoding="utf-8")
    return parse_task_plan(plan_text), parse_evaluation_plan(eval_text)


def cmd_validate(args) -> int:
    scene = load_scene(args.scene)
    try:
        task_plan, evaluation = _load_plan_pair(args)
    except (PlanSyntaxError, PlanFormatError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = validate_plans(task_plan, evaluation, scene.labels)
    if report.diagnostics:
        print(report.render(), file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    arm = load_arm_model(args.arm or bundled_arm_model())
    try:
        task_plan, evaluation = _load_plan_pair(args)
    except (PlanSyntaxError, PlanFormatError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = validate_plans(task_plan, evaluation, scene.labels)
    if not report.ok:
        print(report.render(), file=sys.stderr)
        return EXIT_FAILURE
    state = initial_state(scene, arm)
    execution = run_plan(task_plan, evaluation, state, arm, ExecutorConfig())

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [
            ScoreRow(run=0, trial=1, kind="P0", action_index=o.action.index,
                     m_i=o.motion_score.internal, m_e=o.motion_score.external,
                     m_t=o.motion_score.total,
                     q_norm=sum(x.motion_score.total for x in execution.outcomes)
                     / len(execution.outcomes))
            for o in execution.outcomes
        ]
        write_score_rows(out / "scores.csv", rows)
        current = state
        for outcome in execution.outcomes:
            dump_trajectory_csv(out / f"traj_{outcome.action.index:03d}.csv", outcome, current, arm)
            current = outcome.end_state
        (out / "report.json").write_text(json.dumps(_execution_to_json(execution), indent=2))

    if execution.first_failure is None:
        print("plan executed cleanly")
        return EXIT_OK
    failure = execution.first_failure
    detail = failure.executor_error or "; ".join(
        f"{r.name} observed={r.observed!r} expected={r.expected!r}" for r in failure.failed
    )
    print(f"failure at action {failure.action_index}: {detail}", file=sys.stderr)
    return EXIT_FAILURE


def _execution_to_json(execution) -> dict:
    return {
        "succeeded": execution.succeeded,
        "first_failure": None
        if execution.first_failure is None
        else {
            "action_index": execution.first_failure.action_index,
            "executor_error": execution.first_failure.executor_error,
            "failed": [
                {"name": r.name, "observed": r.observed, "expected": r.expected}
                for r in execution.first_failure.failed
            ],
        },
        "outcomes": [
            {
                "action_index": o.action.index,
                "collision": o.collision,
                "timed_out": o.timed_out,
                "m_i": o.motion_score.internal,
                "m_e": o.motion_score.external,
                "m_t": o.motion_score.total,
            }
            for o in execution.outcomes
        ],
    }


def _backend_factory(spec: str, seed: int):
    if spec.startswith("scripted:"):
        directory = spec.split(":", 1)[1]

        def factory(run_index: int):
            rng = np.random.default_rng(seed * 100003 + run_index)
            return load_backend_from_directory(directory, rng)

        return factory
    if spec.startswith("chat:"):
        cfg = ChatWireConfig.from_file(spec.split(":", 1)[1])

        def factory(run_index: int):
            return ChatWireBackend(cfg)

        return factory
    raise ConfigError(f"backend spec must be scripted:<dir> or chat:<cfg>, got {spec!r}")


def cmd_adapt(args) -> int:
    if args.runs < 1:
        print("error: --runs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    scene_path = Path(args.scene)
    arm_path = Path(args.arm) if args.arm else bundled_arm_model()
    scene = load_scene(scene_path)
    arm = load_arm_model(arm_path)
    overrides = {"preset": args.preset, "num_runs": args.runs, "rng_seed": args.seed}
    if args.max_retunes is not None:
        overrides["max_retunes_per_action"] = args.max_retunes
    cfg = OrchestratorConfig(**overrides)
    exec_cfg = ExecutorConfig()
    factory = _backend_factory(args.backend, args.seed)

    results = run_many(
        args.task, scene, arm, factory, cfg, exec_cfg, parallel=max(1, args.parallel)
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "task": args.task,
        "backend": args.backend,
        "preset": args.preset,
        "seed": args.seed,
        "scene_text": scene_path.read_text(encoding="utf-8"),
        "arm_text": Path(arm_path).read_text(encoding="utf-8"),
        "exec_cfg": _exec_cfg_to_json(exec_cfg),
    }
    rows: list[ScoreRow] = []
    for result in results:
        write_run_log(out / f"run_{result.run:02d}.jsonl", result, meta={**meta, "run": result.run})
        for record in result.trials:
            for score in record.action_scores:
                rows.append(
                    ScoreRow(
                        run=result.run,
                        trial=record.trial,
                        kind=record.kind,
                        action_index=score.action_index,
                        m_i=score.m_i,
                        m_e=score.m_e,
                        m_t=score.m_t,
                        q_norm=record.q_norm,
                    )
                )
    write_score_rows(out / "scores.csv", rows)

    summary = {
        "runs": [
            {
                "run": r.run,
                "success": r.success,
                "trials_used": r.trials_used,
                "replans_used": r.replans_used,
                "normalized_score": r.quality.normalized_cumulative if r.quality else None,
                "stop_reason": r.stop_reason,
            }
            for r in results
        ]
    }
    try:
        winner_index, winner = select_best(results)
    except NoSuccessfulRunError:
        summary["winner"] = None
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        print("no run succeeded", file=sys.stderr)
        return EXIT_FAILURE
    summary["winner"] = {
        "run": winner_index,
        "normalized_score": winner.quality.normalized_cumulative,
        "trials_used": winner.trials_used,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    (out / "winner.txt").write_text(serialize_task_plan(winner.task_plan) + "\n")
    (out / "winner_eval.txt").write_text(serialize_evaluation_plan(winner.evaluation_plan) + "\n")
    print(
        f"winner: run {winner_index} "
        f"(normalized score {winner.quality.normalized_cumulative!r}, "
        f"{winner.trials_used} trials)"
    )
    return EXIT_OK


def _exec_cfg_to_json(cfg: ExecutorConfig) -> dict:
    return {
        "dt": cfg.dt,
        "timeout_limit": cfg.timeout_limit,
        "max_joint_speed": cfg.max_joint_speed,
        "max_tool_speed": cfg.max_tool_speed,
        "gain_max": cfg.gain_max,
        "goal_tol": cfg.goal_tol,
        "ik_pos_tol": cfg.ik_pos_tol,
        "ik_rot_tol": cfg.ik_rot_tol,
        "approach_standoff": cfg.approach_standoff,
        "drop_hover": cfg.drop_hover,
        "spill_model": cfg.spill_model,
    }


def cmd_select(args) -> int:
    out = Path(args.out_dir)
    logs = sorted(out.glob("run_*.jsonl"))
    if not logs:
        print(f"error: no run logs in {out}", file=sys.stderr)
        return EXIT_USAGE
    candidates = []
    for path in logs:
        header, trials = read_run_log(path)
        if not header.get("success") or not trials:
            continue
        final = trials[-1]
        candidates.append((header["run"], final["q_norm"], header["trials_used"], path.name))
    if not candidates:
        print("no successful run", file=sys.stderr)
        return EXIT_FAILURE
    candidates.sort(key=lambda c: (-c[1], c[2], c[0]))
    run, q_norm, trials_used, name = candidates[0]
    print(json.dumps({"run": run, "normalized_score": q_norm, "trials_used": trials_used, "log": name}))
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        header, trials = read_run_log(args.run_log)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    meta = header["meta"]
    for key in ("scene_text", "arm_text", "exec_cfg"):
        if key not in meta:
            print(f"error: run log meta lacks {key}", file=sys.stderr)
            return EXIT_USAGE
    scene = load_scene_text(meta["scene_text"], origin=args.run_log)
    arm = load_arm_model_text(meta["arm_text"], origin=args.run_log)
    exec_cfg = ExecutorConfig(**meta["exec_cfg"])

    for record in trials:
        if record.get("injected"):
            # Injected trials carry fixture scores; verify the plan still parses.
            parse_task_plan(record["plan_text"])
            continue
        task_plan = parse_task_plan(record["plan_text"])
        evaluation = parse_evaluation_plan(record["eval_text"])
        state = initial_state(scene, arm)
        execution = run_plan(task_plan, evaluation, state, arm, exec_cfg)
        recorded = {s["action_index"]: s["m_t"] for s in record["scores"]}
        fresh = {o.action.index: o.motion_score.total for o in execution.outcomes}
        if set(recorded) != set(fresh):
            print(
                f"trial {record['trial']}: executed actions differ "
                f"(recorded {sorted(recorded)}, replayed {sorted(fresh)})",
                file=sys.stderr,
            )
            return EXIT_FAILURE
        for index, value in recorded.items():
            if abs(fresh[index] - value) > _SCORE_TOLERANCE:
                print(
                    f"trial {record['trial']} action {index}: recorded {value!r} "
                    f"replayed {fresh[index]!r}",
                    file=sys.stderr,
                )
                return EXIT_FAILURE
        recorded_failure = record.get("failure_index")
        fresh_failure = None if execution.first_failure is None else execution.first_failure.action_index
        if recorded_failure != fresh_failure:
            print(
                f"trial {record['trial']}: failure index drifted "
                f"(recorded {recorded_failure}, replayed {fresh_failure})",
                file=sys.stderr,
            )
            return EXIT_FAILURE
    print(f"replay clean: {len(trials)} trials verified")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plots import render_report

    out_dir = Path(args.out_dir)
    csv_path = out_dir / "scores.csv" if out_dir.is_dir() else out_dir
    if not csv_path.exists():
        print(f"error: no scores.csv under {args.out_dir}", file=sys.stderr)
        return EXIT_USAGE
    target = Path(args.out) if args.out else csv_path.parent
    written = render_report(csv_path, target)
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
