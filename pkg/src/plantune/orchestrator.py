"""The adaptation loop: plan, validate, simulate, retune, replan, select the best run.

Each run asks its backend for a task plan and an evaluation plan, validates
them (re-prompting on diagnostics), simulates trial by trial, and feeds
failures back as retune prompts until the per-action budget runs out, then
replans from the accumulated history.  Across runs, the best successful plan
wins by normalized cumulative motion score.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .backends import (
    InjectedTrial,
    NoCodeFoundError,
    PlannerBackend,
    PromptContext,
    extract_code_block,
    render_prompt,
)
from .executor import ExecutorConfig, run_plan
from .kinematics import ArmModel
from .plans import (
    Action,
    ActionNameChangedError,
    EvaluationPlan,
    IndexMismatchError,
    PlanFormatError,
    PlanSyntaxError,
    TaskPlan,
    apply_retune,
    parse_evaluation_plan,
    parse_retune_patch,
    parse_task_plan,
    serialize_evaluation_plan,
    serialize_task_plan,
    validate_plans,
)
from .scene import Scene, initial_state
from .scoring import PlanQuality, plan_quality

PRESETS = ("paper-iv-d", "paper-iv-f")
REPLAN_LENGTH_SLACK = 5  # new plans must stay within ±5 actions of the original


class BackendError(RuntimeError):
    """Backend kept producing unusable replies past the re-prompt budget."""


class NoSuccessfulRunError(RuntimeError):
    """select_best called with no successful run."""


@dataclass(frozen=True)
class OrchestratorConfig:
    preset: str = "paper-iv-d"
    max_retunes_per_action: int = 3  # paper-iv-d: retunes allowed per action per plan
    trials_per_cycle: int = 8  # paper-iv-f: 1 initial trial + 7 retunes, then replan
    max_replans: int = 2
    num_runs: int = 14
    rng_seed: int = 0
    max_fix_attempts: int = 2
    resume_prefix: bool = False  # feed the executed successful prefix into replan prompts

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        for name in ("max_retunes_per_action", "trials_per_cycle", "num_runs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_replans < 0 or self.max_fix_attempts < 0:
            raise ValueError("budgets must be non-negative")


@dataclass(frozen=True)
class HistoryRecord:
    action_name: str
    target: str
    args: tuple  # arguments excluding the leading target label
    score: float
    outcome: str  # SUCCESS | FAILURE

    def render(self) -> str:
        return (
            f"{self.outcome}: {self.action_name}: {self.target} "
            f"{_render_args(self.args)} | score = {self.score!r}"
        )


class ParameterHistory:
    """Append-only per-run log of attempted parameter combinations and their scores."""

    def __init__(self) -> None:
        self.records: list[HistoryRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, action: Action, score: float, outcome: str) -> None:
        self.records.append(
            HistoryRecord(
                action_name=action.name,
                target=action.target,
                args=tuple(action.args[1:]),
                score=score,
                outcome=outcome,
            )
        )

    def lines(self, outcome: str, action_name: str | None = None) -> list[str]:
        """Rendered lines, grouped by (action, target) in first-appearance order."""
        picked = [
            r
            for r in self.records
            if r.outcome == outcome and (action_name is None or r.action_name == action_name)
        ]
        groups: list[tuple[str, str]] = []
        for record in picked:
            key = (record.action_name, record.target)
            if key not in groups:
                groups.append(key)
        ordered = []
        for key in groups:
            ordered.extend(r for r in picked if (r.action_name, r.target) == key)
        return [r.render() for r in ordered]


@dataclass(frozen=True)
class ActionScore:
    action_index: int
    m_i: float | None
    m_e: float | None
    m_t: float


@dataclass(frozen=True)
class TrialRecord:
    """One simulated (or injected) execution of the current plan pair."""

    trial: int
    kind: str  # P0 for a fresh plan, R1.. for its retunes, P1.. after replans
    plan_text: str
    eval_text: str
    action_scores: tuple[ActionScore, ...]
    failure_index: int | None
    failed_action: Action | None
    reason: str | None
    injected: bool

    @property
    def success(self) -> bool:
        return self.failure_index is None

    @property
    def q_norm(self) -> float:
        if not self.action_scores:
            return 0.0
        return sum(s.m_t for s in self.action_scores) / len(self.action_scores)


@dataclass(frozen=True)
class RunResult:
    run: int
    success: bool
    task_plan: TaskPlan | None
    evaluation_plan: EvaluationPlan | None
    quality: PlanQuality | None
    trials_used: int
    replans_used: int
    trials: tuple[TrialRecord, ...]
    history: ParameterHistory
    stop_reason: str  # success | budget-exhausted


# --------------------------------------------------------------------------
# Feedback rendering
# --------------------------------------------------------------------------

def _render_value(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, str):
        return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, tuple):
        inner = ", ".join(_render_value(v) for v in value)
        if len(value) == 1:
            inner += ","
        return f"({inner})"
    raise TypeError(type(value).__name__)


def _render_args(args: tuple) -> str:
    return "(" + ", ".join(_render_value(v) for v in args) + ")"


def failure_reason(failed_checks) -> str:
    """Assemble the `|`-separated reason string from failed check results."""
    segments = []
    for check in failed_checks:
        if check.name == "collision_free":
            segments.append(f"collision_free() Collision encountered with {check.observed}")
        else:
            rendered = _render_value(tuple(check.args)) if check.args else ""
            segments.append(
                f"{check.name}({rendered}) Observed = {_plain(check.observed)} "
                f"Expected = {_plain(check.expected)}"
            )
    return "Action failed due to: " + " | ".join(segments) + " |."


def _plain(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, str):
        return value if value else "''"
    return repr(value)


def render_feedback(record: TrialRecord, history: ParameterHistory, kind: str) -> str:
    """Newline-separated feedback block for a failed trial, byte-stable.

    Retune feedback filters the history to the failed action's name; replan
    feedback lists everything.  The current failure is already recorded when
    this renders; the current trial's successes are not.
    """
    if record.failure_index is None or record.failed_action is None:
        raise ValueError("feedback requires a failed trial")
    action = record.failed_action
    score = next(
        (s.m_t for s in record.action_scores if s.action_index == record.failure_index), 0.0
    )
    lines = [
        f"failure index: {record.failure_index}",
        f"failed action: {action.name}",
        f"current_arguments: {_render_args(action.args)}",
        f"motion score: {score!r}",
        f"failure reason: {record.reason}",
    ]
    if kind == "retune":
        failures = history.lines("FAILURE", action.name)
        successes = history.lines("SUCCESS", action.name)
        if failures:
            lines.append("Past failures of this action:")
            lines.extend(failures)
        if successes:
            lines.append("Past successes of this action:")
            lines.extend(successes)
    else:
        failures = history.lines("FAILURE")
        successes = history.lines("SUCCESS")
        if failures:
            lines.append("Past failures:")
            lines.extend(failures)
        if successes:
            lines.append("Past successes:")
            lines.extend(successes)
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Single adaptation run
# --------------------------------------------------------------------------

def context_for_scene(scene: Scene, task: str, description: str | None = None) -> PromptContext:
    if description is None:
        names = ", ".join(o.label for o in scene.objects)
        spots = ", ".join(l.label for l in scene.locations)
        description = (
            f"A desk-scale robot workspace. On and around the table: {names}. "
            f"Available placement targets: {spots}."
        )
    return PromptContext(
        scene_description=description,
        objects=tuple(scene.object_labels),
        locations=tuple(scene.location_labels),
        task=task,
    )


def run_adaptation(
    task: str,
    scene: Scene,
    arm: ArmModel,
    backend: PlannerBackend,
    cfg: OrchestratorConfig = OrchestratorConfig(),
    exec_cfg: ExecutorConfig = ExecutorConfig(),
    run_index: int = 0,
    description: str | None = None,
) -> RunResult:
    """One planning-and-adaptation run; budget exhaustion is an unsuccessful result."""
    ctx = context_for_scene(scene, task, description)
    vocab = scene.labels
    session = _Session(scene, arm, backend, cfg, exec_cfg, ctx, vocab)
    return session.run(run_index)


class _Session:
    def __init__(self, scene, arm, backend, cfg, exec_cfg, ctx, vocab):
        self.scene = scene
        self.arm = arm
        self.backend = backend
        self.cfg = cfg
        self.exec_cfg = exec_cfg
        self.ctx = ctx
        self.vocab = vocab
        self.history = ParameterHistory()
        self.trials: list[TrialRecord] = []

    # -- reply acquisition with bounded fix-ups -----------------------------

    def _acquire(self, ask: Callable[[str], str], prompt: str, convert: Callable[[str], object]):
        text = ask(prompt)
        for attempt in range(self.cfg.max_fix_attempts + 1):
            try:
                code = extract_code_block(text)
                return convert(code)
            except (
                NoCodeFoundError,
                PlanSyntaxError,
                PlanFormatError,
                IndexMismatchError,
                ActionNameChangedError,
                _ValidationFailed,
            ) as exc:
                diagnostics = str(exc)
            if attempt == self.cfg.max_fix_attempts:
                raise BackendError(f"unusable reply after {attempt + 1} attempts: {diagnostics}")
            fix_prompt = render_prompt(
                "fix_syntax", self.ctx, feedback=f"{diagnostics}\n\nYour previous reply:\n{text}"
            )
            text = self.backend.fix_syntax(fix_prompt)
        raise AssertionError("unreachable")

    def _acquire_plan_pair(self) -> tuple[TaskPlan, EvaluationPlan]:
        task_plan = self._acquire(
            self.backend.generate_task_plan,
            render_prompt("task_plan", self.ctx),
            self._convert_task_plan,
        )
        evaluation = self._acquire(
            self.backend.generate_evaluation_plan,
            render_prompt("evaluation_plan", self.ctx),
            lambda code: self._convert_evaluation_plan(code, task_plan),
        )
        return task_plan, evaluation

    def _convert_task_plan(self, code: str, reference_len: int | None = None) -> TaskPlan:
        plan = parse_task_plan(code)
        if reference_len is not None and abs(len(plan) - reference_len) > REPLAN_LENGTH_SLACK:
            raise _ValidationFailed(
                f"replanned length {len(plan)} is outside ±{REPLAN_LENGTH_SLACK} "
                f"of the original {reference_len}"
            )
        report = validate_plans(plan, _mandatory_stub(plan), self.vocab)
        task_errors = [d for d in report.errors() if d.code not in _EVAL_CODES]
        if task_errors:
            raise _ValidationFailed("\n".join(d.render() for d in task_errors))
        return plan

    def _convert_evaluation_plan(self, code: str, task_plan: TaskPlan) -> EvaluationPlan:
        evaluation = parse_evaluation_plan(code)
        report = validate_plans(task_plan, evaluation, self.vocab)
        if not report.ok:
            raise _ValidationFailed("\n".join(d.render() for d in report.errors()))
        return evaluation

    # -- the trial loop ------------------------------------------------------

    def run(self, run_index: int) -> RunResult:
        cfg = self.cfg
        task_plan, evaluation = self._acquire_plan_pair()
        original_len = len(task_plan)
        trial = 0
        replans = 0
        retunes: dict[int, int] = {}
        trials_in_cycle = 0
        plan_number = 0
        retune_number = 0

        while True:
            trial += 1
            trials_in_cycle += 1
            kind = f"P{plan_number}" if retune_number == 0 else f"R{retune_number}"
            record = self._run_trial(trial, kind, task_plan, evaluation)
            self.trials.append(record)

            if record.success:
                self._record_history(record, task_plan)
                quality = plan_quality([s.m_t for s in record.action_scores])
                return RunResult(
                    run=run_index,
                    success=True,
                    task_plan=task_plan,
                    evaluation_plan=evaluation,
                    quality=quality,
                    trials_used=trial,
                    replans_used=replans,
                    trials=tuple(self.trials),
                    history=self.history,
                    stop_reason="success",
                )

            failed = record.failed_action
            score = next(
                (s.m_t for s in record.action_scores if s.action_index == record.failure_index),
                0.0,
            )
            self.history.add(failed, score, "FAILURE")

            if cfg.preset == "paper-iv-d":
                can_retune = retunes.get(record.failure_index, 0) < cfg.max_retunes_per_action
            else:
                can_retune = trials_in_cycle < cfg.trials_per_cycle

            if can_retune:
                feedback = render_feedback(record, self.history, "retune")
                self._record_history(record, task_plan, before_failure_only=True)
                prompt = render_prompt("retune", self.ctx, feedback)
                patch = self._acquire(
                    self.backend.retune,
                    prompt,
                    lambda code: self._convert_patch(code, task_plan),
                )
                task_plan = apply_retune(task_plan, patch)
                retunes[record.failure_index] = retunes.get(record.failure_index, 0) + 1
                retune_number += 1
                continue

            if replans >= cfg.max_replans:
                self._record_history(record, task_plan, before_failure_only=True)
                return RunResult(
                    run=run_index,
                    success=False,
                    task_plan=task_plan,
                    evaluation_plan=evaluation,
                    quality=None,
                    trials_used=trial,
                    replans_used=replans,
                    trials=tuple(self.trials),
                    history=self.history,
                    stop_reason="budget-exhausted",
                )

            # Replanning assesses the full history, so the current trial's
            # successes are recorded before the feedback renders (a retune's
            # are recorded after).
            self._record_history(record, task_plan, before_failure_only=True)
            feedback = render_feedback(record, self.history, "replan")
            if cfg.resume_prefix and record.failure_index:
                prefix = task_plan.actions[: record.failure_index]
                feedback += "\nAlready executed successfully (keep as the plan prefix):\n"
                feedback += "\n".join(
                    f"{a.index}: {a.name}{_render_args(a.args)}" for a in prefix
                )
            prompt = render_prompt("replan", self.ctx, feedback)
            task_plan = self._acquire(
                self.backend.replan,
                prompt,
                lambda code: self._convert_task_plan(code, reference_len=original_len),
            )
            evaluation = self._acquire(
                self.backend.generate_evaluation_plan,
                render_prompt("evaluation_plan", self.ctx),
                lambda code: self._convert_evaluation_plan(code, task_plan),
            )
            replans += 1
            plan_number += 1
            retune_number = 0
            retunes = {}
            trials_in_cycle = 0

    def _convert_patch(self, code: str, task_plan: TaskPlan):
        patch = parse_retune_patch(code)
        patched = apply_retune(task_plan, patch)  # raises on index/name violations
        report = validate_plans(patched, _mandatory_stub(patched), self.vocab)
        task_errors = [d for d in report.errors() if d.code not in _EVAL_CODES]
        if task_errors:
            raise _ValidationFailed("\n".join(d.render() for d in task_errors))
        return patch

    def _run_trial(self, trial, kind, task_plan, evaluation) -> TrialRecord:
        override = self.backend.trial_override(trial)
        plan_text = serialize_task_plan(task_plan)
        eval_text = serialize_evaluation_plan(evaluation)
        if override is not None:
            return _record_from_injection(trial, kind, plan_text, eval_text, task_plan, override)
        state = initial_state(self.scene, self.arm)
        report = run_plan(task_plan, evaluation, state, self.arm, self.exec_cfg)
        scores = tuple(
            ActionScore(
                action_index=o.action.index,
                m_i=o.motion_score.internal,
                m_e=o.motion_score.external,
                m_t=o.motion_score.total,
            )
            for o in report.outcomes
        )
        if report.first_failure is None:
            return TrialRecord(trial, kind, plan_text, eval_text, scores, None, None, None, False)
        failure = report.first_failure
        if failure.executor_error is not None:
            reason = failure.executor_error
        else:
            reason = failure_reason(failure.failed)
        return TrialRecord(
            trial,
            kind,
            plan_text,
            eval_text,
            scores,
            failure.action_index,
            task_plan.actions[failure.action_index],
            reason,
            False,
        )

    def _record_history(self, record: TrialRecord, task_plan: TaskPlan, before_failure_only=False):
        for score in record.action_scores:
            if before_failure_only and score.action_index == record.failure_index:
                continue
            self.history.add(task_plan.actions[score.action_index], score.m_t, "SUCCESS")


class _ValidationFailed(ValueError):
    pass


_EVAL_CODES = {
    "missing-mandatory-check",
    "expected-arity",
    "expected-type",
    "duplicate-entry-index",
    "missing-entry",
    "unknown-action-index",
    "entry-order",
    "check-arity",
    "check-arg-type",
}


def _mandatory_stub(plan: TaskPlan) -> EvaluationPlan:
    """Minimal well-formed evaluation plan used to validate a task plan alone."""
    from .plans import EvalEntry

    entries = tuple(
        EvalEntry(
            action_index=a.index,
            checks=(("collision_free", ()), ("timeout", ()), ("check_motion_health", ())),
            expected=("", True, True),
        )
        for a in plan.actions
    )
    return EvaluationPlan(entries=entries)


def _record_from_injection(
    trial, kind, plan_text, eval_text, task_plan: TaskPlan, injected: InjectedTrial
) -> TrialRecord:
    scores = tuple(
        ActionScore(action_index=r.action_index, m_i=None, m_e=None, m_t=r.score)
        for r in injected.results
    )
    failure = injected.failure
    if failure is None:
        return TrialRecord(trial, kind, plan_text, eval_text, scores, None, None, None, True)
    return TrialRecord(
        trial,
        kind,
        plan_text,
        eval_text,
        scores,
        failure.action_index,
        task_plan.actions[failure.action_index],
        failure_reason(failure.failed_checks),
        True,
    )


# --------------------------------------------------------------------------
# Multi-run driving and selection
# --------------------------------------------------------------------------

def run_many(
    task: str,
    scene: Scene,
    arm: ArmModel,
    backend_factory: Callable[[int], PlannerBackend],
    cfg: OrchestratorConfig = OrchestratorConfig(),
    exec_cfg: ExecutorConfig = ExecutorConfig(),
    parallel: int = 1,
    description: str | None = None,
) -> list[RunResult]:
    """Execute cfg.num_runs independent runs; results are ordered by run index."""

    def one(run_index: int) -> RunResult:
        backend = backend_factory(run_index)
        return run_adaptation(
            task, scene, arm, backend, cfg, exec_cfg, run_index=run_index, description=description
        )

    if parallel <= 1:
        return [one(i) for i in range(cfg.num_runs)]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, range(cfg.num_runs)))


def select_best(results: list[RunResult]) -> tuple[int, RunResult]:
    """Winner = successful run with the highest normalized cumulative score.

    Ties break to fewer trials used, then to the lower run index.
    """
    best: tuple[float, int, int] | None = None
    winner: RunResult | None = None
    for index, result in enumerate(results):
        if not result.success or result.quality is None:
            continue
        key = (-result.quality.normalized_cumulative, result.trials_used, index)
        if best is None or key < best:
            best = key
            winner = result
    if winner is None:
        raise NoSuccessfulRunError("no successful run to select from")
    return winner.run, winner


# --------------------------------------------------------------------------
# Run log (JSONL)
# --------------------------------------------------------------------------

def write_run_log(path: str | Path, result: RunResult, meta: dict | None = None) -> None:
    """One meta line plus one JSON object per trial."""
    with open(path, "w", encoding="utf-8") as handle:
        header = {"meta": dict(meta or {}), "run": result.run, "success": result.success,
                  "trials_used": result.trials_used, "stop_reason": result.stop_reason}
        handle.write(json.dumps(header) + "\n")
        for record in result.trials:
            handle.write(json.dumps(trial_to_json(result.run, record)) + "\n")


def trial_to_json(run: int, record: TrialRecord) -> dict:
    return {
        "run": run,
        "trial": record.trial,
        "kind": record.kind,
        "failure_index": record.failure_index,
        "reason": record.reason,
        "scores": [
            {"action_index": s.action_index, "m_i": s.m_i, "m_e": s.m_e, "m_t": s.m_t}
            for s in record.action_scores
        ],
        "plan_text": record.plan_text,
        "eval_text": record.eval_text,
        "injected": record.injected,
        "q_norm": record.q_norm,
    }


def read_run_log(path: str | Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty run log")
    header = json.loads(lines[0])
    if "meta" not in header:
        raise ValueError(f"{path}: first line is not a meta header")
    return header, [json.loads(line) for line in lines[1:]]
