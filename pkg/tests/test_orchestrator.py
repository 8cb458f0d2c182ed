from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from plantune.backends import InjectedCheck, InjectedResult, InjectedTrial, ScriptedPlanner
from plantune.executor import ExecutorConfig
from plantune.kinematics import load_arm_model
from plantune.orchestrator import (
    BackendError,
    NoSuccessfulRunError,
    OrchestratorConfig,
    ParameterHistory,
    RunResult,
    failure_reason,
    read_run_log,
    run_adaptation,
    run_many,
    select_best,
    trial_to_json,
    write_run_log,
)
from plantune.paths import bundled_arm_model, bundled_scene, bundled_script
from plantune.plans import Action
from plantune.scene import load_scene
from plantune.scoring import PlanQuality


@pytest.fixture(scope="module")
def arm():
    return load_arm_model(bundled_arm_model())


@pytest.fixture(scope="module")
def scene():
    return load_scene(bundled_scene("two_objects"))


class RecordingPlanner(ScriptedPlanner):
    """Scripted planner that also captures the prompts it was sent."""

    def __init__(self, directory):
        base = ScriptedPlanner.from_directory(directory)
        self._queues = base._queues
        self._injected = base._injected
        self.prompts: dict[str, list[str]] = {k: [] for k in ("retune", "replan", "fix_syntax")}

    def retune(self, prompt):
        self.prompts["retune"].append(prompt)
        return super().retune(prompt)

    def replan(self, prompt):
        self.prompts["replan"].append(prompt)
        return super().replan(prompt)

    def fix_syntax(self, prompt):
        self.prompts["fix_syntax"].append(prompt)
        return super().fix_syntax(prompt)


def feedback_block(prompt: str) -> str:
    start = prompt.index("details are:\n\n") + len("details are:\n\n")
    for marker in ("\n\nThe score indicates", "\n\nPerform replanning"):
        if marker in prompt:
            return prompt[start:prompt.index(marker)]
    raise AssertionError("no closing marker in prompt")


@pytest.fixture(scope="module")
def replay(arm, scene):
    backend = RecordingPlanner(bundled_script("table_clear_demo"))
    result = run_adaptation("clear the table", scene, arm, backend, OrchestratorConfig())
    return backend, result


class TestConversationReplay:
    def test_trial_sequence(self, replay):
        _, result = replay
        assert result.success
        assert result.trials_used == 7
        assert result.replans_used == 1
        kinds = [t.kind for t in result.trials]
        assert kinds == ["P0", "R1", "R2", "R3", "P1", "R1", "R2"]
        failures = [t.failure_index for t in result.trials]
        assert failures == [2, 2, 2, 2, 3, 3, None]

    def test_injected_scores_flow_through(self, replay):
        _, result = replay
        place_scores = [t.action_scores[-1].m_t for t in result.trials[:4]]
        assert place_scores == [
            0.015802350054063646,
            0.0308876651339363,
            0.04319835434592172,
            0.01331668352320572,
        ]

    def test_final_plan_carries_both_patches(self, replay):
        _, result = replay
        plan = result.task_plan
        assert len(plan) == 6
        assert plan[2] == Action(2, "drop", ("large red trash can", 0.5, 0.03))
        assert plan[3] == Action(3, "approach", ("half-eaten apple", 0.4, 0.05, "top"))

    def test_feedback_blocks_match_frozen_fixtures(self, replay, feedback_dir):
        backend, _ = replay
        for i, prompt in enumerate(backend.prompts["retune"], 1):
            expected = (feedback_dir / f"retune_{i}.txt").read_text(encoding="utf-8")
            assert feedback_block(prompt) + "\n" == expected, f"retune feedback {i} drifted"
        expected = (feedback_dir / "replan_1.txt").read_text(encoding="utf-8")
        assert feedback_block(backend.prompts["replan"][0]) + "\n" == expected

    def test_first_feedback_block_bytes(self, replay):
        backend, _ = replay
        assert feedback_block(backend.prompts["retune"][0]) == (
            "failure index: 2\n"
            "failed action: place\n"
            "current_arguments: ('large red trash can', 0.2, 0.5, 0.03)\n"
            "motion score: 0.015802350054063646\n"
            "failure reason: Action failed due to: collision_free() "
            "Collision encountered with glass with yellowish liquid |.\n"
            "Past failures of this action:\n"
            "FAILURE: place: large red trash can (0.2, 0.5, 0.03) | score = 0.015802350054063646"
        )

    def test_history_grows_per_trial(self, replay):
        _, result = replay
        assert len(result.history) == sum(len(t.action_scores) for t in result.trials)

    def test_determinism(self, arm, scene):
        def once():
            backend = ScriptedPlanner.from_directory(bundled_script("table_clear_demo"))
            return run_adaptation("clear the table", scene, arm, backend, OrchestratorConfig())

        a, b = once(), once()
        assert a.trials == b.trials
        assert a.quality == b.quality


def _forced_failure_backend(retunes_per_plan: int, replans: int, trials: int) -> ScriptedPlanner:
    plan_text = "```\ntask_plan = [(0, 'approach', ('half-eaten apple', 0.5, 0.01, 'side'))]\n```"
    eval_text = (
        "```\nevaluation_plan = [(0, {'collision_free': (), 'timeout': (),"
        " 'check_motion_health': ()}, ('', True, True))]\n```"
    )
    retune_replies = []
    for i in range(retunes_per_plan * (replans + 1)):
        speed = round(0.5 + 0.001 * (i + 1), 4)
        retune_replies.append(
            f"```\ntask_plan[0] = (0, 'approach', ('half-eaten apple', {speed}, 0.01, 'side'))\n```"
        )
    failing = InjectedTrial(
        results=(
            InjectedResult(
                action_index=0,
                score=0.01,
                ok=False,
                failed_checks=(
                    InjectedCheck("collision_free", (), "white table", ""),
                ),
            ),
        )
    )
    return ScriptedPlanner(
        {
            "task_plan": [plan_text],
            "evaluation_plan": [eval_text] * (replans + 1),
            "retune": retune_replies,
            "replan": [plan_text] * replans,
        },
        injected_trials=[failing] * trials,
    )


class TestBudgetPresets:
    def test_paper_iv_d_exactly_three_retunes_per_action(self, arm, scene):
        backend = _forced_failure_backend(retunes_per_plan=3, replans=2, trials=12)
        cfg = OrchestratorConfig(preset="paper-iv-d")
        result = run_adaptation("clear the table", scene, arm, backend, cfg)
        assert not result.success
        assert result.stop_reason == "budget-exhausted"
        # 1 initial + 3 retunes per plan, three plans (initial + 2 replans).
        assert result.trials_used == 12
        assert result.replans_used == 2
        kinds = [t.kind for t in result.trials]
        assert kinds == ["P0", "R1", "R2", "R3", "P1", "R1", "R2", "R3", "P2", "R1", "R2", "R3"]

    def test_paper_iv_f_eight_trial_cycles(self, arm, scene):
        backend = _forced_failure_backend(retunes_per_plan=7, replans=2, trials=24)
        cfg = OrchestratorConfig(preset="paper-iv-f")
        result = run_adaptation("clear the table", scene, arm, backend, cfg)
        assert not result.success
        # Cycles of 8 trials: 1 fresh execution + 7 retunes, replan starts the next cycle.
        assert result.trials_used == 24
        assert result.replans_used == 2
        kinds = [t.kind for t in result.trials]
        assert kinds[:8] == ["P0", "R1", "R2", "R3", "R4", "R5", "R6", "R7"]
        assert kinds[8] == "P1"
        assert kinds[16] == "P2"

    def test_trial_accounting_invariant(self, arm, scene):
        backend = RecordingPlanner(bundled_script("table_clear_demo"))
        result = run_adaptation("clear the table", scene, arm, backend, OrchestratorConfig())
        retunes = sum(1 for t in result.trials if t.kind.startswith("R"))
        plans = sum(1 for t in result.trials if t.kind.startswith("P"))
        assert result.trials_used == retunes + plans
        assert plans == 1 + result.replans_used


class TestReplyRepair:
    def test_unparseable_forever_raises_backend_error(self, arm, scene):
        backend = ScriptedPlanner(
            {
                "task_plan": ["no code here at all"],
                "fix_syntax": ["still prose only", "and again nothing"],
            }
        )
        with pytest.raises(BackendError):
            run_adaptation("clear the table", scene, arm, backend, OrchestratorConfig())

    def test_bad_reply_repaired_via_fix_syntax(self, arm, scene):
        good_plan = "```\ntask_plan = [(0, 'approach', ('half-eaten apple', 0.5, 0.01, 'side'))]\n```"
        eval_text = (
            "```\nevaluation_plan = [(0, {'collision_free': (), 'timeout': (),"
            " 'check_motion_health': ()}, ('', True, True))]\n```"
        )
        success = InjectedTrial(
            results=(InjectedResult(action_index=0, score=0.2, ok=True),)
        )
        backend = ScriptedPlanner(
            {
                "task_plan": ["I think the plan should be... (prose only)"],
                "fix_syntax": [good_plan],
                "evaluation_plan": [eval_text],
            },
            injected_trials=[success],
        )
        result = run_adaptation("clear the table", scene, arm, backend, OrchestratorConfig())
        assert result.success
        assert result.trials_used == 1

    def test_replan_length_constraint_reprompted(self, arm, scene):
        too_long = "```\ntask_plan = [" + ", ".join(
            f"({i}, 'approach', ('half-eaten apple', 0.5, 0.01, 'side'))" for i in range(12)
        ) + "]\n```"
        good = "```\ntask_plan = [(0, 'approach', ('half-eaten apple', 0.5, 0.01, 'side'))]\n```"
        eval_text = (
            "```\nevaluation_plan = [(0, {'collision_free': (), 'timeout': (),"
            " 'check_motion_health': ()}, ('', True, True))]\n```"
        )
        fail = InjectedTrial(
            results=(
                InjectedResult(0, 0.01, False, (InjectedCheck("timeout", (), False, True),)),
            )
        )
        success = InjectedTrial(results=(InjectedResult(0, 0.3, True),))
        backend = RecordingPlannerFromParts(
            {
                "task_plan": [good],
                "evaluation_plan": [eval_text, eval_text],
                "retune": [],
                "replan": [too_long],
                "fix_syntax": [good],
            },
            [fail, success],
        )
        cfg = OrchestratorConfig(max_retunes_per_action=1, max_replans=1)
        backend._queues["retune"] = [
            "```\ntask_plan[0] = (0, 'approach', ('half-eaten apple', 0.51, 0.01, 'side'))\n```"
        ]
        backend._injected = [fail, fail, success]
        result = run_adaptation("clear the table", scene, arm, backend, cfg)
        assert result.success
        assert backend.prompts["fix_syntax"], "oversized replan should have been re-prompted"

    def test_resume_prefix_in_replan_prompt(self, arm, scene):
        plan2 = (
            "```\ntask_plan = [(0, 'approach', ('half-eaten apple', 0.5, 0.01, 'side')),"
            " (1, 'pick', ('half-eaten apple', 0.5, 0.01, 'side'))]\n```"
        )
        eval2 = (
            "```\nevaluation_plan = ["
            "(0, {'collision_free': (), 'timeout': (), 'check_motion_health': ()}, ('', True, True)),"
            "(1, {'collision_free': (), 'timeout': (), 'check_motion_health': ()}, ('', True, True))]\n```"
        )
        fail_at_1 = InjectedTrial(
            results=(
                InjectedResult(0, 0.2, True),
                InjectedResult(1, 0.01, False, (InjectedCheck("timeout", (), False, True),)),
            )
        )
        success = InjectedTrial(
            results=(InjectedResult(0, 0.2, True), InjectedResult(1, 0.25, True))
        )
        backend = RecordingPlannerFromParts(
            {
                "task_plan": [plan2],
                "evaluation_plan": [eval2, eval2],
                "retune": [],
                "replan": [plan2],
                "fix_syntax": [],
            },
            [fail_at_1, success],
        )
        cfg = OrchestratorConfig(max_retunes_per_action=1, max_replans=1, resume_prefix=True)
        backend._queues["retune"] = [
            "```\ntask_plan[1] = (1, 'pick', ('half-eaten apple', 0.52, 0.01, 'side'))\n```"
        ]
        backend._injected = [fail_at_1, fail_at_1, success]
        result = run_adaptation("clear the table", scene, arm, backend, cfg)
        assert result.success
        replan_prompt = backend.prompts["replan"][0]
        assert "Already executed successfully" in replan_prompt
        assert "0: approach('half-eaten apple', 0.5, 0.01, 'side')" in replan_prompt


class RecordingPlannerFromParts(ScriptedPlanner):
    def __init__(self, replies, injected):
        super().__init__(replies, injected)
        self.prompts: dict[str, list[str]] = {k: [] for k in ("retune", "replan", "fix_syntax")}

    def retune(self, prompt):
        self.prompts["retune"].append(prompt)
        return super().retune(prompt)

    def replan(self, prompt):
        self.prompts["replan"].append(prompt)
        return super().replan(prompt)

    def fix_syntax(self, prompt):
        self.prompts["fix_syntax"].append(prompt)
        return super().fix_syntax(prompt)


def _result(run, success, q, trials) -> RunResult:
    quality = PlanQuality((q,), q, q) if success else None
    return RunResult(
        run=run,
        success=success,
        task_plan=None,
        evaluation_plan=None,
        quality=quality,
        trials_used=trials,
        replans_used=0,
        trials=(),
        history=ParameterHistory(),
        stop_reason="success" if success else "budget-exhausted",
    )


class TestSelectBest:
    def test_argmax_of_normalized_score(self):
        results = [_result(i, True, q, 3) for i, q in enumerate([0.1, 0.5, 0.3])]
        index, winner = select_best(results)
        assert index == 1
        assert winner.quality.normalized_cumulative == 0.5

    def test_only_successful_runs_count(self):
        results = [_result(0, False, 0.9, 3), _result(1, True, 0.2, 3)]
        assert select_best(results)[0] == 1

    def test_tie_breaks_on_fewer_trials_then_index(self):
        results = [_result(0, True, 0.5, 5), _result(1, True, 0.5, 3), _result(2, True, 0.5, 3)]
        assert select_best(results)[0] == 1

    def test_scaling_scores_keeps_winner(self):
        values = [0.12, 0.31, 0.07, 0.29]
        base = [_result(i, True, q, 3) for i, q in enumerate(values)]
        scaled = [_result(i, True, q * 7.5, 3) for i, q in enumerate(values)]
        assert select_best(base)[0] == select_best(scaled)[0]

    def test_no_successful_run(self):
        with pytest.raises(NoSuccessfulRunError):
            select_best([_result(0, False, 0.0, 3)])


class TestRunLog:
    def test_round_trip(self, arm, scene, tmp_path):
        backend = ScriptedPlanner.from_directory(bundled_script("table_clear_demo"))
        result = run_adaptation("clear the table", scene, arm, backend, OrchestratorConfig())
        path = tmp_path / "run_00.jsonl"
        write_run_log(path, result, meta={"scene": "two_objects"})
        header, trials = read_run_log(path)
        assert header["meta"]["scene"] == "two_objects"
        assert header["trials_used"] == 7
        assert len(trials) == 7
        assert trials[0]["kind"] == "P0"
        assert trials[0]["scores"][2]["m_t"] == 0.015802350054063646
        assert "plan_text" in trials[0]

    def test_truncated_log_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("")
        with pytest.raises(ValueError):
            read_run_log(path)


class TestFailureReason:
    def test_collision_segment(self):
        checks = [InjectedCheck("collision_free", (), "glass with yellowish liquid", "")]
        assert failure_reason(checks) == (
            "Action failed due to: collision_free() "
            "Collision encountered with glass with yellowish liquid |."
        )

    def test_boolean_segments_joined(self):
        checks = [
            InjectedCheck("at_location", ("half-eaten apple", "large red trash can"), False, True),
            InjectedCheck("collision_free", (), "glass with yellowish liquid", ""),
        ]
        assert failure_reason(checks) == (
            "Action failed due to: "
            "at_location(('half-eaten apple', 'large red trash can')) "
            "Observed = False Expected = True | "
            "collision_free() Collision encountered with glass with yellowish liquid |."
        )
