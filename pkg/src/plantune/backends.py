"""Planner backends: prompt rendering, reply extraction, scripted and live planners.

A backend turns rendered prompts into reply text.  The scripted planner replays
canned replies (optionally with injected per-trial outcomes) for offline,
reproducible runs; the stochastic planner synthesizes plans from a template
with seeded jitter; the chat-wire backend talks to any chat-completions
endpoint.
"""
from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .plans import (
    Action,
    EvaluationPlan,
    TaskPlan,
    serialize_action,
    serialize_evaluation_plan,
    serialize_task_plan,
)

PROMPT_KINDS = ("task_plan", "evaluation_plan", "retune", "replan", "fix_syntax")


class MissingFieldError(ValueError):
    """Prompt context lacks a field the template needs."""


class NoCodeFoundError(ValueError):
    """Reply contains neither a fenced code block nor a plan assignment."""


class ScriptError(RuntimeError):
    """Scripted reply queue exhausted or malformed."""


class TransportError(RuntimeError):
    """HTTP transport failed after retries."""


class RateLimitedError(TransportError):
    """Endpoint kept answering 429 after retries."""


class MalformedResponseError(RuntimeError):
    """Endpoint answered with a body that is not a chat completion."""


class ContextBudgetError(RuntimeError):
    """Session transcript exceeds the configured approximate token budget."""


# --------------------------------------------------------------------------
# Prompt templates
# --------------------------------------------------------------------------

ACTION_DOCS = """\
drop(location: str, speed: float, obstacle_clearance: float) -> None:  # Goes to 'location' and drops the grasped object over it.

approach(object_to_grasp: str, speed: float, obstacle_clearance: float, grasp: str) -> None:  # Moves the robot close to 'object_to_grasp' so that the object is within reach.

place(location: str, orientation: float, speed: float, obstacle_clearance: float) -> None:  # Positions the grasped object on/at/in 'location' and releases the grasp.

pick(object_to_grasp: str, speed: float, obstacle_clearance: float, grasp: str) -> None:  # Picks up 'object_to_grasp' if it is close enough.

The 'speed' argument takes a value in [0, 1] and sets how fast the robot moves: closer to 1 is faster but may produce jerky, less precise motion.

The 'orientation' argument of 'place' takes a value in [0, 1] and sets how strictly the robot must keep the held object's original orientation: closer to 1 holds it firmly but leaves less freedom to avoid obstacles.

The 'obstacle_clearance' argument sets, in meters, how close the robot may get to any object (including the one it is trying to grasp) before it starts avoiding it.  Small values let the robot get close enough to reach, grasp, and place objects but raise the chance of collision.  Typical values lie between 0.005 and 0.05; values outside that range are possible.

The 'grasp' argument takes one of the two values 'top' or 'side' and selects whether the robot approaches or grips the object from above or laterally.\
"""

CHECK_DOCS = """\
can_grasp(object_to_grasp: str, grasp: str) -> bool:  # True if the robot is close enough to securely grasp 'object_to_grasp' from the chosen side.

holding() -> bool:  # True if the robot is currently holding an object.

at_location(object: str, location: str) -> bool:  # True if 'object' is at 'location'.

collision_free() -> str:  # Label of the object the robot hit during the preceding action, or '' if the motion was clean.

timeout() -> bool:  # True if the preceding action finished in a timely fashion.

check_motion_health() -> bool:  # True if the preceding motion was safe for the robot's hardware.

can_reach(goal: str, grasp: str) -> bool:  # True if the robot can reach the 'goal' object or location from its current state using the chosen grasp side.  Objects outside the workspace always return False.

The grasp argument matches the one used by 'approach' and 'pick': one of 'top' or 'side'.\
"""


@dataclass(frozen=True)
class PromptContext:
    scene_description: str
    objects: tuple[str, ...]
    locations: tuple[str, ...]
    task: str
    action_docs: str = ACTION_DOCS
    check_docs: str = CHECK_DOCS

    def __post_init__(self) -> None:
        if not self.objects or not self.locations:
            raise MissingFieldError("prompt context needs non-empty object and location lists")


def _name_list(names: tuple[str, ...]) -> str:
    return "[" + ", ".join(f"'{n}'" for n in names) + "]"


def render_prompt(kind: str, ctx: PromptContext, feedback: str | None = None) -> str:
    """Deterministic prompt text for one request kind.

    Retune and replan prompts embed the feedback block verbatim, so distinct
    failures always yield distinct prompts.
    """
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind {kind!r}")
    if kind == "task_plan":
        if not ctx.scene_description or not ctx.task:
            raise MissingFieldError("task_plan prompt needs a scene description and a task")
        return (
            f"{ctx.scene_description}\n\n"
            f"The list of recognized objects is:\n\nobjects = {_name_list(ctx.objects)}\n\n"
            f"The list of recognized locations is:\n\nlocations = {_name_list(ctx.locations)}\n\n"
            "There is a robot, labeled 'robot', that can manipulate only ONE object at a time. "
            "The robot accepts commands in the form of 'action functions' written in Python. "
            "These action functions, importable from the 'action_functions' library, are:\n\n"
            f"{ctx.action_docs}\n\n"
            "These action functions are the only motions the robot knows. "
            f"The task for the robot is: \"{ctx.task}\". "
            "First explain how you will solve the task and why each step makes sense. "
            "Then, using the action functions, 'objects', and 'locations', define a task plan "
            "as a Python list of tuples named 'task_plan' for the robot to follow. "
            "Each element is a tuple of the form (action number, action function name string, (arguments)). "
            "Use object- and task-specific arguments for every action.\n\n"
            "The first index of the plan must be 0. Some locations may be out of the robot's reach, "
            "so you may only be able to use 'drop' to put an object there. Do not make assumptions. "
            "For the task plan, output a single code block containing one assignment statement that "
            "creates the full 'task_plan'. Include your reasoning for each action as a comment. "
            "Write the plan out in full, no matter how long it is."
        )
    if kind == "evaluation_plan":
        return (
            "The robot may fail to execute an action function or may collide with an object while "
            "executing it, so the completion of every action must be checked after it runs.\n\n"
            "For this we define 'checking functions' written in Python, importable from the "
            "'checking_functions' library:\n\n"
            f"{ctx.check_docs}\n\n"
            "Using the 'checking_functions', 'objects', and 'locations', define an evaluation plan "
            "named 'evaluation_plan' that verifies the successful execution of each action. "
            "For every action, verify without fail:\n"
            "- collision-free\n"
            "- timely motion\n"
            "- motion health\n\n"
            "Output the plan as a Python list of tuples, where each tuple has the form "
            "(action number int, dictionary with 'check_function' names as keys and a tuple of "
            "arguments as value, tuple of expected outputs). Do not assume any object or location "
            "beyond those listed. Each tuple is checked after the action with the matching number. "
            "Generate the entire plan. No reasoning, direct output."
        )
    if feedback is None:
        raise MissingFieldError(f"{kind} prompt needs a feedback block")
    if kind == "retune":
        index = _failure_index(feedback)
        return (
            "The robot failed during the task_plan's execution. The details are:\n\n"
            f"{feedback}\n\n"
            "The score indicates the suitability of an argument combination; higher is better. "
            "First explain how your changes will improve the chances of success. "
            f"Then alter the arguments of the failed action at index {index} in 'task_plan' to "
            "overcome the failure. Change only that action's arguments; keep the same action "
            "function. Reply with a single in-place assignment of the form "
            f"task_plan[{index}] = (...)."
        )
    if kind == "replan":
        return (
            "The robot failed during the task_plan's execution. The details are:\n\n"
            f"{feedback}\n\n"
            "Perform replanning by choosing alternative action functions or changing the order of "
            "object interactions. Output the code as before: a single statement assigning the full "
            "task plan to the variable 'task_plan'. Take into account any argument changes requested "
            "earlier in this conversation. Keep the new plan within plus or minus 5 actions of the "
            "original task plan."
        )
    # fix_syntax
    return (
        "The previous reply could not be used. The validator reported:\n\n"
        f"{feedback}\n\n"
        "Re-emit the corrected code as a single code block containing exactly one assignment "
        "statement, following the format instructions given earlier. No other code or prose."
    )


def _failure_index(feedback: str) -> str:
    match = re.search(r"failure index: (\d+)", feedback)
    return match.group(1) if match else "?"


# --------------------------------------------------------------------------
# Reply extraction
# --------------------------------------------------------------------------

_FENCE = re.compile(r"```(?:[a-zA-Z0-9_+-]*\n)?(.*?)```", re.DOTALL)
_ASSIGN_START = re.compile(r"^\s*(task_plan|evaluation_plan)\s*(\[\s*\d+\s*\])?\s*=", re.MULTILINE)


def extract_code_block(reply: str) -> str:
    """Contents of the first fenced block, else the largest plan-assignment region."""
    match = _FENCE.search(reply)
    if match:
        return match.group(1).strip()
    candidates = []
    for start in _ASSIGN_START.finditer(reply):
        region = _scan_assignment(reply, start.start())
        if region:
            candidates.append(region)
    if not candidates:
        raise NoCodeFoundError("reply carries no code block and no plan assignment")
    return max(candidates, key=len).strip()


def _scan_assignment(text: str, start: int) -> str | None:
    """Slice one assignment statement: balance the bracketed payload after '='."""
    eq = text.find("=", start)
    if eq == -1:
        return None
    depth = 0
    seen_open = False
    i = eq + 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "'\"":
            quote = ch
            i += 1
            while i < n and text[i] != quote:
                i += 2 if text[i] == "\\" else 1
            i += 1
            continue
        if ch in "([{":
            depth += 1
            seen_open = True
        elif ch in ")]}":
            depth -= 1
            if depth <= 0 and seen_open:
                return text[start:i + 1]
        elif not seen_open and not ch.isspace():
            return None  # prose after '=', not a literal
        i += 1
    return None


# --------------------------------------------------------------------------
# Backend interface and scripted implementation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InjectedCheck:
    name: str
    args: tuple
    observed: bool | str
    expected: bool | str


@dataclass(frozen=True)
class InjectedResult:
    action_index: int
    score: float
    ok: bool
    failed_checks: tuple[InjectedCheck, ...] = ()


@dataclass(frozen=True)
class InjectedTrial:
    """Simulation stand-in for one trial: per-action scores plus the failure, if any."""

    results: tuple[InjectedResult, ...]

    @property
    def failure(self) -> InjectedResult | None:
        for result in self.results:
            if not result.ok:
                return result
        return None


class PlannerBackend:
    """Interface all planners implement; one instance serves one adaptation run."""

    def generate_task_plan(self, prompt: str) -> str:
        raise NotImplementedError

    def generate_evaluation_plan(self, prompt: str) -> str:
        raise NotImplementedError

    def retune(self, prompt: str) -> str:
        raise NotImplementedError

    def replan(self, prompt: str) -> str:
        raise NotImplementedError

    def fix_syntax(self, prompt: str) -> str:
        raise NotImplementedError

    def trial_override(self, trial_index: int) -> InjectedTrial | None:
        """Injected outcome for a trial (1-based), or None to simulate for real."""
        return None


class ScriptedPlanner(PlannerBackend):
    """Replays canned reply text from per-kind queues; exhaustion is an error."""

    def __init__(
        self,
        replies: dict[str, list[str]],
        injected_trials: list[InjectedTrial] | None = None,
    ):
        self._queues = {kind: list(replies.get(kind, [])) for kind in PROMPT_KINDS}
        self._injected = list(injected_trials or [])

    @classmethod
    def from_directory(cls, directory: str | Path) -> "ScriptedPlanner":
        directory = Path(directory)
        manifest = _load_manifest(directory)
        replies: dict[str, list[str]] = {}
        for kind, files in manifest.get("replies", {}).items():
            if kind not in PROMPT_KINDS:
                raise ScriptError(f"manifest reply kind {kind!r} unknown")
            replies[kind] = [
                (directory / name).read_text(encoding="utf-8") for name in files
            ]
        injected = [_parse_injected(t) for t in manifest.get("injected_trials", [])]
        return cls(replies, injected)

    def _pop(self, kind: str) -> str:
        queue = self._queues[kind]
        if not queue:
            raise ScriptError(f"scripted reply queue for {kind!r} is exhausted")
        return queue.pop(0)

    def generate_task_plan(self, prompt: str) -> str:
        return self._pop("task_plan")

    def generate_evaluation_plan(self, prompt: str) -> str:
        return self._pop("evaluation_plan")

    def retune(self, prompt: str) -> str:
        return self._pop("retune")

    def replan(self, prompt: str) -> str:
        return self._pop("replan")

    def fix_syntax(self, prompt: str) -> str:
        return self._pop("fix_syntax")

    def trial_override(self, trial_index: int) -> InjectedTrial | None:
        if 1 <= trial_index <= len(self._injected):
            return self._injected[trial_index - 1]
        return None


def _load_manifest(directory: Path) -> dict:
    path = directory / "manifest.json"
    if not path.exists():
        raise ScriptError(f"no manifest.json in {directory}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScriptError(f"{path}: {exc}") from exc


def _parse_injected(raw: dict) -> InjectedTrial:
    results = []
    for item in raw.get("results", []):
        checks = tuple(
            InjectedCheck(
                name=c["name"],
                args=tuple(c.get("args", [])),
                observed=c["observed"],
                expected=c["expected"],
            )
            for c in item.get("failed_checks", [])
        )
        results.append(
            InjectedResult(
                action_index=int(item["action_index"]),
                score=float(item["score"]),
                ok=bool(item["ok"]),
                failed_checks=checks,
            )
        )
    return InjectedTrial(results=tuple(results))


class StochasticScriptedPlanner(PlannerBackend):
    """Synthesizes plausible plans from a template with seeded parameter jitter.

    Used for multi-run experiments: each run gets its own seed, so plans differ
    across runs while the whole experiment stays reproducible.
    """

    def __init__(self, template: dict, rng: np.random.Generator):
        self._targets = [(t["label"], t.get("grasp", "top")) for t in template["targets"]]
        self._destination = template["destination"]
        self._speed_range = tuple(template.get("speed", [0.3, 0.7]))
        self._clearance_range = tuple(template.get("clearance", [0.008, 0.02]))
        self._grasp_flip = float(template.get("grasp_flip_chance", 0.0))
        self._rng = rng
        self._last_plan: TaskPlan | None = None

    def _jitter(self, low: float, high: float) -> float:
        return round(float(low + self._rng.random() * (high - low)), 4)

    def _build_plan(self) -> TaskPlan:
        actions = []
        index = 0
        for label, grasp in self._targets:
            if self._grasp_flip and self._rng.random() < self._grasp_flip:
                grasp = "side" if grasp == "top" else "top"
            speed = self._jitter(*self._speed_range)
            clearance = self._jitter(*self._clearance_range)
            actions.append(Action(index, "approach", (label, speed, clearance, grasp)))
            actions.append(Action(index + 1, "pick", (label, speed, clearance, grasp)))
            actions.append(Action(index + 2, "drop", (self._destination, speed, clearance)))
            index += 3
        return TaskPlan(tuple(actions))

    def generate_task_plan(self, prompt: str) -> str:
        self._last_plan = self._build_plan()
        return "Plan created from the clearing template.\n\n```\n" + serialize_task_plan(self._last_plan) + "\n```\n"

    def replan(self, prompt: str) -> str:
        return self.generate_task_plan(prompt)

    def generate_evaluation_plan(self, prompt: str) -> str:
        assert self._last_plan is not None, "evaluation plan requested before a task plan"
        entries = []
        for action in self._last_plan.actions:
            if action.name == "approach":
                checks = {
                    "can_grasp": (action.target, action.grasp),
                    "collision_free": (),
                    "timeout": (),
                    "check_motion_health": (),
                }
                expected = (True, "", True, True)
            elif action.name == "pick":
                checks = {
                    "holding": (),
                    "collision_free": (),
                    "timeout": (),
                    "check_motion_health": (),
                }
                expected = (True, "", True, True)
            else:
                checks = {
                    "at_location": (_held_target(self._last_plan, action.index), action.target),
                    "collision_free": (),
                    "timeout": (),
                    "check_motion_health": (),
                }
                expected = (True, "", True, True)
            entries.append((action.index, checks, expected))
        plan = EvaluationPlan(entries=tuple(_entry(e) for e in entries))
        return "```\n" + serialize_evaluation_plan(plan) + "\n```\n"

    def retune(self, prompt: str) -> str:
        match = re.search(r"failure index: (\d+)", prompt)
        if match is None or self._last_plan is None:
            raise ScriptError("retune prompt carries no failure index")
        index = int(match.group(1))
        action = self._last_plan.actions[index]
        args = list(action.args)
        if action.name == "place":
            args[2] = self._jitter(*self._speed_range)
            args[3] = self._jitter(*self._clearance_range)
        else:
            args[1] = self._jitter(*self._speed_range)
            args[2] = self._jitter(*self._clearance_range)
        if action.grasp is not None and self._rng.random() < max(self._grasp_flip, 0.5):
            args[3] = "side" if args[3] == "top" else "top"
        patched = Action(index, action.name, tuple(args))
        actions = list(self._last_plan.actions)
        actions[index] = patched
        self._last_plan = TaskPlan(tuple(actions))
        return (
            "Adjusting the failed action's parameters.\n\n"
            f"```\ntask_plan[{index}] = {serialize_action(patched)}\n```\n"
        )

    def fix_syntax(self, prompt: str) -> str:
        assert self._last_plan is not None
        return "```\n" + serialize_task_plan(self._last_plan) + "\n```\n"


def _entry(raw: tuple):
    from .plans import EvalEntry

    index, checks, expected = raw
    return EvalEntry(action_index=index, checks=tuple(checks.items()), expected=expected)


def _held_target(plan: TaskPlan, index: int) -> str:
    for action in reversed(plan.actions[:index]):
        if action.name == "pick":
            return action.target
    return plan.actions[0].target


def load_backend_from_directory(directory: str | Path, rng: np.random.Generator) -> PlannerBackend:
    """Build the backend a scripted directory describes (canned or stochastic)."""
    directory = Path(directory)
    manifest = _load_manifest(directory)
    if manifest.get("mode") == "stochastic":
        return StochasticScriptedPlanner(manifest["template"], rng)
    return ScriptedPlanner.from_directory(directory)


# --------------------------------------------------------------------------
# Chat-wire backend
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ChatWireConfig:
    base_url: str
    model: str
    temperature: float = 0.2
    token_env: str = "PLANTUNE_API_TOKEN"
    timeout_s: float = 60.0
    max_reprompts: int = 2
    max_context_tokens: int = 100_000
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "ChatWireConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)


_RETRY_ATTEMPTS = 3


def chat_complete(cfg: ChatWireConfig, transcript: list[tuple[str, str]]) -> str:
    """POST the transcript to the chat endpoint and return the first choice's text.

    Retries transport errors, 5xx, and 429 up to three attempts with
    exponential backoff; anything else malformed raises immediately.
    """
    approx_tokens = sum(len(content) for _, content in transcript) / 4
    if approx_tokens > cfg.max_context_tokens:
        raise ContextBudgetError(
            f"transcript at ~{int(approx_tokens)} tokens exceeds budget {cfg.max_context_tokens}"
        )
    payload = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{"role": role, "content": content} for role, content in transcript],
    }
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"

    last_error: Exception | None = None
    rate_limited = False
    for attempt in range(_RETRY_ATTEMPTS):
        try:
            response = requests.post(cfg.base_url, json=payload, headers=headers, timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            last_error = exc
            time.sleep(cfg.backoff_s * 2**attempt)
            continue
        if response.status_code == 429:
            rate_limited = True
            last_error = RuntimeError("429 Too Many Requests")
            time.sleep(cfg.backoff_s * 2**attempt)
            continue
        if response.status_code >= 500:
            last_error = RuntimeError(f"HTTP {response.status_code}")
            time.sleep(cfg.backoff_s * 2**attempt)
            continue
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unusable completion body: {exc}") from exc
    if rate_limited:
        raise RateLimitedError(f"gave up after {_RETRY_ATTEMPTS} attempts: {last_error}")
    raise TransportError(f"gave up after {_RETRY_ATTEMPTS} attempts: {last_error}")


class ChatWireBackend(PlannerBackend):
    """Live planner over a chat-completions endpoint, one transcript per run."""

    def __init__(self, cfg: ChatWireConfig):
        self.cfg = cfg
        self.transcript: list[tuple[str, str]] = []

    def _ask(self, prompt: str) -> str:
        self.transcript.append(("user", prompt))
        reply = chat_complete(self.cfg, self.transcript)
        self.transcript.append(("assistant", reply))
        return reply

    def generate_task_plan(self, prompt: str) -> str:
        return self._ask(prompt)

    def generate_evaluation_plan(self, prompt: str) -> str:
        return self._ask(prompt)

    def retune(self, prompt: str) -> str:
        return self._ask(prompt)

    def replan(self, prompt: str) -> str:
        return self._ask(prompt)

    def fix_syntax(self, prompt: str) -> str:
        return self._ask(prompt)
