"""Task-plan and evaluation-plan literals: domain types, parsing, validation, serialization.

Plans travel as a closed literal subset of Python source: one assignment of a
list of tuples (or one indexed assignment for a retune patch).  No expressions,
no identifiers beyond the two assignment targets and True/False.  Everything a
planner emits is either parsed into the types below or rejected with a
positioned diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

ACTION_NAMES = ("drop", "place", "pick", "approach")
CHECK_NAMES = (
    "collision_free",
    "timeout",
    "check_motion_health",
    "can_grasp",
    "holding",
    "at_location",
    "can_reach",
)
MANDATORY_CHECKS = ("collision_free", "timeout", "check_motion_health")
GRASP_VALUES = ("top", "side")

# Positional argument layout per action: s = string label, n = number, g = grasp.
_ACTION_ARG_KINDS = {
    "drop": "snn",
    "place": "snnn",
    "pick": "snng",
    "approach": "snng",
}
# Argument layout per check: s = string label, g = grasp.
CHECK_ARG_KINDS = {
    "can_grasp": "sg",
    "holding": "",
    "at_location": "ss",
    "collision_free": "",
    "timeout": "",
    "check_motion_health": "",
    "can_reach": "sg",
}

SPEED_RANGE = (0.0, 1.0)
ORIENTATION_RANGE = (0.0, 1.0)
CLEARANCE_HARD_RANGE = (0.0, 0.1)
# Soft band matching what the planner prompt documents as typical; values
# outside it are legal but worth a warning.
CLEARANCE_TYPICAL_RANGE = (0.005, 0.05)


class PlanSyntaxError(ValueError):
    """Text violates the plan-literal grammar."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class PlanFormatError(ValueError):
    """Grammar-valid text that does not form the requested plan structure."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        if line:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class IndexMismatchError(ValueError):
    """Retune patch whose bracket index disagrees with its tuple index."""


@dataclass(frozen=True)
class Action:
    index: int
    name: str
    args: tuple

    @property
    def target(self) -> str:
        """Object or location label the action operates on."""
        return self.args[0]

    @property
    def speed(self) -> float:
        return self.args[2] if self.name == "place" else self.args[1]

    @property
    def obstacle_clearance(self) -> float:
        return self.args[3] if self.name == "place" else self.args[2]

    @property
    def orientation(self) -> float | None:
        return self.args[1] if self.name == "place" else None

    @property
    def grasp(self) -> str | None:
        return self.args[3] if self.name in ("pick", "approach") else None


@dataclass(frozen=True)
class TaskPlan:
    actions: tuple[Action, ...]

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Action]:
        return iter(self.actions)

    def __getitem__(self, index: int) -> Action:
        return self.actions[index]


@dataclass(frozen=True)
class EvalEntry:
    action_index: int
    checks: tuple[tuple[str, tuple], ...]  # insertion-ordered (name, args) pairs
    expected: tuple

    def check_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.checks)


@dataclass(frozen=True)
class EvaluationPlan:
    entries: tuple[EvalEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[EvalEntry]:
        return iter(self.entries)

    def entry_for(self, action_index: int) -> EvalEntry | None:
        for entry in self.entries:
            if entry.action_index == action_index:
                return entry
        return None


@dataclass(frozen=True)
class RetunePatch:
    action_index: int
    replacement: Action


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    action_index: int | None
    message: str

    def render(self) -> str:
        where = f" action {self.action_index}" if self.action_index is not None else ""
        return f"{self.severity}[{self.code}]{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    diagnostics: tuple[Diagnostic, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(d.severity == "error" for d in self.diagnostics)

    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity == "error")

    def warnings(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity == "warning")

    def render(self) -> str:
        return "\n".join(d.render() for d in self.diagnostics)


# --------------------------------------------------------------------------
# Lexer
# --------------------------------------------------------------------------

_PUNCT = {"[": "LBRACKET", "]": "RBRACKET", "(": "LPAREN", ")": "RPAREN",
          "{": "LBRACE", "}": "RBRACE", ",": "COMMA", ":": "COLON", "=": "EQUALS"}


@dataclass(frozen=True)
class _Token:
    kind: str  # punctuation kind, INT, FLOAT, STRING, NAME, EOF
    value: object
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch in _PUNCT:
            tokens.append(_Token(_PUNCT[ch], ch, start_line, start_col))
            i += 1
            col += 1
            continue
        if ch in "'\"":
            quote = ch
            i += 1
            col += 1
            chars: list[str] = []
            while True:
                if i >= n:
                    raise PlanSyntaxError("unterminated string", start_line, start_col)
                c = text[i]
                if c == "\n":
                    raise PlanSyntaxError("newline inside string", line, col)
                if c == "\\":
                    if i + 1 >= n or text[i + 1] not in "'\"\\":
                        raise PlanSyntaxError("unsupported escape sequence", line, col)
                    chars.append(text[i + 1])
                    i += 2
                    col += 2
                    continue
                if c == quote:
                    i += 1
                    col += 1
                    break
                chars.append(c)
                i += 1
                col += 1
            tokens.append(_Token("STRING", "".join(chars), start_line, start_col))
            continue
        if ch.isdigit() or ch in "+-." and _starts_number(text, i):
            j = i
            if text[j] in "+-":
                j += 1
            seen_dot = seen_exp = False
            while j < n:
                c = text[j]
                if c.isdigit():
                    j += 1
                elif c == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    j += 1
                elif c in "eE" and not seen_exp and j + 1 < n and (text[j + 1].isdigit() or text[j + 1] in "+-"):
                    seen_exp = True
                    j += 1
                    if text[j] in "+-":
                        j += 1
                else:
                    break
            lexeme = text[i:j]
            try:
                value = float(lexeme) if (seen_dot or seen_exp) else int(lexeme)
            except ValueError:
                raise PlanSyntaxError(f"malformed number {lexeme!r}", start_line, start_col) from None
            tokens.append(_Token("FLOAT" if (seen_dot or seen_exp) else "INT", value, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("NAME", text[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        raise PlanSyntaxError(f"unexpected character {ch!r}", start_line, start_col)
    tokens.append(_Token("EOF", None, line, col))
    return tokens


def _starts_number(text: str, i: int) -> bool:
    ch = text[i]
    if ch.isdigit():
        return True
    if ch in "+-":
        return i + 1 < len(text) and (text[i + 1].isdigit() or text[i + 1] == ".")
    if ch == ".":
        return i + 1 < len(text) and text[i + 1].isdigit()
    return False


# --------------------------------------------------------------------------
# Recursive-descent parser over the token stream
# --------------------------------------------------------------------------

class _EmptyTuple:
    """Marker distinguishing `()` from a one-element tuple during parsing."""


@dataclass
class _Parser:
    tokens: list[_Token]
    pos: int = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.next()
        if tok.kind != kind:
            raise PlanSyntaxError(f"expected {what}", tok.line, tok.column)
        return tok

    def parse_assignment(self) -> tuple[str, int | None, object, _Token]:
        """Returns (target, bracket_index or None, parsed value, target token)."""
        tok = self.expect("NAME", "assignment target")
        if tok.value not in ("task_plan", "evaluation_plan"):
            raise PlanSyntaxError(f"unknown assignment target {tok.value!r}", tok.line, tok.column)
        bracket_index: int | None = None
        if self.peek().kind == "LBRACKET":
            if tok.value != "task_plan":
                raise PlanSyntaxError("indexed assignment is only valid for task_plan", tok.line, tok.column)
            self.next()
            idx_tok = self.expect("INT", "integer index")
            bracket_index = int(idx_tok.value)
            self.expect("RBRACKET", "']'")
            self.expect("EQUALS", "'='")
            value = self.parse_tuple()
        else:
            self.expect("EQUALS", "'='")
            value = self.parse_list()
        end = self.peek()
        if end.kind != "EOF":
            raise PlanSyntaxError("trailing content after assignment", end.line, end.column)
        return tok.value, bracket_index, value, tok

    def parse_list(self) -> list:
        self.expect("LBRACKET", "'['")
        items: list = []
        if self.peek().kind == "RBRACKET":
            self.next()
            return items
        while True:
            tok = self.peek()
            if tok.kind != "LPAREN":
                raise PlanSyntaxError("list items must be tuples", tok.line, tok.column)
            items.append(self.parse_tuple())
            tok = self.next()
            if tok.kind == "COMMA":
                if self.peek().kind == "RBRACKET":
                    self.next()
                    return items
                continue
            if tok.kind == "RBRACKET":
                return items
            raise PlanSyntaxError("expected ',' or ']'", tok.line, tok.column)

    def parse_tuple(self) -> tuple:
        self.expect("LPAREN", "'('")
        if self.peek().kind == "RPAREN":
            self.next()
            return ()
        values: list = []
        while True:
            values.append(self.parse_value())
            tok = self.next()
            if tok.kind == "COMMA":
                if self.peek().kind == "RPAREN":
                    self.next()
                    return tuple(values)
                continue
            if tok.kind == "RPAREN":
                return tuple(values)
            raise PlanSyntaxError("expected ',' or ')'", tok.line, tok.column)

    def parse_dict(self) -> dict:
        self.expect("LBRACE", "'{'")
        result: dict = {}
        if self.peek().kind == "RBRACE":
            self.next()
            return result
        while True:
            key_tok = self.expect("STRING", "string key")
            self.expect("COLON", "':'")
            value_tok = self.peek()
            if value_tok.kind != "LPAREN":
                raise PlanSyntaxError("dict values must be tuples", value_tok.line, value_tok.column)
            if key_tok.value in result:
                raise PlanSyntaxError(f"duplicate key {key_tok.value!r}", key_tok.line, key_tok.column)
            result[key_tok.value] = self.parse_tuple()
            tok = self.next()
            if tok.kind == "COMMA":
                if self.peek().kind == "RBRACE":
                    self.next()
                    return result
                continue
            if tok.kind == "RBRACE":
                return result
            raise PlanSyntaxError("expected ',' or '}'", tok.line, tok.column)

    def parse_value(self) -> object:
        tok = self.peek()
        if tok.kind in ("INT", "FLOAT", "STRING"):
            self.next()
            return tok.value
        if tok.kind == "NAME":
            if tok.value == "True":
                self.next()
                return True
            if tok.value == "False":
                self.next()
                return False
            raise PlanSyntaxError(f"unexpected identifier {tok.value!r}", tok.line, tok.column)
        if tok.kind == "LPAREN":
            return self.parse_tuple()
        if tok.kind == "LBRACE":
            return self.parse_dict()
        raise PlanSyntaxError("expected a value", tok.line, tok.column)


def _parse_text(text: str) -> tuple[str, int | None, object, _Token]:
    return _Parser(_tokenize(text)).parse_assignment()


# --------------------------------------------------------------------------
# Structural conversion
# --------------------------------------------------------------------------

def _number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _action_from_tuple(raw: object, where: str) -> Action:
    if not isinstance(raw, tuple) or len(raw) != 3:
        raise PlanFormatError(f"{where}: each action must be (index, name, (args))")
    index, name, args = raw
    if not isinstance(index, int) or isinstance(index, bool) or index < 0:
        raise PlanFormatError(f"{where}: action index must be a non-negative integer")
    if not isinstance(name, str) or name not in ACTION_NAMES:
        raise PlanFormatError(f"{where}: unknown action name {name!r}")
    if not isinstance(args, tuple):
        raise PlanFormatError(f"{where}: action arguments must be a tuple")
    kinds = _ACTION_ARG_KINDS[name]
    if len(args) != len(kinds):
        raise PlanFormatError(
            f"{where}: {name} takes {len(kinds)} arguments, got {len(args)}"
        )
    for position, (kind, arg) in enumerate(zip(kinds, args)):
        if kind == "s" and not isinstance(arg, str):
            raise PlanFormatError(f"{where}: {name} argument {position} must be a string label")
        if kind == "n" and not _number(arg):
            raise PlanFormatError(f"{where}: {name} argument {position} must be a number")
        if kind == "g":
            if not isinstance(arg, str) or arg not in GRASP_VALUES:
                raise PlanFormatError(
                    f"{where}: {name} grasp must be one of {GRASP_VALUES}, got {arg!r}"
                )
    return Action(index=index, name=name, args=args)


def parse_task_plan(text: str) -> TaskPlan:
    """Parse a `task_plan = [...]` literal into a TaskPlan.

    The plan is returned exactly as written (indices are not renumbered and
    parameter ranges are not enforced here; see validate_plans).
    """
    target, bracket, value, tok = _parse_text(text)
    if target != "task_plan" or bracket is not None:
        raise PlanFormatError("expected a `task_plan = [...]` assignment", tok.line, tok.column)
    assert isinstance(value, list)
    if not value:
        raise PlanFormatError("task plan must contain at least one action")
    actions = tuple(
        _action_from_tuple(item, f"action {pos}") for pos, item in enumerate(value)
    )
    return TaskPlan(actions=actions)


def _entry_from_tuple(raw: object, where: str) -> EvalEntry:
    if not isinstance(raw, tuple) or len(raw) != 3:
        raise PlanFormatError(f"{where}: each entry must be (index, checks dict, expected tuple)")
    index, checks, expected = raw
    if not isinstance(index, int) or isinstance(index, bool):
        raise PlanFormatError(f"{where}: entry index must be an integer")
    if not isinstance(checks, dict):
        raise PlanFormatError(f"{where}: checks must be a dict of check name to argument tuple")
    if not isinstance(expected, tuple):
        raise PlanFormatError(f"{where}: expected outputs must be a tuple")
    pairs: list[tuple[str, tuple]] = []
    for name, args in checks.items():
        if name not in CHECK_NAMES:
            raise PlanFormatError(f"{where}: unknown check name {name!r}")
        pairs.append((name, args))
    return EvalEntry(action_index=index, checks=tuple(pairs), expected=expected)


def parse_evaluation_plan(text: str) -> EvaluationPlan:
    """Parse an `evaluation_plan = [...]` literal, preserving check insertion order."""
    target, bracket, value, tok = _parse_text(text)
    if target != "evaluation_plan" or bracket is not None:
        raise PlanFormatError("expected an `evaluation_plan = [...]` assignment", tok.line, tok.column)
    assert isinstance(value, list)
    entries = tuple(
        _entry_from_tuple(item, f"entry {pos}") for pos, item in enumerate(value)
    )
    return EvaluationPlan(entries=entries)


def parse_retune_patch(text: str) -> RetunePatch:
    """Parse a `task_plan[k] = (k, 'name', (args))` in-place retune assignment."""
    target, bracket, value, tok = _parse_text(text)
    if target != "task_plan" or bracket is None:
        raise PlanFormatError("expected a `task_plan[<k>] = (...)` assignment", tok.line, tok.column)
    replacement = _action_from_tuple(value, "replacement")
    if replacement.index != bracket:
        raise IndexMismatchError(
            f"bracket index {bracket} does not match tuple index {replacement.index}"
        )
    return RetunePatch(action_index=bracket, replacement=replacement)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def _quote(value: str) -> str:
    return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _render_value(value: object) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, str):
        return _quote(value)
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, tuple):
        inner = ", ".join(_render_value(v) for v in value)
        if len(value) == 1:
            inner += ","
        return f"({inner})"
    if isinstance(value, dict):
        inner = ", ".join(f"{_quote(k)}: {_render_value(v)}" for k, v in value.items())
        return "{" + inner + "}"
    raise TypeError(f"cannot render {type(value).__name__}")


def serialize_action(action: Action) -> str:
    return f"({action.index}, {_quote(action.name)}, {_render_value(action.args)})"


def serialize_task_plan(plan: TaskPlan) -> str:
    """Render a plan literal that parses back to an equal plan.

    Numbers use their shortest exact decimal representation.
    """
    body = ",\n    ".join(serialize_action(a) for a in plan.actions)
    return f"task_plan = [\n    {body},\n]"


def serialize_evaluation_plan(plan: EvaluationPlan) -> str:
    lines = []
    for entry in plan.entries:
        checks = dict(entry.checks)
        lines.append(
            f"({entry.action_index}, {_render_value(checks)}, {_render_value(entry.expected)})"
        )
    body = ",\n    ".join(lines)
    return f"evaluation_plan = [\n    {body},\n]" if lines else "evaluation_plan = []"


def serialize_retune_patch(patch: RetunePatch) -> str:
    return f"task_plan[{patch.action_index}] = {serialize_action(patch.replacement)}"


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def validate_plans(
    task_plan: TaskPlan,
    evaluation_plan: EvaluationPlan,
    vocab: Sequence[str] | set[str],
    *,
    typical_clearance: tuple[float, float] = CLEARANCE_TYPICAL_RANGE,
) -> ValidationReport:
    """Cross-check a plan pair against the scene vocabulary and all structural rules.

    Pure: identical inputs produce identical reports.  Errors mark plans that
    must not execute; warnings flag shapes that historically precede failures
    (repeated identical actions, picks without a prior approach).
    """
    known = set(vocab)
    diags: list[Diagnostic] = []

    def err(code: str, index: int | None, message: str) -> None:
        diags.append(Diagnostic("error", code, index, message))

    def warn(code: str, index: int | None, message: str) -> None:
        diags.append(Diagnostic("warning", code, index, message))

    for position, action in enumerate(task_plan.actions):
        if action.index != position:
            err(
                "bad-index",
                action.index,
                f"action at position {position} has index {action.index}; indices must be 0,1,2,…",
            )
        if not isinstance(action.target, str) or action.target not in known:
            err("unknown-label", action.index, f"unknown object or location {action.target!r}")
        _check_ranges(action, err, warn, typical_clearance)
        if position > 0:
            prev = task_plan.actions[position - 1]
            if prev.name == action.name and prev.args == action.args:
                warn(
                    "repeated-action",
                    action.index,
                    f"action {action.index} repeats action {prev.index} with identical arguments",
                )
        if action.name == "pick":
            prev = task_plan.actions[position - 1] if position > 0 else None
            if prev is None or prev.name != "approach" or prev.target != action.target:
                warn(
                    "pick-without-approach",
                    action.index,
                    f"pick of {action.target!r} is not preceded by an approach of the same target",
                )

    seen_indices: dict[int, int] = {}
    for entry in evaluation_plan.entries:
        seen_indices[entry.action_index] = seen_indices.get(entry.action_index, 0) + 1
    for index, count in seen_indices.items():
        if count > 1:
            err(
                "duplicate-entry-index",
                index,
                f"{count} evaluation entries share action index {index}; correspondence is ambiguous",
            )

    task_indices = [a.index for a in task_plan.actions]
    entry_indices = [e.action_index for e in evaluation_plan.entries]
    for index in task_indices:
        if index not in seen_indices:
            err("missing-entry", index, f"no evaluation entry for action {index}")
    for index in seen_indices:
        if index not in task_indices:
            err("unknown-action-index", index, f"evaluation entry for nonexistent action {index}")
    if len(seen_indices) == len(entry_indices) and entry_indices != sorted(entry_indices):
        err("entry-order", None, "evaluation entries are not in action order")

    for entry in evaluation_plan.entries:
        _check_entry(entry, known, err)

    return ValidationReport(diagnostics=tuple(diags))


def _check_ranges(action: Action, err, warn, typical_clearance: tuple[float, float]) -> None:
    lo, hi = SPEED_RANGE
    if not lo <= action.speed <= hi:
        err("speed-range", action.index, f"speed {action.speed!r} outside [{lo}, {hi}]")
    if action.orientation is not None:
        lo, hi = ORIENTATION_RANGE
        if not lo <= action.orientation <= hi:
            err("orientation-range", action.index, f"orientation {action.orientation!r} outside [{lo}, {hi}]")
    clearance = action.obstacle_clearance
    lo, hi = CLEARANCE_HARD_RANGE
    if not lo <= clearance <= hi:
        err("clearance-range", action.index, f"obstacle_clearance {clearance!r} outside [{lo}, {hi}] meters")
    else:
        lo, hi = typical_clearance
        if not lo <= clearance <= hi:
            warn(
                "atypical-clearance",
                action.index,
                f"obstacle_clearance {clearance!r} outside the typical range [{lo}, {hi}] meters",
            )


def _check_entry(entry: EvalEntry, known: set[str], err) -> None:
    index = entry.action_index
    names = entry.check_names()
    for mandatory in MANDATORY_CHECKS:
        if mandatory not in names:
            err("missing-mandatory-check", index, f"entry {index} lacks mandatory check {mandatory!r}")
    if len(entry.expected) != len(entry.checks):
        err(
            "expected-arity",
            index,
            f"entry {index} has {len(entry.checks)} checks but {len(entry.expected)} expected outputs",
        )
    for position, (name, args) in enumerate(entry.checks):
        kinds = CHECK_ARG_KINDS[name]
        if not isinstance(args, tuple) or len(args) != len(kinds):
            err(
                "check-arity",
                index,
                f"{name} takes {len(kinds)} arguments, got {args!r}",
            )
            continue
        for kind, arg in zip(kinds, args):
            if kind == "s":
                if not isinstance(arg, str):
                    err("check-arg-type", index, f"{name} label argument must be a string, got {arg!r}")
                elif arg not in known:
                    err("unknown-label", index, f"{name} references unknown label {arg!r}")
            elif kind == "g" and (not isinstance(arg, str) or arg not in GRASP_VALUES):
                err("check-arg-type", index, f"{name} grasp must be one of {GRASP_VALUES}, got {arg!r}")
        if position < len(entry.expected):
            value = entry.expected[position]
            if name == "collision_free":
                if not isinstance(value, str):
                    err(
                        "expected-type",
                        index,
                        f"collision_free expects a string (empty for no collision), got {value!r}",
                    )
            elif not isinstance(value, bool):
                err("expected-type", index, f"{name} expects a boolean, got {value!r}")


def apply_retune(plan: TaskPlan, patch: RetunePatch) -> TaskPlan:
    """Return a new plan with the patched action swapped in.

    A retune may only change arguments: the action name at the patched index
    must stay the same, and the index must exist.
    """
    if not 0 <= patch.action_index < len(plan.actions):
        raise IndexMismatchError(
            f"patch index {patch.action_index} outside plan of length {len(plan.actions)}"
        )
    current = plan.actions[patch.action_index]
    if current.name != patch.replacement.name:
        raise ActionNameChangedError(
            f"retune may not change {current.name!r} into {patch.replacement.name!r}"
        )
    actions = list(plan.actions)
    actions[patch.action_index] = patch.replacement
    return TaskPlan(actions=tuple(actions))


class ActionNameChangedError(ValueError):
    """Retune patch attempted to substitute a different action type."""
