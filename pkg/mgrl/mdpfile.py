"""Read and write finite MDPs in the plain-text ``mgrl-mdp`` format.

Layout, whitespace separated, ``#`` starts a comment::

    mgrl-mdp 1
    states S
    actions A
    goals G
    discount 0.9
    freeze_action A-1     # optional
    action 0
    <S rows of S probabilities>
    ...
    goal_map
    <S goal indices>
    goal_dist
    <G probabilities>
    init_dist
    <G rows of S probabilities>
"""
from pathlib import Path

import numpy as np
from pydantic import ValidationError  # pylint: disable=no-name-in-module

from mgrl.core import PROB_TOL, FiniteMultiGoalMdp, MdpFormatError

MAGIC = "mgrl-mdp"
FORMAT_VERSION = 1


class _Lines:
    def __init__(self, text):
        self._items = []
        for number, raw in enumerate(text.splitlines(), start=1):
            content = raw.split("#", 1)[0].split()
            if content:
                self._items.append((number, content))
        self._pos = 0

    def next(self, what):
        if self._pos >= len(self._items):
            raise MdpFormatError(f"unexpected end of file, expected {what}")
        item = self._items[self._pos]
        self._pos += 1
        return item

    def peek_keyword(self):
        if self._pos >= len(self._items):
            return None
        return self._items[self._pos][1][0]

    def done(self):
        return self._pos >= len(self._items)


def _keyword(lines, name, n_values=1):
    number, tokens = lines.next(name)
    if tokens[0] != name or len(tokens) != 1 + n_values:
        raise MdpFormatError(f"expected '{name}'", number)
    return number, tokens[1:]


def _to_number(token, number, kind=float):
    try:
        return kind(token)
    except ValueError as err:
        raise MdpFormatError(f"invalid number '{token}'", number) from err


def _row(lines, size, what, kind=float):
    number, tokens = lines.next(what)
    if len(tokens) != size:
        raise MdpFormatError(f"expected {size} values for {what}", number)
    return number, np.array([_to_number(tok, number, kind) for tok in tokens])


def _probability_row(lines, size, what):
    number, row = _row(lines, size, what)
    if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_TOL:
        raise MdpFormatError(
            f"{what} must be a probability vector (sum {row.sum()!r})", number
        )
    return row


def parse_mdp(text: str) -> FiniteMultiGoalMdp:
    """Parse an MDP from its text representation."""
    lines = _Lines(text)
    number, tokens = lines.next("header")
    if tokens[0] != MAGIC or len(tokens) != 2:
        raise MdpFormatError(f"missing '{MAGIC}' header", number)
    if _to_number(tokens[1], number, int) != FORMAT_VERSION:
        raise MdpFormatError(f"unsupported format version {tokens[1]}", number)
    counts = {}
    for name in ("states", "actions", "goals"):
        number, (value,) = _keyword(lines, name)
        counts[name] = _to_number(value, number, int)
        if counts[name] < 1:
            raise MdpFormatError(f"'{name}' must be positive", number)
    number, (value,) = _keyword(lines, "discount")
    discount = _to_number(value, number)
    freeze_action = None
    if lines.peek_keyword() == "freeze_action":
        number, (value,) = _keyword(lines, "freeze_action")
        freeze_action = _to_number(value, number, int)
    n_s, n_a, n_g = counts["states"], counts["actions"], counts["goals"]
    transition = np.zeros((n_s, n_a, n_s))
    for action in range(n_a):
        number, (value,) = _keyword(lines, "action")
        if _to_number(value, number, int) != action:
            raise MdpFormatError(f"expected block 'action {action}'", number)
        for state in range(n_s):
            transition[state, action] = _probability_row(
                lines, n_s, f"transition row ({state}, {action})"
            )
    _keyword(lines, "goal_map", 0)
    _, goal_map = _row(lines, n_s, "goal_map", int)
    _keyword(lines, "goal_dist", 0)
    goal_dist = _probability_row(lines, n_g, "goal_dist")
    _keyword(lines, "init_dist", 0)
    init_dist = np.array(
        [_probability_row(lines, n_s, f"init_dist row {goal}") for goal in range(n_g)]
    )
    if not lines.done():
        number, _ = lines.next("end of file")
        raise MdpFormatError("trailing content", number)
    try:
        return FiniteMultiGoalMdp(
            n_states=n_s,
            n_actions=n_a,
            n_goals=n_g,
            transition=transition,
            goal_map=goal_map,
            goal_dist=goal_dist,
            init_dist=init_dist,
            discount=discount,
            freeze_action=freeze_action,
        )
    except ValidationError as err:
        raise MdpFormatError(str(err)) from err


def format_mdp(mdp: FiniteMultiGoalMdp) -> str:
    """Return the text representation of an MDP."""

    def floats(values):
        return " ".join(repr(float(value)) for value in values)

    out = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"states {mdp.n_states}",
        f"actions {mdp.n_actions}",
        f"goals {mdp.n_goals}",
        f"discount {float(mdp.discount)!r}",
    ]
    if mdp.freeze_action is not None:
        out.append(f"freeze_action {mdp.freeze_action}")
    for action in range(mdp.n_actions):
        out.append(f"action {action}")
        out.extend(
            floats(mdp.transition[state, action]) for state in range(mdp.n_states)
        )
    out.append("goal_map")
    out.append(" ".join(str(int(goal)) for goal in mdp.goal_map))
    out.append("goal_dist")
    out.append(floats(mdp.goal_dist))
    out.append("init_dist")
    out.extend(floats(row) for row in mdp.init_dist)
    return "\n".join(out) + "\n"


def load_mdp(path) -> FiniteMultiGoalMdp:
    """Load an MDP file."""
    return parse_mdp(Path(path).read_text(encoding="utf-8"))


def save_mdp(mdp: FiniteMultiGoalMdp, path):
    """Write an MDP file."""
    Path(path).write_text(format_mdp(mdp), encoding="utf-8")
