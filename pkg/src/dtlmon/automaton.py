"""Compile propositional co-safe temporal skeletons into finite-word DFAs.

The construction decomposes the formula per input letter into disjunctive
"obligation sets": an obligation set holds the subformulas that must start
holding at the next position for the current choice to work out.  These
sets are the states of a tableau-style NFA; a run accepts when its final
obligation set is empty.  The NFA is determinized on the fly by subset
construction, with transitions computed on demand and cached, because the
alphabet 2^AP is exponential in the proposition count.  Accepting subsets
collapse to a canonical accept sink, so accepting states are absorbing.

Letters are bitmasks over proposition indices.  Words of length zero are
rejected for every formula: satisfaction needs a first position.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .errors import StateBlowup
from .logic import And, Eventually, Next, Or, Until

DEFAULT_STATE_CAP = 2**20


@dataclass(frozen=True)
class PropAtom:
    """Positive or negated proposition, identified by its bit index."""

    index: int
    negated: bool = False


PropFormula = Union[PropAtom, And, Or, Until, Next, Eventually]

_TRUE_OPTIONS = frozenset({frozenset()})
_FALSE_OPTIONS: frozenset = frozenset()

_EMPTY_OBLIGATION: frozenset = frozenset()


def _max_prop_index(phi: PropFormula) -> int:
    if isinstance(phi, PropAtom):
        return phi.index
    if isinstance(phi, (And, Or, Until)):
        return max(_max_prop_index(phi.left), _max_prop_index(phi.right))
    if isinstance(phi, (Next, Eventually)):
        return _max_prop_index(phi.child)
    raise TypeError(f"not a propositional formula: {phi!r}")


def _options(phi: PropFormula, letter: int, memo: dict) -> frozenset:
    """All ways to satisfy ``phi`` starting at a position labeled ``letter``.

    Each element is an obligation set for the following position.  An empty
    result means the letter refutes the formula outright.
    """
    key = (phi, letter)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if isinstance(phi, PropAtom):
        holds = bool((letter >> phi.index) & 1) != phi.negated
        out = _TRUE_OPTIONS if holds else _FALSE_OPTIONS
    elif isinstance(phi, And):
        left = _options(phi.left, letter, memo)
        right = _options(phi.right, letter, memo)
        out = frozenset(a | b for a in left for b in right)
    elif isinstance(phi, Or):
        out = _options(phi.left, letter, memo) | _options(phi.right, letter, memo)
    elif isinstance(phi, Next):
        out = frozenset({frozenset({phi.child})})
    elif isinstance(phi, Eventually):
        out = _options(phi.child, letter, memo) | frozenset({frozenset({phi})})
    elif isinstance(phi, Until):
        now = _options(phi.right, letter, memo)
        keep = frozenset(o | {phi} for o in _options(phi.left, letter, memo))
        out = now | keep
    else:
        raise TypeError(f"not a propositional formula: {phi!r}")
    memo[key] = out
    return out


class Dfa:
    """Deterministic, total automaton over letters in ``range(2**num_props)``.

    States are dense integers; 0 is initial.  ``transition`` computes and
    caches successors on demand under a lock, so concurrent acceptance
    queries are safe.  ``materialize`` forces every (state, letter) pair,
    which is only practical for small proposition counts.
    """

    def __init__(
        self,
        phi: PropFormula,
        num_props: int,
        max_states: int = DEFAULT_STATE_CAP,
        prop_names: Sequence[str] | None = None,
    ):
        if num_props < 0:
            raise ValueError("num_props must be nonnegative")
        if _max_prop_index(phi) >= num_props:
            raise ValueError("formula references a proposition outside num_props")
        self.num_props = num_props
        self.max_states = max_states
        self.prop_names = (
            tuple(prop_names) if prop_names is not None else tuple(f"p{i}" for i in range(num_props))
        )
        if len(self.prop_names) != num_props:
            raise ValueError("prop_names length must equal num_props")
        self._lock = threading.Lock()
        self._options_memo: dict = {}
        self._subset_ids: dict[frozenset, int] = {}
        self._subsets: list[frozenset] = []
        self._accepting: set[int] = set()
        self._delta: dict[tuple[int, int], int] = {}
        self.initial = self._register(frozenset({frozenset({phi})}))

    # -- state bookkeeping (callers hold the lock or run during __init__) --

    def _register(self, subset: frozenset) -> int:
        sid = self._subset_ids.get(subset)
        if sid is not None:
            return sid
        if len(self._subsets) >= self.max_states:
            raise StateBlowup(f"determinization exceeded {self.max_states} states")
        sid = len(self._subsets)
        self._subset_ids[subset] = sid
        self._subsets.append(subset)
        if _EMPTY_OBLIGATION in subset:
            self._accepting.add(sid)
        return sid

    def _successor_subset(self, subset: frozenset, letter: int) -> frozenset:
        succ: set = set()
        for obligations in subset:
            choices: Iterable = _TRUE_OPTIONS
            for phi in obligations:
                opts = _options(phi, letter, self._options_memo)
                if not opts:
                    choices = _FALSE_OPTIONS
                    break
                choices = frozenset(a | b for a in choices for b in opts)
            succ.update(choices)
        if _EMPTY_OBLIGATION in succ:
            # Once satisfied, always satisfied: collapse to the accept sink.
            return frozenset({_EMPTY_OBLIGATION})
        return frozenset(succ)

    # -- public interface --

    @property
    def num_states(self) -> int:
        """States discovered so far (all states, once materialized)."""
        return len(self._subsets)

    @property
    def accepting(self) -> frozenset[int]:
        return frozenset(self._accepting)

    def is_accepting(self, state: int) -> bool:
        return state in self._accepting

    def transition(self, state: int, letter: int) -> int:
        if not 0 <= letter < (1 << self.num_props):
            raise ValueError(f"letter {letter} outside the alphabet")
        if not 0 <= state < len(self._subsets):
            raise ValueError(f"unknown state {state}")
        key = (state, letter)
        hit = self._delta.get(key)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._delta.get(key)
            if hit is not None:
                return hit
            target = self._register(self._successor_subset(self._subsets[state], letter))
            self._delta[key] = target
            return target

    def materialize(self) -> None:
        """Explore every (state, letter) pair reachable from the initial state."""
        frontier = [self.initial]
        seen = {self.initial}
        while frontier:
            state = frontier.pop()
            for letter in range(1 << self.num_props):
                nxt = self.transition(state, letter)
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)


def formula_to_dfa(
    phi: PropFormula,
    num_props: int,
    max_states: int = DEFAULT_STATE_CAP,
    prop_names: Sequence[str] | None = None,
) -> Dfa:
    """Build a DFA accepting exactly the finite words (length >= 1 needed
    for acceptance) that satisfy the co-safe skeleton ``phi``."""
    return Dfa(phi, num_props, max_states=max_states, prop_names=prop_names)


def dfa_accepts(dfa: Dfa, word: Iterable[int]) -> bool:
    """Run the automaton on a letter sequence; accept on an accepting state."""
    state = dfa.initial
    for letter in word:
        state = dfa.transition(state, letter)
    return dfa.is_accepting(state)


def prop_eval(phi: PropFormula, word: Sequence[int], position: int = 0) -> bool:
    """Direct finite-word satisfaction over bitmask letters.

    This is the reference semantics the DFA construction is tested against;
    it deliberately shares no machinery with it.
    """
    if not 0 <= position < len(word):
        raise ValueError(f"position {position} outside the word")
    letter = word[position]
    if isinstance(phi, PropAtom):
        return bool((letter >> phi.index) & 1) != phi.negated
    if isinstance(phi, And):
        return prop_eval(phi.left, word, position) and prop_eval(phi.right, word, position)
    if isinstance(phi, Or):
        return prop_eval(phi.left, word, position) or prop_eval(phi.right, word, position)
    if isinstance(phi, Next):
        return position + 1 < len(word) and prop_eval(phi.child, word, position + 1)
    if isinstance(phi, Until):
        for j in range(position, len(word)):
            if prop_eval(phi.right, word, j):
                return True
            if not prop_eval(phi.left, word, j):
                return False
        return False
    if isinstance(phi, Eventually):
        return any(prop_eval(phi.child, word, j) for j in range(position, len(word)))
    raise TypeError(f"not a propositional formula: {phi!r}")


# -- exploration and export ------------------------------------------------------


def _canonical_order(dfa: Dfa) -> tuple[list[int], dict[int, int]]:
    """BFS order from the initial state with letters ascending, so exports do
    not depend on which transitions happened to be cached first."""
    dfa.materialize()
    order = [dfa.initial]
    renum = {dfa.initial: 0}
    i = 0
    while i < len(order):
        state = order[i]
        i += 1
        for letter in range(1 << dfa.num_props):
            nxt = dfa.transition(state, letter)
            if nxt not in renum:
                renum[nxt] = len(order)
                order.append(nxt)
    return order, renum


def _letter_text(dfa: Dfa, letter: int) -> str:
    names = [dfa.prop_names[i] for i in range(dfa.num_props) if (letter >> i) & 1]
    return "{" + ",".join(names) + "}"


def export_dot(dfa: Dfa) -> str:
    """GraphViz DOT text; accepting states are double circles.

    Materializes the full alphabet, so use only with small proposition
    counts.  Output is deterministic for identical inputs.
    """
    order, renum = _canonical_order(dfa)
    lines = ["digraph dfa {", "  rankdir=LR;", '  __start [shape=point,label=""];']
    for state in order:
        shape = "doublecircle" if dfa.is_accepting(state) else "circle"
        lines.append(f"  q{renum[state]} [shape={shape}];")
    lines.append(f"  __start -> q{renum[dfa.initial]};")
    for state in order:
        edges: dict[int, list[int]] = {}
        for letter in range(1 << dfa.num_props):
            edges.setdefault(dfa.transition(state, letter), []).append(letter)
        for target in sorted(edges, key=lambda t: renum[t]):
            label = ",".join(_letter_text(dfa, x) for x in edges[target])
            lines.append(f'  q{renum[state]} -> q{renum[target]} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_json_dict(dfa: Dfa) -> dict:
    """Materialized automaton as {states, initial, accepting, transitions}."""
    order, renum = _canonical_order(dfa)
    transitions = []
    for state in order:
        for letter in range(1 << dfa.num_props):
            transitions.append([renum[state], letter, renum[dfa.transition(state, letter)]])
    return {
        "states": len(order),
        "initial": 0,
        "accepting": sorted(renum[s] for s in order if dfa.is_accepting(s)),
        "propositions": list(dfa.prop_names),
        "transitions": transitions,
    }
