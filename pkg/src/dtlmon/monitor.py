"""Feasibility checking and exact acceptance probability for executions.

Monitoring has two stages.  Feasibility relaxes every hidden-state atom
``in(A)`` to the belief predicate "positive mass on A" and checks the
resulting belief-only formula against the observed belief trajectory; a
failure means no hidden path can satisfy the formula, so the probability
is zero.  Acceptance checking then computes the exact probability that a
hidden sample path drawn from the smoothed posterior (conditioned on the
whole action/observation record) satisfies the formula when paired with
the belief sequence.

The smoothed path measure factors as

    Pr[path | record] = smoothed_initial(s0) * prod_i path_transition(i, s_i, s_i+1)

with ``path_transition`` built from backward likelihoods, so the sum over
satisfying paths is a forward dynamic program over (hidden state, DFA
state) pairs rather than an enumeration of the path tree.  A brute-force
enumeration oracle is kept alongside as an independent cross-check.

Boundary rule: a belief predicate with value exactly zero does not hold,
so floating-point grazing of thresholds resolves deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .automaton import Dfa, PropAtom, dfa_accepts, formula_to_dfa
from .errors import AllZero, CapExceeded, InconsistentState, ModelError
from .logic import (
    And,
    Atom,
    BeliefAtom,
    BeliefExpr,
    Eventually,
    Formula,
    Neg,
    Next,
    Or,
    Prob,
    StateAtom,
    Until,
    belief_expr_text,
    eval_belief_expr,
    semantics_eval,
)
from .model import Belief, Execution, Pomdp, filter_run

# -- proposition maps ---------------------------------------------------------


def _relaxed_atom_expr(atom: StateAtom) -> BeliefExpr:
    """Belief predicate standing in for a hidden-state atom.

    ``in(A)`` relaxes to  -P(A) < 0  (positive mass on A); a negated atom
    relaxes through its complement set.
    """
    if not atom.negated:
        return Neg(Prob(atom.name, atom.indices))
    complement = frozenset(range(atom.num_states)) - atom.indices
    return Neg(Prob(f"!{atom.name}", complement))


class PropositionMaps:
    """Dense, disjoint proposition indexing for a formula's predicates.

    Belief propositions come first: one per distinct belief expression
    appearing in the formula, plus one per relaxed hidden-state atom (used
    by the feasibility automaton).  State propositions follow, one per
    distinct hidden-state set.
    """

    def __init__(self, formula: Formula):
        belief_exprs: list[BeliefExpr] = []
        belief_index: dict[BeliefExpr, int] = {}
        state_sets: list[frozenset[int]] = []
        state_index: dict[frozenset[int], int] = {}
        state_names: list[str] = []

        def register_belief(expr: BeliefExpr) -> None:
            if expr not in belief_index:
                belief_index[expr] = len(belief_exprs)
                belief_exprs.append(expr)

        for atom in _iter_atoms(formula):
            if isinstance(atom, BeliefAtom):
                register_belief(atom.expr)
            else:
                register_belief(_relaxed_atom_expr(atom))
                if atom.indices not in state_index:
                    state_index[atom.indices] = len(state_sets)
                    state_sets.append(atom.indices)
                    state_names.append(atom.name)

        self.belief_props: tuple[BeliefExpr, ...] = tuple(belief_exprs)
        self.state_props: tuple[frozenset[int], ...] = tuple(state_sets)
        self._belief_index = belief_index
        self._state_index = state_index
        self._state_names = tuple(state_names)

    @property
    def num_belief_props(self) -> int:
        return len(self.belief_props)

    @property
    def num_state_props(self) -> int:
        return len(self.state_props)

    @property
    def num_props(self) -> int:
        return self.num_belief_props + self.num_state_props

    def belief_prop(self, expr: BeliefExpr) -> int:
        return self._belief_index[expr]

    def state_prop(self, indices: frozenset[int]) -> int:
        """Global proposition index (offset past the belief propositions)."""
        return self.num_belief_props + self._state_index[indices]

    def prop_names(self) -> list[str]:
        names = [f"[{belief_expr_text(e)} < 0]" for e in self.belief_props]
        names += [f"in({n})" for n in self._state_names]
        return names

    def state_bits(self, num_states: int) -> list[int]:
        """Per-hidden-state bitmask of the state propositions it satisfies."""
        bits = [0] * num_states
        for k, indices in enumerate(self.state_props):
            mask = 1 << (self.num_belief_props + k)
            for s in indices:
                bits[s] |= mask
        return bits


def _iter_atoms(formula: Formula):
    if isinstance(formula, Atom):
        yield formula
    elif isinstance(formula, (And, Or, Until)):
        yield from _iter_atoms(formula.left)
        yield from _iter_atoms(formula.right)
    elif isinstance(formula, (Next, Eventually)):
        yield from _iter_atoms(formula.child)
    else:
        raise TypeError(f"not a formula: {formula!r}")


def build_proposition_maps(formula: Formula) -> PropositionMaps:
    return PropositionMaps(formula)


def relax(formula: Formula) -> Formula:
    """Replace every hidden-state atom by its positive-mass belief predicate."""
    if isinstance(formula, StateAtom):
        return BeliefAtom(_relaxed_atom_expr(formula))
    if isinstance(formula, BeliefAtom):
        return formula
    if isinstance(formula, And):
        return And(relax(formula.left), relax(formula.right))
    if isinstance(formula, Or):
        return Or(relax(formula.left), relax(formula.right))
    if isinstance(formula, Until):
        return Until(relax(formula.left), relax(formula.right))
    if isinstance(formula, Next):
        return Next(relax(formula.child))
    if isinstance(formula, Eventually):
        return Eventually(relax(formula.child))
    raise TypeError(f"not a formula: {formula!r}")


RegionSignature = int
"""Bitmask over belief propositions; bit j marks predicate j holding."""


def region_signature(belief: Belief, maps: PropositionMaps) -> RegionSignature:
    """Bitmask over the belief propositions: bit j is set iff predicate j
    evaluates strictly below zero on ``belief``."""
    sig = 0
    for j, expr in enumerate(maps.belief_props):
        if eval_belief_expr(expr, belief) < 0:
            sig |= 1 << j
    return sig


def _to_prop_formula(formula: Formula, maps: PropositionMaps, relax_states: bool):
    """Map atoms to propositions.  With ``relax_states`` every hidden-state
    atom goes through its relaxed belief proposition (feasibility skeleton);
    otherwise it keeps its own state proposition (acceptance skeleton)."""
    if isinstance(formula, StateAtom):
        if relax_states:
            return PropAtom(maps.belief_prop(_relaxed_atom_expr(formula)))
        return PropAtom(maps.state_prop(formula.indices), formula.negated)
    if isinstance(formula, BeliefAtom):
        return PropAtom(maps.belief_prop(formula.expr), formula.negated)
    if isinstance(formula, And):
        return And(
            _to_prop_formula(formula.left, maps, relax_states),
            _to_prop_formula(formula.right, maps, relax_states),
        )
    if isinstance(formula, Or):
        return Or(
            _to_prop_formula(formula.left, maps, relax_states),
            _to_prop_formula(formula.right, maps, relax_states),
        )
    if isinstance(formula, Until):
        return Until(
            _to_prop_formula(formula.left, maps, relax_states),
            _to_prop_formula(formula.right, maps, relax_states),
        )
    if isinstance(formula, Next):
        return Next(_to_prop_formula(formula.child, maps, relax_states))
    if isinstance(formula, Eventually):
        return Eventually(_to_prop_formula(formula.child, maps, relax_states))
    raise TypeError(f"not a formula: {formula!r}")


class CompiledMonitor:
    """Formula artifacts shared across executions: proposition maps plus the
    feasibility DFA (belief propositions only) and the acceptance DFA
    (belief and state propositions)."""

    def __init__(self, formula: Formula):
        self.formula = formula
        self.maps = PropositionMaps(formula)
        names = self.maps.prop_names()
        self.feasibility_dfa: Dfa = formula_to_dfa(
            _to_prop_formula(relax(formula), self.maps, relax_states=True),
            self.maps.num_belief_props,
            prop_names=names[: self.maps.num_belief_props],
        )
        self.acceptance_dfa: Dfa = formula_to_dfa(
            _to_prop_formula(formula, self.maps, relax_states=False),
            self.maps.num_props,
            prop_names=names,
        )


@lru_cache(maxsize=None)
def compile_monitor(formula: Formula) -> CompiledMonitor:
    """Cached compilation; formulas are immutable so reuse is safe."""
    return CompiledMonitor(formula)


def build_monitor_dfa(formula: Formula, relaxed: bool = False) -> Dfa:
    """Fresh automaton for a formula, for export or inspection.

    With ``relaxed`` the belief-only feasibility skeleton is compiled
    (hidden-state atoms relaxed to positive-mass predicates); otherwise the
    full acceptance skeleton over belief and state propositions.
    """
    maps = PropositionMaps(formula)
    names = maps.prop_names()
    if relaxed:
        phi = _to_prop_formula(relax(formula), maps, relax_states=True)
        return formula_to_dfa(
            phi, maps.num_belief_props, prop_names=names[: maps.num_belief_props]
        )
    phi = _to_prop_formula(formula, maps, relax_states=False)
    return formula_to_dfa(phi, maps.num_props, prop_names=names)


# -- feasibility ----------------------------------------------------------------


def feasibility_check(
    pomdp: Pomdp, formula: Formula, exec: Execution
) -> tuple[bool, tuple[frozenset[int], ...]]:
    """Necessary condition for a positive satisfaction probability.

    Runs the relaxed, belief-only skeleton over the per-step predicate
    signatures of the recorded beliefs.  Returns the verdict and the
    per-step sets of satisfied belief propositions.
    """
    comp = compile_monitor(formula)
    return _feasibility(comp, pomdp, exec)


def _feasibility(comp: CompiledMonitor, pomdp: Pomdp, exec: Execution):
    for b in exec.beliefs:
        if len(b) != pomdp.num_states:
            raise ModelError("execution beliefs do not match the model dimension")
    sigs = [region_signature(b, comp.maps) for b in exec.beliefs]
    ok = dfa_accepts(comp.feasibility_dfa, sigs)
    labels = tuple(
        frozenset(j for j in range(comp.maps.num_belief_props) if (sig >> j) & 1) for sig in sigs
    )
    return ok, labels


# -- smoothing ------------------------------------------------------------------


@dataclass(frozen=True)
class BackwardLikelihoods:
    """Backward observation likelihoods for a recorded action/observation run.

    ``values[i, s]`` is the probability of the observations after time i
    given the hidden state is ``s`` at time i and the recorded actions are
    taken; the last row is identically one.
    """

    values: np.ndarray
    actions: tuple[int, ...]
    observations: tuple[int, ...]


def backward_likelihoods(
    pomdp: Pomdp, actions: Sequence[int], observations: Sequence[int]
) -> BackwardLikelihoods:
    if len(actions) != len(observations):
        raise ModelError("actions and observations must have equal length")
    t = len(actions)
    values = np.ones((t + 1, pomdp.num_states))
    for i in range(t - 1, -1, -1):
        a, o = actions[i], observations[i]
        values[i] = pomdp.trans_mat[a] @ (pomdp.obs_mat[a][:, o] * values[i + 1])
    if float((pomdp.prior.probs * values[0]).sum()) == 0.0:
        raise AllZero("the recorded run is impossible under the model")
    values.flags.writeable = False
    return BackwardLikelihoods(values, tuple(actions), tuple(observations))


def smoothed_initial(pomdp: Pomdp, bl: BackwardLikelihoods) -> np.ndarray:
    """Posterior over the initial hidden state given the whole record."""
    weights = pomdp.prior.probs * bl.values[0]
    total = float(weights.sum())
    if total == 0.0:
        raise AllZero("the recorded run is impossible under the model")
    return weights / total


def path_transition(pomdp: Pomdp, bl: BackwardLikelihoods, i: int, s: int, s2: int) -> float:
    """Smoothed one-step transition probability from ``s`` to ``s2`` at time i.

    Rows sum to one over ``s2`` for any state with positive backward
    likelihood, by the backward recurrence.
    """
    denom = float(bl.values[i][s])
    if denom == 0.0:
        raise InconsistentState(
            f"state {pomdp.state_names[s]!r} cannot produce the remaining observations"
        )
    a, o = bl.actions[i], bl.observations[i]
    numer = pomdp.obs_mat[a][s2, o] * bl.values[i + 1][s2] * pomdp.trans_mat[a][s, s2]
    return float(numer / denom)


def _path_transition_row(pomdp: Pomdp, bl: BackwardLikelihoods, i: int, s: int) -> np.ndarray:
    denom = float(bl.values[i][s])
    if denom == 0.0:
        raise InconsistentState(
            f"state {pomdp.state_names[s]!r} cannot produce the remaining observations"
        )
    a, o = bl.actions[i], bl.observations[i]
    return pomdp.trans_mat[a][s] * pomdp.obs_mat[a][:, o] * bl.values[i + 1] / denom


# -- acceptance probability --------------------------------------------------------


@dataclass
class MonitorReport:
    """Monitoring verdict for one execution.

    ``step_labels[i]`` is the set of belief propositions satisfied at step
    i; ``diagnostics`` carries dynamic-program and path counts.  An
    infeasible execution always reports probability zero.
    """

    feasible: bool
    probability: float
    step_labels: tuple[frozenset[int], ...]
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "probability": self.probability,
            "step_labels": [sorted(label) for label in self.step_labels],
            "diagnostics": dict(self.diagnostics),
        }


def acceptance_probability(pomdp: Pomdp, formula: Formula, exec: Execution) -> MonitorReport:
    """Exact probability that a smoothed hidden path satisfies the formula.

    Runs feasibility first and returns probability zero without further
    work when it fails.  Otherwise sums the smoothed path measure over
    satisfying paths with a forward dynamic program over (hidden state,
    automaton state) pairs; the automaton consumes, at step i in hidden
    state s, the belief-predicate signature of the step's belief joined
    with the state propositions s satisfies.
    """
    comp = compile_monitor(formula)
    feasible, labels = _feasibility(comp, pomdp, exec)
    legend = comp.maps.prop_names()
    if not feasible:
        return MonitorReport(
            False,
            0.0,
            labels,
            {"dp_pairs": 0, "consistent_paths": 0, "propositions": legend},
        )

    bl = backward_likelihoods(pomdp, exec.actions, exec.observations)
    alpha0 = smoothed_initial(pomdp, bl)
    sigs = [region_signature(b, comp.maps) for b in exec.beliefs]
    sbits = comp.maps.state_bits(pomdp.num_states)
    dfa = comp.acceptance_dfa
    t = exec.horizon

    mass: dict[tuple[int, int], float] = {}
    path_counts: dict[int, int] = {}
    for s in range(pomdp.num_states):
        if alpha0[s] > 0.0:
            q = dfa.transition(dfa.initial, sigs[0] | sbits[s])
            mass[(s, q)] = mass.get((s, q), 0.0) + float(alpha0[s])
            path_counts[s] = path_counts.get(s, 0) + 1
    dp_pairs = len(mass)

    for i in range(t):
        rows = {s: _path_transition_row(pomdp, bl, i, s) for s in path_counts}
        next_mass: dict[tuple[int, int], float] = {}
        next_counts: dict[int, int] = {}
        for (s, q), m in mass.items():
            row = rows[s]
            for s2 in np.nonzero(row)[0]:
                s2 = int(s2)
                q2 = dfa.transition(q, sigs[i + 1] | sbits[s2])
                key = (s2, q2)
                next_mass[key] = next_mass.get(key, 0.0) + m * float(row[s2])
        for s, c in path_counts.items():
            for s2 in np.nonzero(rows[s])[0]:
                s2 = int(s2)
                next_counts[s2] = next_counts.get(s2, 0) + c
        mass = next_mass
        path_counts = next_counts
        dp_pairs += len(mass)

    probability = sum(m for (s, q), m in mass.items() if dfa.is_accepting(q))
    probability = min(max(probability, 0.0), 1.0)
    return MonitorReport(
        True,
        float(probability),
        labels,
        {
            "dp_pairs": dp_pairs,
            "consistent_paths": sum(path_counts.values()),
            "propositions": legend,
        },
    )


DEFAULT_ORACLE_CAP = 100_000_000


def acceptance_probability_oracle(
    pomdp: Pomdp, formula: Formula, exec: Execution, cap: int = DEFAULT_ORACLE_CAP
) -> float:
    """Reference value by explicit enumeration of consistent hidden paths.

    Each positive-probability path is scored with the direct recursive
    word semantics, bypassing the automaton and the dynamic program.
    Raises ``CapExceeded`` when the worst-case path count exceeds ``cap``,
    and again if the consistent paths actually expanded exceed it.
    """
    t = exec.horizon
    if pomdp.num_states ** (t + 1) > cap:
        raise CapExceeded(
            f"{pomdp.num_states}^{t + 1} potential paths exceed the cap {cap}"
        )
    bl = backward_likelihoods(pomdp, exec.actions, exec.observations)
    alpha0 = smoothed_initial(pomdp, bl)
    rows: list[dict[int, np.ndarray]] = [{} for _ in range(t)]

    total = 0.0
    leaves = 0
    stack: list[tuple[list[int], float]] = [
        ([s], float(alpha0[s])) for s in range(pomdp.num_states) if alpha0[s] > 0.0
    ]
    while stack:
        path, prob = stack.pop()
        i = len(path) - 1
        if i == t:
            leaves += 1
            if leaves > cap:
                raise CapExceeded(f"consistent paths exceed the cap {cap}")
            word = list(zip(path, exec.beliefs))
            if semantics_eval(formula, word, 0):
                total += prob
            continue
        s = path[-1]
        row = rows[i].get(s)
        if row is None:
            row = _path_transition_row(pomdp, bl, i, s)
            rows[i][s] = row
        for s2 in np.nonzero(row)[0]:
            s2 = int(s2)
            stack.append((path + [s2], prob * float(row[s2])))
    return total


# -- trace and report files ----------------------------------------------------------


def load_trace(pomdp: Pomdp, path) -> Execution:
    """Read a trace file and return a validated execution.

    Beliefs are recomputed with the filter; when the file carries its own
    beliefs they are cross-checked entry by entry.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return execution_from_json_dict(pomdp, doc)


def execution_from_json_dict(pomdp: Pomdp, doc) -> Execution:
    try:
        action_names = list(doc["actions"])
        obs_names = list(doc["observations"])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed trace document: {exc}") from exc
    actions = tuple(_lookup(pomdp.action_index, a, "action") for a in action_names)
    observations = tuple(_lookup(pomdp.obs_index, o, "observation") for o in obs_names)
    beliefs = tuple(filter_run(pomdp, actions, observations))
    exec = Execution(beliefs, actions, observations)
    if doc.get("beliefs") is not None:
        recorded = doc["beliefs"]
        if len(recorded) != len(beliefs):
            raise ModelError(
                f"trace carries {len(recorded)} beliefs, filter produced {len(beliefs)}"
            )
        for i, entry in enumerate(recorded):
            vec = np.zeros(pomdp.num_states)
            for name, p in entry.items():
                vec[_lookup(pomdp.state_index, name, "state")] = float(p)
            err = float(np.abs(vec - beliefs[i].probs).max())
            if err > 1e-9:
                raise ModelError(f"recorded belief {i} deviates from the filter by {err!r}")
    return exec


def _lookup(table, name, kind):
    if name not in table:
        raise ModelError(f"unknown {kind} name {name!r}")
    return table[name]


def execution_to_json_dict(pomdp: Pomdp, exec: Execution, include_beliefs: bool = True) -> dict:
    doc = {
        "actions": [pomdp.actions[a] for a in exec.actions],
        "observations": [pomdp.observations[o] for o in exec.observations],
    }
    if include_beliefs:
        doc["beliefs"] = [
            {pomdp.state_names[i]: float(p) for i, p in enumerate(b.probs) if p > 0}
            for b in exec.beliefs
        ]
    return doc


def save_trace(pomdp: Pomdp, exec: Execution, path, include_beliefs: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(execution_to_json_dict(pomdp, exec, include_beliefs), fh, indent=2)
        fh.write("\n")
