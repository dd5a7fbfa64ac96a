"""POMDP representation, belief arithmetic, Bayes filtering, and simulation.

States carry tag maps (named attributes such as room or carry flags) from
which named state sets and factor partitions are derived.  Probability
tables are stored sparsely: absent entries mean zero.  Dense per-action
matrices are precomputed for fast filtering.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelError, ZeroLikelihood

SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Belief:
    """Probability mass function over hidden-state indices.

    Entries are nonnegative and sum to one within ``SUM_TOL``.  The backing
    array is made read-only so beliefs can be shared freely.
    """

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ModelError("belief must be a nonempty 1-d vector")
        if (arr < 0).any():
            raise ModelError("belief entries must be nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ModelError(f"belief mass {total!r} is not 1 within {SUM_TOL}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return int(self.probs.size)

    def __getitem__(self, i: int) -> float:
        return float(self.probs[i])


def _as_index(label, table: Mapping[str, int], kind: str) -> int:
    if isinstance(label, str):
        if label not in table:
            raise ModelError(f"unknown {kind} name {label!r}")
        return table[label]
    idx = int(label)
    if not 0 <= idx < len(table):
        raise ModelError(f"{kind} index {idx} out of range")
    return idx


class Pomdp:
    """Finite POMDP with tagged states, sparse dynamics, and named state sets.

    ``trans`` maps ``(s, a, s')`` to the probability that action ``a`` in
    state ``s`` moves the system to ``s'``.  ``obs_model`` maps
    ``(s', a, o)`` to the probability of observing ``o`` after ``a`` landed
    the system in ``s'``.  Both tables must have rows summing to one for
    every (state, action) pair; actions that convey no information emit a
    designated null observation with probability one.

    Instances are immutable after construction and safe for concurrent
    reads.  A ``Pomdp`` doubles as the symbol table used by the formula
    parser (``named_sets``, ``factor_cells``, ``num_states``).
    """

    def __init__(
        self,
        states: Sequence,
        actions: Sequence[str],
        observations: Sequence[str],
        prior,
        trans: Mapping,
        obs_model: Mapping,
        named_sets: Mapping | None = None,
        factors: Mapping[str, str] | None = None,
    ):
        names, tags = [], []
        for entry in states:
            if isinstance(entry, str):
                names.append(entry)
                tags.append({})
            else:
                name, tag_map = entry
                names.append(str(name))
                tags.append(dict(tag_map))
        if len(set(names)) != len(names):
            raise ModelError("duplicate state names")
        if len(set(actions)) != len(actions) or len(set(observations)) != len(observations):
            raise ModelError("duplicate action or observation names")
        self.state_names: tuple[str, ...] = tuple(names)
        self.state_tags: tuple[dict, ...] = tuple(tags)
        self.actions: tuple[str, ...] = tuple(actions)
        self.observations: tuple[str, ...] = tuple(observations)
        self.state_index = {n: i for i, n in enumerate(self.state_names)}
        self.action_index = {n: i for i, n in enumerate(self.actions)}
        self.obs_index = {n: i for i, n in enumerate(self.observations)}

        n_s, n_a, n_o = len(names), len(self.actions), len(self.observations)
        if min(n_s, n_a, n_o) == 0:
            raise ModelError("states, actions, and observations must be nonempty")

        self.trans: dict[tuple[int, int, int], float] = {}
        for (s, a, s2), p in trans.items():
            p = float(p)
            if p < 0 or p > 1 + SUM_TOL:
                raise ModelError(f"transition probability {p!r} outside [0, 1]")
            if p == 0.0:
                continue
            key = (
                _as_index(s, self.state_index, "state"),
                _as_index(a, self.action_index, "action"),
                _as_index(s2, self.state_index, "state"),
            )
            self.trans[key] = self.trans.get(key, 0.0) + p
        self.obs_model: dict[tuple[int, int, int], float] = {}
        for (s2, a, o), p in obs_model.items():
            p = float(p)
            if p < 0 or p > 1 + SUM_TOL:
                raise ModelError(f"observation probability {p!r} outside [0, 1]")
            if p == 0.0:
                continue
            key = (
                _as_index(s2, self.state_index, "state"),
                _as_index(a, self.action_index, "action"),
                _as_index(o, self.obs_index, "observation"),
            )
            self.obs_model[key] = self.obs_model.get(key, 0.0) + p

        trans_mat = np.zeros((n_a, n_s, n_s))
        for (s, a, s2), p in self.trans.items():
            trans_mat[a, s, s2] = p
        obs_mat = np.zeros((n_a, n_s, n_o))
        for (s2, a, o), p in self.obs_model.items():
            obs_mat[a, s2, o] = p
        row_err = np.abs(trans_mat.sum(axis=2) - 1.0)
        if (row_err > SUM_TOL).any():
            a, s = np.unravel_index(int(row_err.argmax()), row_err.shape)
            raise ModelError(
                f"transition row for state {self.state_names[s]!r} under action "
                f"{self.actions[a]!r} sums to {trans_mat[a, s].sum()!r}"
            )
        obs_err = np.abs(obs_mat.sum(axis=2) - 1.0)
        if (obs_err > SUM_TOL).any():
            a, s2 = np.unravel_index(int(obs_err.argmax()), obs_err.shape)
            raise ModelError(
                f"observation row for state {self.state_names[s2]!r} under action "
                f"{self.actions[a]!r} sums to {obs_mat[a, s2].sum()!r}"
            )
        trans_mat.flags.writeable = False
        obs_mat.flags.writeable = False
        self.trans_mat = trans_mat
        self.obs_mat = obs_mat

        self.prior = prior if isinstance(prior, Belief) else Belief(np.asarray(prior, dtype=float))
        if len(self.prior) != n_s:
            raise ModelError("prior length does not match the state count")

        self.named_sets: dict[str, frozenset[int]] = {}
        for name, desc in (named_sets or {}).items():
            self.named_sets[str(name)] = self._resolve_set(desc)

        self.factor_tags: dict[str, str] = {}
        self.factor_cells: dict[str, tuple[tuple[int, ...], ...]] = {}
        for fname, tag_key in (factors or {}).items():
            cells = self._partition_by_tag(str(fname), str(tag_key))
            self.factor_tags[str(fname)] = str(tag_key)
            self.factor_cells[str(fname)] = cells

    # -- construction helpers -------------------------------------------------

    def _resolve_set(self, desc) -> frozenset[int]:
        if isinstance(desc, Mapping):
            if set(desc) != {"tag", "value"}:
                raise ModelError("set predicate objects must have exactly the keys 'tag' and 'value'")
            tag, value = desc["tag"], desc["value"]
            return frozenset(i for i, t in enumerate(self.state_tags) if t.get(tag) == value)
        members = set()
        for item in desc:
            members.add(_as_index(item, self.state_index, "state"))
        return frozenset(members)

    def _partition_by_tag(self, fname: str, tag_key: str) -> tuple[tuple[int, ...], ...]:
        groups: dict = {}
        for i, tags in enumerate(self.state_tags):
            if tag_key not in tags:
                raise ModelError(
                    f"factor {fname!r}: state {self.state_names[i]!r} lacks tag {tag_key!r}"
                )
            groups.setdefault(tags[tag_key], []).append(i)
        ordered = sorted(groups.items(), key=lambda kv: str(kv[0]))
        return tuple(tuple(members) for _, members in ordered)

    # -- basic queries ---------------------------------------------------------

    @property
    def num_states(self) -> int:
        return len(self.state_names)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_observations(self) -> int:
        return len(self.observations)

    def set_indices(self, name: str) -> frozenset[int]:
        if name not in self.named_sets:
            raise ModelError(f"unknown state set {name!r}")
        return self.named_sets[name]

    # -- JSON interchange ------------------------------------------------------

    def to_json_dict(self) -> dict:
        """Serialize to the model-file schema (see README)."""
        sn, an, on = self.state_names, self.actions, self.observations
        return {
            "states": [{"name": n, "tags": dict(t)} for n, t in zip(sn, self.state_tags)],
            "actions": list(an),
            "observations": list(on),
            "prior": {sn[i]: float(p) for i, p in enumerate(self.prior.probs) if p > 0},
            "transitions": [
                [sn[s], an[a], sn[s2], float(p)]
                for (s, a, s2), p in sorted(self.trans.items())
            ],
            "observation_model": [
                [sn[s2], an[a], on[o], float(p)]
                for (s2, a, o), p in sorted(self.obs_model.items())
            ],
            "sets": {name: [sn[i] for i in sorted(ix)] for name, ix in self.named_sets.items()},
            "factors": dict(self.factor_tags),
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "Pomdp":
        try:
            states = [(e["name"], e.get("tags", {})) for e in doc["states"]]
            names = [n for n, _ in states]
            prior = np.zeros(len(names))
            index = {n: i for i, n in enumerate(names)}
            for name, p in doc["prior"].items():
                if name not in index:
                    raise ModelError(f"prior references unknown state {name!r}")
                prior[index[name]] = float(p)
            trans = {(s, a, s2): p for s, a, s2, p in doc["transitions"]}
            obs = {(s2, a, o): p for s2, a, o, p in doc["observation_model"]}
            return cls(
                states,
                doc["actions"],
                doc["observations"],
                prior,
                trans,
                obs,
                named_sets=doc.get("sets", {}),
                factors=doc.get("factors", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc


def load_model(path) -> Pomdp:
    with open(path, "r", encoding="utf-8") as fh:
        return Pomdp.from_json_dict(json.load(fh))


def save_model(pomdp: Pomdp, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(pomdp.to_json_dict(), fh, indent=2)
        fh.write("\n")


# -- executions ----------------------------------------------------------------


@dataclass(frozen=True)
class Execution:
    """Aligned belief/action/observation record of a monitored run.

    ``beliefs`` has one more entry than ``actions`` and ``observations``:
    ``beliefs[i + 1]`` is the filter update of ``beliefs[i]`` under
    ``actions[i]`` and ``observations[i]``.
    """

    beliefs: tuple[Belief, ...]
    actions: tuple[int, ...]
    observations: tuple[int, ...]

    def __post_init__(self):
        if len(self.beliefs) == 0:
            raise ModelError("an execution needs at least the initial belief")
        if len(self.actions) != len(self.beliefs) - 1 or len(self.observations) != len(self.actions):
            raise ModelError(
                "inconsistent execution lengths: "
                f"{len(self.beliefs)} beliefs, {len(self.actions)} actions, "
                f"{len(self.observations)} observations"
            )

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def validate_against(self, pomdp: Pomdp, tol: float = SUM_TOL) -> None:
        """Recompute the filter and require per-entry agreement within ``tol``."""
        recomputed = filter_run(pomdp, self.actions, self.observations)
        for i, (got, want) in enumerate(zip(self.beliefs, recomputed)):
            if len(got) != pomdp.num_states:
                raise ModelError(f"belief {i} has wrong dimension")
            err = float(np.abs(got.probs - want.probs).max())
            if err > tol:
                raise ModelError(f"belief {i} deviates from the filter by {err!r}")


def execution_from_actions(pomdp: Pomdp, actions: Sequence, observations: Sequence) -> Execution:
    """Build a validated execution by filtering the given action/observation record."""
    acts = tuple(_as_index(a, pomdp.action_index, "action") for a in actions)
    obss = tuple(_as_index(o, pomdp.obs_index, "observation") for o in observations)
    beliefs = tuple(filter_run(pomdp, acts, obss))
    return Execution(beliefs, acts, obss)


# -- filtering -----------------------------------------------------------------


def bayes_update(pomdp: Pomdp, belief: Belief, action: int, obs: int) -> Belief:
    """One step of the recursive Bayes filter.

    Predicts through the transition table, corrects by the observation
    likelihood, and renormalizes.  Raises ``ZeroLikelihood`` when the
    observation is impossible under the predicted belief, which signals an
    inconsistent trace.
    """
    if len(belief) != pomdp.num_states:
        raise ModelError("belief dimension does not match the model")
    if not 0 <= action < pomdp.num_actions:
        raise ModelError(f"action index {action} out of range")
    if not 0 <= obs < pomdp.num_observations:
        raise ModelError(f"observation index {obs} out of range")
    predicted = belief.probs @ pomdp.trans_mat[action]
    posterior = predicted * pomdp.obs_mat[action][:, obs]
    norm = float(posterior.sum())
    if norm <= 0.0:
        raise ZeroLikelihood(
            f"observation {pomdp.observations[obs]!r} has zero likelihood after "
            f"action {pomdp.actions[action]!r}"
        )
    return Belief(posterior / norm)


def filter_run(pomdp: Pomdp, actions: Sequence[int], observations: Sequence[int]) -> list[Belief]:
    """Fold ``bayes_update`` over an action/observation record, starting at the prior."""
    if len(actions) != len(observations):
        raise ModelError("actions and observations must have equal length")
    beliefs = [pomdp.prior]
    for i, (a, o) in enumerate(zip(actions, observations)):
        try:
            beliefs.append(bayes_update(pomdp, beliefs[-1], a, o))
        except ZeroLikelihood as exc:
            raise ZeroLikelihood(f"step {i}: {exc}", step=i) from exc
    return beliefs


# -- belief functionals ----------------------------------------------------------


def marginal_prob(belief: Belief, states: Iterable[int]) -> float:
    """Total belief mass on a set of state indices."""
    idx = sorted(set(states))
    if idx and not (0 <= idx[0] and idx[-1] < len(belief)):
        raise ModelError("state set out of range")
    if not idx:
        return 0.0
    return float(belief.probs[idx].sum())


def marginal_dist(belief: Belief, cells: Sequence[Sequence[int]]) -> np.ndarray:
    """Belief mass per cell of a partition of the state indices."""
    return np.array([float(belief.probs[list(cell)].sum()) for cell in cells])


def entropy_bits(pmf) -> float:
    """Shannon entropy in bits, with 0 * log2(0) taken as 0."""
    arr = np.asarray(pmf, dtype=float)
    nz = arr[arr > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


# -- policies and simulation ------------------------------------------------------


class Policy:
    """Decision rule queried once per step with the current belief.

    ``reset`` is called at the start of every simulated trajectory with the
    model, the horizon, and the trajectory seed, so policies can rebuild
    internal memory and stay reproducible.
    """

    def reset(self, pomdp: Pomdp, horizon: int, seed: int | None = None) -> None:
        pass

    def act(self, belief: Belief, step: int) -> int:
        raise NotImplementedError


class ScriptedPolicy(Policy):
    """Replays a fixed action sequence, padding with ``pad_action`` if short."""

    def __init__(self, actions: Sequence, pad_action=None):
        self._script = list(actions)
        self._pad = pad_action
        self._resolved: list[int] = []
        self._pad_idx: int | None = None

    def reset(self, pomdp: Pomdp, horizon: int, seed: int | None = None) -> None:
        self._resolved = [_as_index(a, pomdp.action_index, "action") for a in self._script]
        self._pad_idx = (
            None if self._pad is None else _as_index(self._pad, pomdp.action_index, "action")
        )

    def act(self, belief: Belief, step: int) -> int:
        if step < len(self._resolved):
            return self._resolved[step]
        if self._pad_idx is None:
            raise ModelError(f"scripted policy exhausted at step {step}")
        return self._pad_idx


class RandomActionPolicy(Policy):
    """Uniform random action choice from a per-trajectory seeded stream."""

    def __init__(self, seed: int = 0):
        self._fallback = seed
        self._rng = random.Random(seed)
        self._num_actions = 1

    def reset(self, pomdp: Pomdp, horizon: int, seed: int | None = None) -> None:
        self._rng = random.Random(self._fallback if seed is None else seed + 1_000_003)
        self._num_actions = pomdp.num_actions

    def act(self, belief: Belief, step: int) -> int:
        return self._rng.randrange(self._num_actions)


def _sample(rng: random.Random, probs: np.ndarray) -> int:
    r = rng.random()
    acc = 0.0
    last = 0
    for i, p in enumerate(probs):
        if p <= 0.0:
            continue
        acc += p
        last = i
        if r < acc:
            return i
    return last


def simulate(
    pomdp: Pomdp, policy: Policy, horizon: int, seed: int
) -> tuple[list[int], Execution]:
    """Sample a hidden path and the execution the monitor would observe.

    The hidden start state comes from the prior; each step asks the policy
    for an action, samples the successor and its observation, and advances
    the filter.  Identical seeds give bit-identical results.
    """
    if horizon < 1:
        raise ModelError("horizon must be at least 1")
    rng = random.Random(seed)
    state = _sample(rng, pomdp.prior.probs)
    policy.reset(pomdp, horizon, seed)
    hidden = [state]
    beliefs = [pomdp.prior]
    acts: list[int] = []
    obss: list[int] = []
    for step in range(horizon):
        action = policy.act(beliefs[-1], step)
        if not 0 <= action < pomdp.num_actions:
            raise ModelError(f"policy returned invalid action {action!r}")
        state = _sample(rng, pomdp.trans_mat[action][state])
        obs = _sample(rng, pomdp.obs_mat[action][state])
        beliefs.append(bayes_update(pomdp, beliefs[-1], action, obs))
        hidden.append(state)
        acts.append(action)
        obss.append(obs)
    return hidden, Execution(tuple(beliefs), tuple(acts), tuple(obss))
