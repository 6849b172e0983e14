"""Markov games, networks of games, policies, and closed-loop simulation.

A component is a Markov game whose environment actions are the joint states
of its predecessor components in a network.  Environment actions are always
handled as tuples of predecessor states; they are never materialized as a
flat index, so memory stays proportional to what is visited.

All model objects are immutable after construction.  Rollouts are pure
functions of (network, policies, seed) and may run concurrently with
independent generators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .automata import Dfa, _label_from_json, _label_to_json

ROW_SUM_TOL = 1e-9

FULL = "full"
LIMITED = "limited"
NONE = "none"

_CLASS_ORDER = {NONE: 0, LIMITED: 1, FULL: 2}


class UnresolvedPolicyError(KeyError):
    """A policy was queried at an observation it has no entry for."""


class MarkovGame:
    """Finite Markov game ``(S, s0, A, B, P, L)`` with sparse transitions.

    The environment action set ``B`` is the product of the predecessor state
    spaces and is passed around as tuples.  Transitions are either an
    explicit dict ``{(s, a, env_tuple): ((s', p), ...)}`` or a ``dynamics``
    callable with the same signature returning ``None`` for disabled
    actions.  An absent entry means action ``a`` is disabled at ``s`` under
    that environment action.

    ``env_class`` optionally declares a quotient of the environment action
    space: two environment tuples with equal keys must induce identical
    distributions for every ``(s, a)``.  Compilers use it to deduplicate
    adversary choices.
    """

    def __init__(self, n_states, initial, n_actions, labels, alphabet,
                 transitions=None, dynamics=None, env_class=None,
                 env_member_class=None, all_actions_enabled=False,
                 state_names=None, template_key=None):
        self.n_states = int(n_states)
        self.initial = int(initial)
        self.n_actions = int(n_actions)
        self.alphabet = tuple(alphabet)
        self.label_of = tuple(labels)
        self.state_names = tuple(state_names) if state_names is not None \
            else tuple(range(self.n_states))
        self._transitions = dict(transitions) if transitions is not None else None
        self._dynamics = dynamics
        self._env_class = env_class
        self._env_member_class = env_member_class
        self.all_actions_enabled = bool(all_actions_enabled)
        self.template_key = template_key
        self._preimage = None
        self._validate()

    def _validate(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("need at least one state and one action")
        if not 0 <= self.initial < self.n_states:
            raise ValueError("initial state out of range")
        if len(self.label_of) != self.n_states:
            raise ValueError("labels must cover every state")
        alpha = set(self.alphabet)
        for s, lab in enumerate(self.label_of):
            if lab not in alpha:
                raise ValueError(f"label {lab!r} of state {s} not in alphabet")
        if (self._transitions is None) == (self._dynamics is None):
            raise ValueError("provide exactly one of transitions/dynamics")
        if self._transitions is not None:
            envs = set()
            for (s, a, env), row in self._transitions.items():
                if not 0 <= s < self.n_states or not 0 <= a < self.n_actions:
                    raise ValueError(f"bad transition key ({s}, {a}, {env})")
                if not isinstance(env, tuple):
                    raise ValueError("environment actions must be tuples")
                envs.add(env)
                total = 0.0
                for (t, p) in row:
                    if not 0 <= t < self.n_states:
                        raise ValueError(f"successor {t} out of range")
                    if p < 0:
                        raise ValueError("negative transition probability")
                    total += p
                if abs(total - 1.0) > ROW_SUM_TOL:
                    raise ValueError(f"row ({s}, {a}, {env}) sums to {total}")
            for env in envs:
                for s in range(self.n_states):
                    if not any((s, a, env) in self._transitions
                               for a in range(self.n_actions)):
                        raise ValueError(f"state {s} blocks under environment {env}")

    # -- queries ---------------------------------------------------------------

    def label(self, s):
        return self.label_of[s]

    def distribution(self, s, a, env):
        """Successor distribution ``((s', p), ...)`` or ``None`` if disabled."""
        if self._transitions is not None:
            return self._transitions.get((s, a, env))
        return self._dynamics(s, a, env)

    def enabled_actions(self, s, env):
        """Actions with a defined distribution at ``s`` under ``env``."""
        acts = tuple(a for a in range(self.n_actions)
                     if self.distribution(s, a, env) is not None)
        if not acts:
            raise ValueError(f"state {s} has no enabled action under {env}")
        return acts

    def env_class(self, env):
        """Quotient key of an environment tuple (identity by default).

        Tuples with equal keys must induce identical distributions at every
        ``(s, a)``; compilers rely on this to deduplicate adversary choices.
        """
        if self._env_class is None:
            return env
        return self._env_class(env)

    def env_class_member(self, pos, state):
        """Per-position quotient of one predecessor state (identity by default)."""
        if self._env_member_class is None:
            return state
        return self._env_member_class(pos, state)

    def label_preimage(self, lab):
        """States carrying a given label."""
        if self._preimage is None:
            index: dict = {}
            for s, l in enumerate(self.label_of):
                index.setdefault(l, []).append(s)
            self._preimage = index
        return self._preimage.get(lab, [])

    def sample_step(self, s, a, env, rng) -> int:
        """Draw the next state; raises if the action is disabled."""
        row = self.distribution(s, a, env)
        if row is None:
            raise ValueError(f"action {a} disabled at state {s} under {env}")
        if len(row) == 1:
            return row[0][0]
        u = rng.random()
        acc = 0.0
        for t, p in row:
            acc += p
            if u < acc:
                return t
        return row[-1][0]

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        if self._transitions is None:
            raise ValueError("dynamics-backed games cannot be serialized row by row")
        rows = []
        for (s, a, env), row in sorted(self._transitions.items(),
                                       key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            rows.append({"s": s, "a": a, "env": list(env),
                         "next": [[t, p] for (t, p) in row]})
        return {
            "n_states": self.n_states,
            "initial": self.initial,
            "n_actions": self.n_actions,
            "labels": [_label_to_json(lab) for lab in self.label_of],
            "alphabet": [_label_to_json(lab) for lab in self.alphabet],
            "transitions": rows,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MarkovGame":
        transitions = {}
        for row in data["transitions"]:
            transitions[(row["s"], row["a"], tuple(row["env"]))] = \
                tuple((t, p) for t, p in row["next"])
        return cls(data["n_states"], data["initial"], data["n_actions"],
                   [_label_from_json(lab) for lab in data["labels"]],
                   [_label_from_json(lab) for lab in data["alphabet"]],
                   transitions=transitions)


def enabled_actions(game: MarkovGame, s, env):
    return game.enabled_actions(s, env)


def sample_step(game: MarkovGame, s, a, env, rng):
    return game.sample_step(s, a, env, rng)


class MdpNetwork:
    """Directed network of Markov games.

    ``predecessors[i]`` is the ordered tuple of components whose states form
    component ``i``'s environment action ``B_i``; the order is part of the
    wiring declaration and fixes the layout of environment tuples.
    """

    def __init__(self, components: Sequence[MarkovGame], predecessors):
        self.components = tuple(components)
        self.predecessors = tuple(tuple(p) for p in predecessors)
        if len(self.predecessors) != len(self.components):
            raise ValueError("predecessor list must cover every component")
        for i, preds in enumerate(self.predecessors):
            if i in preds:
                raise ValueError(f"component {i} may not depend on itself")
            if len(set(preds)) != len(preds):
                raise ValueError(f"component {i} lists a predecessor twice")
            for j in preds:
                if not 0 <= j < len(self.components):
                    raise ValueError(f"predecessor {j} out of range")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def edges(self):
        return tuple(sorted((j, i) for i, preds in enumerate(self.predecessors)
                            for j in preds))

    def env_tuple(self, i, states):
        """Environment action of component ``i`` given the joint state."""
        return tuple(states[j] for j in self.predecessors[i])

    def to_dict(self) -> dict:
        return {
            "components": [g.to_dict() for g in self.components],
            "predecessors": [list(p) for p in self.predecessors],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MdpNetwork":
        return cls([MarkovGame.from_dict(g) for g in data["components"]],
                   data["predecessors"])


def dump_network(net: MdpNetwork, path):
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_network(path) -> MdpNetwork:
    with open(path) as fh:
        return MdpNetwork.from_dict(json.load(fh))


# -- observations and policies --------------------------------------------------


@dataclass(frozen=True)
class Observation:
    """Everything a component could ever see at one decision point.

    Policies read the projection matching their observation class, so a
    policy of a narrower class behaves identically after lifting.
    ``pred_q``/``pred_q_next`` are the predecessor automaton states before
    and after consuming the predecessors' current labels; they are the only
    neighbor information a limited-communication policy reads.
    """
    component: int
    local_state: int
    own_q: int
    pred_q: tuple
    pred_q_next: tuple
    joint_states: tuple
    joint_q: tuple

    def key(self, obs_class):
        if obs_class == NONE:
            return (self.local_state, self.own_q)
        if obs_class == LIMITED:
            return (self.local_state, self.own_q, self.pred_q, self.pred_q_next)
        if obs_class == FULL:
            return (self.joint_states, self.joint_q)
        raise ValueError(f"unknown observation class {obs_class!r}")


class Policy:
    """Deterministic policy table for one component.

    Keys per observation class:

    * ``NONE`` — ``(s_i, q_i)``: local state and own automaton state.
    * ``LIMITED`` — ``(s_i, q_i, pred_q, pred_q_next)``: additionally the
      predecessor automaton states before/after their current labels.
      Neighbor raw states are never read.
    * ``FULL`` — ``(joint_states, joint_q)``.

    ``tables`` is a single dict for stationary policies, or a dict indexed
    by steps-to-go for horizon-dependent ones (queries beyond the stored
    horizon use the deepest table).

    A missing entry raises ``UnresolvedPolicyError``.  Policies extracted
    from contract games may set ``fallback_to_enabled``: the simulator then
    substitutes the lowest enabled action for observations outside the
    contract's reachable set (a neighbor whose automaton already died),
    where the certified value is zero and behavior is unconstrained.
    """

    def __init__(self, observation_class, tables, horizon=None,
                 fallback_to_enabled=False):
        if observation_class not in (FULL, LIMITED, NONE):
            raise ValueError(f"unknown observation class {observation_class!r}")
        self.observation_class = observation_class
        self.horizon = horizon
        self.fallback_to_enabled = bool(fallback_to_enabled)
        if horizon is None:
            self.tables = dict(tables)
        else:
            self.tables = {int(h): dict(tab) for h, tab in tables.items()}

    def _table(self, steps_remaining):
        if self.horizon is None:
            return self.tables
        if steps_remaining is None:
            raise ValueError("horizon policy needs steps_remaining")
        h = min(int(steps_remaining), self.horizon)
        table = self.tables.get(h)
        if table is None:
            raise UnresolvedPolicyError(f"no table stored for horizon {h}")
        return table

    def action(self, obs: Observation, steps_remaining=None):
        key = obs.key(self.observation_class)
        table = self._table(steps_remaining)
        if key not in table:
            raise UnresolvedPolicyError(
                f"no action stored for observation {key!r}")
        return table[key]

    def lift(self, target_class) -> "Policy":
        """Lift to a wider observation class without changing behavior."""
        if _CLASS_ORDER[target_class] < _CLASS_ORDER[self.observation_class]:
            raise ValueError("can only lift to a wider observation class")
        if target_class == self.observation_class:
            return self
        return _LiftedPolicy(self, target_class)

    def to_dict(self) -> dict:
        def enc(table):
            return [[_obs_to_json(obs), int(a)] for obs, a in sorted(
                table.items(), key=lambda kv: repr(kv[0]))]
        if self.horizon is None:
            tables = enc(self.tables)
        else:
            tables = {str(h): enc(tab) for h, tab in sorted(self.tables.items())}
        return {"observation_class": self.observation_class,
                "horizon": self.horizon,
                "fallback_to_enabled": self.fallback_to_enabled,
                "tables": tables}

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        def dec(entries):
            return {_obs_from_json(obs): a for obs, a in entries}
        fallback = data.get("fallback_to_enabled", False)
        if data["horizon"] is None:
            return cls(data["observation_class"], dec(data["tables"]),
                       fallback_to_enabled=fallback)
        tables = {int(h): dec(tab) for h, tab in data["tables"].items()}
        return cls(data["observation_class"], tables, horizon=data["horizon"],
                   fallback_to_enabled=fallback)


class _LiftedPolicy(Policy):
    """Wider-class view of a policy; behavior delegates to the base table."""

    def __init__(self, base: Policy, observation_class):
        self.base = base
        self.observation_class = observation_class
        self.horizon = base.horizon
        self.tables = base.tables
        self.fallback_to_enabled = base.fallback_to_enabled

    def action(self, obs: Observation, steps_remaining=None):
        return self.base.action(obs, steps_remaining)

    def lift(self, target_class):
        if _CLASS_ORDER[target_class] < _CLASS_ORDER[self.observation_class]:
            raise ValueError("can only lift to a wider observation class")
        return _LiftedPolicy(self.base, target_class)


class UniformRandomPolicy:
    """Picks uniformly among enabled actions; the untrained baseline."""

    observation_class = FULL
    horizon = None


def _obs_to_json(obs):
    if isinstance(obs, tuple):
        return {"t": [_obs_to_json(x) for x in obs]}
    return obs


def _obs_from_json(obs):
    if isinstance(obs, dict) and "t" in obs:
        return tuple(_obs_from_json(x) for x in obs["t"])
    return obs


# -- trajectories ----------------------------------------------------------------


@dataclass
class Trajectory:
    """Closed-loop run: per-component state, label, and automaton sequences
    plus the global action record.

    ``dfa_states[i][n+1] == σ_i(dfa_states[i][n], labels[i][n])`` along the run.
    """
    states: tuple        # states[i] = (s_i(0), ..., s_i(T))
    labels: tuple        # labels[i] = (L_i(s_i(0)), ..., L_i(s_i(T-1)))
    dfa_states: tuple    # dfa_states[i] = (q_i(0), ..., q_i(T))
    actions: tuple       # actions[n] = (a_1(n), ..., a_k(n))
    length: int

    def to_json(self) -> dict:
        return {
            "states": [list(s) for s in self.states],
            "labels": [[_label_to_json(l) for l in labs] for labs in self.labels],
            "dfa_states": [list(q) for q in self.dfa_states],
            "actions": [list(a) for a in self.actions],
            "length": self.length,
        }


@dataclass
class SatisfactionResult:
    per_component: tuple
    all_satisfied: bool


def check_satisfaction(traj: Trajectory, dfas: Sequence[Dfa]) -> SatisfactionResult:
    """Acceptance per component and for the conjunction.

    With absorbing accepting states, simultaneous acceptance of the product
    equals every component eventually accepting.
    """
    per = tuple(any(q in dfa.accepting for q in qs)
                for dfa, qs in zip(dfas, traj.dfa_states))
    return SatisfactionResult(per, all(per))


def rollout_network(net: MdpNetwork, dfas: Sequence[Dfa],
                    policies: Sequence, horizon: int, rng,
                    stop_on_accept: bool = True) -> Trajectory:
    """Simulate the closed loop for ``horizon`` steps.

    At every step each component's environment action is the current state
    tuple of its predecessors, each automaton consumes its component's
    current label, and the run stops early once every automaton accepts.
    A policy missing an entry raises ``UnresolvedPolicyError`` rather than
    defaulting to some action.
    """
    if len(policies) != net.n_components or len(dfas) != net.n_components:
        raise ValueError("need one policy and one automaton per component")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    k = net.n_components
    states = [g.initial for g in net.components]
    qs = [d.initial for d in dfas]
    hist_states = [[s] for s in states]
    hist_labels: list = [[] for _ in range(k)]
    hist_qs = [[q] for q in qs]
    actions = []
    for step in range(horizon):
        if stop_on_accept and all(q in d.accepting for q, d in zip(qs, dfas)):
            break
        labels = [net.components[i].label(states[i]) for i in range(k)]
        q_next = [dfas[i].step(qs[i], labels[i]) for i in range(k)]
        envs = [net.env_tuple(i, states) for i in range(k)]
        step_actions = []
        for i in range(k):
            game = net.components[i]
            pol = policies[i]
            enabled = game.enabled_actions(states[i], envs[i])
            if isinstance(pol, UniformRandomPolicy):
                a = int(enabled[rng.integers(len(enabled))])
            else:
                obs = _observation(net, i, states, qs, q_next)
                try:
                    a = pol.action(obs, steps_remaining=horizon - step)
                except UnresolvedPolicyError:
                    if not getattr(pol, "fallback_to_enabled", False):
                        raise
                    a = enabled[0]
                if a not in enabled:
                    raise UnresolvedPolicyError(
                        f"policy for component {i} chose disabled action {a}")
            step_actions.append(a)
        next_states = [net.components[i].sample_step(states[i], step_actions[i],
                                                     envs[i], rng)
                       for i in range(k)]
        actions.append(tuple(step_actions))
        states = next_states
        qs = q_next
        for i in range(k):
            hist_states[i].append(states[i])
            hist_labels[i].append(labels[i])
            hist_qs[i].append(qs[i])
    return Trajectory(tuple(tuple(s) for s in hist_states),
                      tuple(tuple(l) for l in hist_labels),
                      tuple(tuple(q) for q in hist_qs),
                      tuple(actions), len(actions))


def _observation(net, i, states, qs, q_next):
    preds = net.predecessors[i]
    return Observation(
        component=i,
        local_state=states[i],
        own_q=qs[i],
        pred_q=tuple(qs[j] for j in preds),
        pred_q_next=tuple(q_next[j] for j in preds),
        joint_states=tuple(states),
        joint_q=tuple(qs),
    )


def dump_trajectories(trajectories, path):
    """Line-delimited trajectory records for offline inspection."""
    with open(path, "w") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_json(), sort_keys=True) + "\n")
