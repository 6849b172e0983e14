"""Exact finite-horizon dynamic programming.

Two independent computation paths live here: the direct recursions over a
network's product or local state spaces, and value iteration over compiled
turn-based games.  On small instances the two must agree to numerical
precision, which is the main structural check of the whole toolkit; the
direct recursions also serve as the ground-truth oracle certifying the
multiplicative lower bound that composed policies must achieve.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .automata import Dfa
from .contracts import (MAX_PLAYER, MIN_PLAYER, TurnBasedGame,
                        adversary_moves)
from .games import (FULL, LIMITED, NONE, MdpNetwork, Observation, Policy,
                    UnresolvedPolicyError)

SLACK_TOL = 1e-9


class OracleUnavailableError(RuntimeError):
    """The exact oracle would exceed its configured state cap."""


# -- value iteration on compiled games -----------------------------------------------


def _segments(game: TurnBasedGame):
    nonterm = np.flatnonzero(~(game.accepting | game.dead))
    starts = game.action_offsets[nonterm]
    edge_seg = np.repeat(np.arange(game.n_slots),
                         np.diff(game.edge_offsets))
    owners = game.owner[nonterm]
    return nonterm, starts, edge_seg, owners


def _slot_values(game, edge_seg, contrib):
    return np.bincount(edge_seg, weights=contrib, minlength=game.n_slots)


def _opt_per_state(q_slots, starts, owners):
    mx = np.maximum.reduceat(q_slots, starts)
    mn = np.minimum.reduceat(q_slots, starts)
    return np.where(owners == MAX_PLAYER, mx, mn)


def finite_horizon_game_values(game: TurnBasedGame, plies: int) -> np.ndarray:
    """Optimal probability of reaching acceptance within ``plies`` moves.

    Accepting states have value one at every horizon, dead states zero.
    """
    if plies < 0:
        raise ValueError("plies must be nonnegative")
    V = game.accepting.astype(float)
    nonterm, starts, edge_seg, owners = _segments(game)
    if len(nonterm) == 0:
        return V
    for _ in range(plies):
        contrib = game.edge_prob * V[game.edge_next]
        q_slots = _slot_values(game, edge_seg, contrib)
        newV = game.accepting.astype(float)
        newV[nonterm] = _opt_per_state(q_slots, starts, owners)
        V = newV
    return V


def finite_horizon_round_values(game: TurnBasedGame, rounds: int) -> np.ndarray:
    """Finite-horizon values counted in whole decision rounds."""
    return finite_horizon_game_values(game, rounds * game.plies_per_round)


def discounted_game_values(game: TurnBasedGame, gamma: Optional[float] = None,
                           tol: float = 1e-12, max_sweeps: int = 200000):
    """Fixpoint state values and move values of the discounted game.

    Rewards are one on entry into acceptance; terminal states carry zero
    continuation value.  Returns ``(V, Q)`` with ``Q`` indexed by move slot.
    """
    g = game.discount if gamma is None else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise ValueError("discount must lie in [0, 1]")
    V = np.zeros(game.n_states)
    nonterm, starts, edge_seg, owners = _segments(game)
    reward_edge = game.accepting[game.edge_next].astype(float)
    if len(nonterm) == 0:
        return V, np.zeros(game.n_slots)
    for _ in range(max_sweeps):
        contrib = game.edge_prob * (reward_edge + g * V[game.edge_next])
        q_slots = _slot_values(game, edge_seg, contrib)
        newV = np.zeros(game.n_states)
        newV[nonterm] = _opt_per_state(q_slots, starts, owners)
        delta = float(np.max(np.abs(newV - V)))
        V = newV
        if delta < tol:
            break
    contrib = game.edge_prob * (reward_edge + g * V[game.edge_next])
    return V, _slot_values(game, edge_seg, contrib)


def greedy_game_policy(game: TurnBasedGame, q_slots: np.ndarray) -> np.ndarray:
    """Per-state best move slot; ties break to the lowest-index move."""
    best = np.full(game.n_states, -1, dtype=np.int64)
    for s in range(game.n_states):
        lo, hi = int(game.action_offsets[s]), int(game.action_offsets[s + 1])
        if lo == hi:
            continue
        row = q_slots[lo:hi]
        if game.owner[s] == MAX_PLAYER:
            best[s] = lo + int(np.argmax(row))
        else:
            best[s] = lo + int(np.argmin(row))
    return best


def certified_policy_value(game: TurnBasedGame, policy, plies: int) -> float:
    """Adversarial value of a fixed maximizer policy at the initial state.

    The maximizer's moves are pinned to the policy (stationary lookup by
    observation key, lowest move as fallback) while the minimizer stays
    free, so the result is a guaranteed lower bound on what this policy
    achieves against any specification-consistent environment.  This is the
    per-component certificate composed into the product bound for trained
    policies, which need not attain the optimal local value.
    """
    from .contracts import policy_key_of_payload

    fixed = np.full(game.n_states, -1, dtype=np.int64)
    for s in range(game.n_states):
        if game.owner[s] != MAX_PLAYER or game.is_terminal(s):
            continue
        lo, hi = int(game.action_offsets[s]), int(game.action_offsets[s + 1])
        slot = lo
        key = policy_key_of_payload(game.payloads[s])
        if key is not None and policy is not None:
            table = policy.tables if policy.horizon is None else \
                policy.tables[max(policy.tables)]
            action = table.get(key)
            if action is not None:
                for cand in range(lo, hi):
                    if game.move_payloads[cand] == ("act", action):
                        slot = cand
                        break
        fixed[s] = slot
    V = game.accepting.astype(float)
    nonterm, starts, edge_seg, owners = _segments(game)
    if len(nonterm) == 0:
        return float(V[game.initial])
    pinned = np.flatnonzero(fixed >= 0)
    for _ in range(plies):
        contrib = game.edge_prob * V[game.edge_next]
        q_slots = _slot_values(game, edge_seg, contrib)
        newV = game.accepting.astype(float)
        newV[nonterm] = _opt_per_state(q_slots, starts, owners)
        newV[pinned] = q_slots[fixed[pinned]]
        V = newV
    return float(V[game.initial])


# -- local contract recursion ---------------------------------------------------------


@dataclass
class LocalDpResult:
    """Adversarial local satisfaction values and the maximizing policy.

    ``values[n]`` maps ``(s, q, qj)`` (or ``(s, q)`` for components without
    predecessors) to the horizon-``n`` value.  The policy is
    horizon-indexed by steps to go.
    """
    component: int
    mode: str
    horizon: int
    predecessors: tuple
    values: list
    policy: Policy
    initial_key: tuple

    def value_at_initial(self, n: Optional[int] = None) -> float:
        n = self.horizon if n is None else n
        return self.values[n][self.initial_key]


def local_value_iteration(net: MdpNetwork, i: int, dfas: Sequence[Dfa],
                          horizon: int, mode: str = LIMITED,
                          cap: int = 500_000) -> LocalDpResult:
    """Exact local recursion: worst-case label commitment, best action,
    worst-case consistent neighbor state, then the component's own chance
    move.

    The value is one as soon as the component's automaton and all its
    predecessors' automata accept, zero while the component's automaton is
    in a rejecting state at horizon zero, and otherwise follows the
    alternating recursion.  ``mode`` widens the adversary to the full label
    alphabet and state space when set to ``"none"``.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if mode not in (LIMITED, NONE):
        raise ValueError(f"unknown mode {mode!r}")
    game = net.components[i]
    own = dfas[i]
    preds = net.predecessors[i]
    qj_spaces = [range(dfas[j].n_states) for j in preds]
    total = game.n_states * own.n_states * int(np.prod([len(r) for r in qj_spaces] or [1]))
    if total > cap:
        raise OracleUnavailableError(
            f"local recursion needs {total} entries, cap is {cap}")

    keys = []
    for s in range(game.n_states):
        for q in range(own.n_states):
            if preds:
                for qj in itertools.product(*qj_spaces):
                    keys.append((s, q, qj))
            else:
                keys.append((s, q))

    def is_accepting(key):
        if preds:
            s, q, qj = key
            return q in own.accepting and all(
                qj[m] in dfas[j].accepting for m, j in enumerate(preds))
        return key[1] in own.accepting

    v0 = {key: (1.0 if is_accepting(key) else 0.0) for key in keys}
    values = [v0]
    policy_tables = {0: {}}
    cache: dict = {}
    for n in range(horizon):
        prev = values[-1]
        cur = {}
        table = {}
        for key in keys:
            if is_accepting(key):
                cur[key] = 1.0
                continue
            if preds:
                s, q, qj = key
            else:
                s, q = key
            if q in own.rejecting:
                cur[key] = 0.0
                continue
            q_next = own.step(q, game.label(s))
            if not preds:
                best_v, best_a = None, None
                for a in game.enabled_actions(s, ()):
                    ev = sum(p * prev[(s2, q_next)]
                             for (s2, p) in game.distribution(s, a, ()))
                    if best_v is None or ev > best_v:
                        best_v, best_a = ev, a
                cur[key] = best_v
                table[(s, q)] = best_a
                continue
            moves = adversary_moves(net, i, dfas, qj, mode, _cache=cache)
            if not moves:
                cur[key] = 0.0
                continue
            outer = None
            for qj_next, refinements in moves:
                legal = _legal(game, s, refinements)
                if not legal:
                    group_v = 0.0
                else:
                    best_v, best_a = None, None
                    for a in legal:
                        inner = None
                        for env, _ in refinements:
                            ev = sum(p * prev[(s2, q_next, qj_next)]
                                     for (s2, p) in game.distribution(s, a, env))
                            if inner is None or ev < inner:
                                inner = ev
                        if best_v is None or inner > best_v:
                            best_v, best_a = inner, a
                    group_v = best_v
                    table[(s, q, qj, qj_next)] = best_a
                if outer is None or group_v < outer:
                    outer = group_v
            cur[key] = outer
        values.append(cur)
        policy_tables[n + 1] = table

    if preds and mode == NONE:
        policy = _project_none_policy(values, policy_tables, horizon)
    elif preds:
        policy = Policy(LIMITED, policy_tables, horizon=horizon,
                        fallback_to_enabled=True)
    else:
        policy = Policy(NONE, policy_tables, horizon=horizon,
                        fallback_to_enabled=True)
    init_key = ((game.initial, own.initial,
                 tuple(dfas[j].initial for j in preds)) if preds
                else (game.initial, own.initial))
    return LocalDpResult(i, mode, horizon, preds, values, policy, init_key)


def _legal(game, s, refinements):
    if game.all_actions_enabled:
        return tuple(range(game.n_actions))
    return tuple(a for a in range(game.n_actions)
                 if all(game.distribution(s, a, env) is not None
                        for env, _ in refinements))


def _project_none_policy(values, policy_tables, horizon):
    """Collapse limited-key tables onto ``(s, q)`` by worst-case neighbor.

    The no-communication construction still tracks neighbor automaton
    states for its value bookkeeping, but the surfaced policy may read only
    the local state and automaton; we pick the action stored at the
    neighbor configuration with the lowest value, breaking ties on the key.
    """
    projected = {0: {}}
    for h in range(1, horizon + 1):
        worst: dict = {}
        for (s, q, qj, qj_next), a in sorted(policy_tables[h].items(),
                                             key=lambda kv: repr(kv[0])):
            val = values[h].get((s, q, qj), 1.0)
            cur = worst.get((s, q))
            if cur is None or val < cur[0]:
                worst[(s, q)] = (val, a)
        projected[h] = {k: v[1] for k, v in worst.items()}
    return Policy(NONE, projected, horizon=horizon, fallback_to_enabled=True)


# -- global product recursion ---------------------------------------------------------


@dataclass
class GlobalDpResult:
    """Exact values of the two-component product system.

    ``values[n]`` maps ``(s1, s2, q1, q2)`` to the horizon-``n`` probability
    of the conjunction under optimal centralized play (or under the fixed
    policy pair, when one was supplied).
    """
    horizon: int
    values: list
    policies: Optional[tuple]
    initial_key: tuple

    def value_at_initial(self, n: Optional[int] = None) -> float:
        n = self.horizon if n is None else n
        return self.values[n][self.initial_key]


def _check_two_component(net: MdpNetwork):
    if net.n_components != 2:
        raise OracleUnavailableError("the global oracle handles exactly two components")
    for i in range(2):
        if net.predecessors[i] not in ((), (1 - i,)):
            raise OracleUnavailableError(
                "the global oracle handles direct two-component wiring only")


def global_value_iteration(net: MdpNetwork, dfas: Sequence[Dfa], horizon: int,
                           policies: Optional[Sequence] = None,
                           extract: bool = False,
                           cap: int = 1_000_000) -> GlobalDpResult:
    """Exact product recursion for a two-component network.

    Without ``policies`` the expectation is maximized over enabled joint
    actions (the centralized optimum); with a fixed policy pair it evaluates
    that pair.  Policy lookups that fall outside a policy's stored table use
    the policy's declared fallback; absent one, the lookup error surfaces.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    _check_two_component(net)
    g1, g2 = net.components
    d1, d2 = dfas
    total = g1.n_states * g2.n_states * d1.n_states * d2.n_states
    if total > cap:
        raise OracleUnavailableError(f"product needs {total} states, cap is {cap}")

    keys = [(s1, s2, q1, q2)
            for s1 in range(g1.n_states) for s2 in range(g2.n_states)
            for q1 in range(d1.n_states) for q2 in range(d2.n_states)]

    def accepting(key):
        return key[2] in d1.accepting and key[3] in d2.accepting

    env1 = (lambda s2: (s2,)) if net.predecessors[0] else (lambda s2: ())
    env2 = (lambda s1: (s1,)) if net.predecessors[1] else (lambda s1: ())

    values = [{key: (1.0 if accepting(key) else 0.0) for key in keys}]
    extracted = {0: ({}, {})} if extract else None
    for n in range(horizon):
        prev = values[-1]
        cur = {}
        tables = ({}, {}) if extract else None
        for key in keys:
            if accepting(key):
                cur[key] = 1.0
                continue
            s1, s2, q1, q2 = key
            q1n = d1.step(q1, g1.label(s1))
            q2n = d2.step(q2, g2.label(s2))
            e1, e2 = env1(s2), env2(s1)
            if policies is not None:
                a1 = _policy_action(policies[0], net, 0, key, (q1n, q2n),
                                    horizon_to_go=n + 1,
                                    enabled=g1.enabled_actions(s1, e1))
                a2 = _policy_action(policies[1], net, 1, key, (q1n, q2n),
                                    horizon_to_go=n + 1,
                                    enabled=g2.enabled_actions(s2, e2))
                pairs = [(a1, a2)]
            else:
                pairs = [(a1, a2) for a1 in g1.enabled_actions(s1, e1)
                         for a2 in g2.enabled_actions(s2, e2)]
            best, best_pair = None, None
            for (a1, a2) in pairs:
                row1 = g1.distribution(s1, a1, e1)
                row2 = g2.distribution(s2, a2, e2)
                if row1 is None or row2 is None:
                    raise UnresolvedPolicyError(
                        f"action pair ({a1}, {a2}) disabled at {key}")
                ev = 0.0
                for (t1, p1) in row1:
                    for (t2, p2) in row2:
                        ev += p1 * p2 * prev[(t1, t2, q1n, q2n)]
                if best is None or ev > best:
                    best, best_pair = ev, (a1, a2)
            cur[key] = best
            if extract:
                tables[0][((s1, s2), (q1, q2))] = best_pair[0]
                tables[1][((s1, s2), (q1, q2))] = best_pair[1]
        values.append(cur)
        if extract:
            extracted[n + 1] = tables
    pols = None
    if extract:
        pols = (Policy(FULL, {h: t[0] for h, t in extracted.items()}, horizon=horizon),
                Policy(FULL, {h: t[1] for h, t in extracted.items()}, horizon=horizon))
    init = (g1.initial, g2.initial, d1.initial, d2.initial)
    return GlobalDpResult(horizon, values, pols, init)


def _policy_action(policy, net, i, key, q_next, horizon_to_go, enabled):
    s1, s2, q1, q2 = key
    obs = Observation(
        component=i,
        local_state=key[i],
        own_q=key[2 + i],
        pred_q=tuple(key[2 + j] for j in net.predecessors[i]),
        pred_q_next=tuple(q_next[j] for j in net.predecessors[i]),
        joint_states=(s1, s2),
        joint_q=(q1, q2),
    )
    try:
        return policy.action(obs, steps_remaining=horizon_to_go)
    except UnresolvedPolicyError:
        if not getattr(policy, "fallback_to_enabled", False):
            raise
        return enabled[0]


# -- the lower-bound certificate -------------------------------------------------------


@dataclass
class BoundReport:
    """Pointwise audit of the multiplicative lower bound.

    ``min_slack`` is the smallest value of global minus product-of-local
    over all joint states and horizons; the bound is certified when it is
    no smaller than ``-1e-9``.  ``composed_value`` is the exact evaluation
    of the pair of extracted local policies on the product system.
    """
    horizon: int
    oracle_available: bool
    min_slack: Optional[float]
    min_slack_state: Optional[tuple]
    global_initial: Optional[list]
    local_product_initial: list
    local_initial: list
    composed_value: Optional[float]
    composed_ok: Optional[bool]
    bound_ok: Optional[bool]
    product_states: int
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "oracle_available": self.oracle_available,
            "min_slack": self.min_slack,
            "min_slack_state": list(self.min_slack_state) if self.min_slack_state else None,
            "global_initial": self.global_initial,
            "local_product_initial": self.local_product_initial,
            "local_initial": self.local_initial,
            "composed_value": self.composed_value,
            "composed_ok": self.composed_ok,
            "bound_ok": self.bound_ok,
            "product_states": self.product_states,
            "detail": self.detail,
        }


def verify_lower_bound(net: MdpNetwork, dfas: Sequence[Dfa], horizon: int,
                       state_cap: int = 1_000_000) -> BoundReport:
    """Certify the product-of-locals lower bound on a two-component network.

    Computes the global and local recursions at every horizon up to
    ``horizon``, reports the minimum slack of global minus local product
    over every joint state, and exactly evaluates the composed extracted
    policies to confirm they generate at least the certified bound.  When
    the product exceeds ``state_cap`` the report carries the local side
    only.
    """
    local1 = local_value_iteration(net, 0, dfas, horizon)
    local2 = local_value_iteration(net, 1, dfas, horizon)
    locals_ = (local1, local2)
    local_initial = [[res.value_at_initial(n) for n in range(horizon + 1)]
                     for res in locals_]
    product_initial = [local_initial[0][n] * local_initial[1][n]
                       for n in range(horizon + 1)]
    g1, g2 = net.components
    d1, d2 = dfas
    product_states = g1.n_states * g2.n_states * d1.n_states * d2.n_states
    try:
        glob = global_value_iteration(net, dfas, horizon, cap=state_cap)
    except OracleUnavailableError as exc:
        return BoundReport(horizon, False, None, None, None,
                           product_initial, local_initial, None, None, None,
                           product_states, detail=str(exc))

    def local_value(res, n, s, q_own, q_other):
        if res.predecessors:
            return res.values[n][(s, q_own, (q_other,))]
        return res.values[n][(s, q_own)]

    min_slack, min_state = None, None
    for n in range(horizon + 1):
        for key, v in glob.values[n].items():
            s1, s2, q1, q2 = key
            prod = (local_value(local1, n, s1, q1, q2) *
                    local_value(local2, n, s2, q2, q1))
            slack = v - prod
            if min_slack is None or slack < min_slack:
                min_slack, min_state = slack, (n,) + key
    composed = global_value_iteration(net, dfas, horizon,
                                      policies=(local1.policy, local2.policy),
                                      cap=state_cap)
    composed_value = composed.value_at_initial()
    composed_ok = composed_value >= product_initial[horizon] - SLACK_TOL
    return BoundReport(horizon, True, min_slack, min_state,
                       [glob.values[n][glob.initial_key] for n in range(horizon + 1)],
                       product_initial, local_initial,
                       composed_value, composed_ok,
                       min_slack >= -SLACK_TOL, product_states)
