"""Tabular minimax-Q learning on compiled games, plus the independent
Q-learning baseline that treats other agents as part of the environment.

Learners follow the scikit-learn estimator convention: hyperparameters in
the constructor, ``fit`` producing trailing-underscore attributes, and
``get_params``/``set_params`` for composition with the wider ecosystem.
Training is a deterministic function of the game structure and the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .contracts import MAX_PLAYER, MIN_PLAYER, TurnBasedGame
from .games import LIMITED, NONE, MdpNetwork, Policy

DEFAULT_SNAPSHOT_INTERVAL = 100_000


def learning_rate(count: int, scale: float, exponent: float) -> float:
    """Per-visit schedule ``scale / (1 + count) ** exponent``.

    Exponents in (0.5, 1] make the schedule square-summable but not
    summable, which stochastic approximation requires for convergence.
    """
    return scale / (1.0 + count) ** exponent


def _validate_schedule(lr_scale, lr_exponent, epsilon_start, epsilon_final,
                       epsilon_fraction, discount, episodes):
    if episodes < 1:
        raise ValueError("episodes must be positive")
    if not 0.5 < lr_exponent <= 1.0:
        raise ValueError("lr_exponent must lie in (0.5, 1] for convergence")
    if lr_scale <= 0:
        raise ValueError("lr_scale must be positive")
    if not (0.0 <= epsilon_final <= epsilon_start <= 1.0):
        raise ValueError("need 0 <= epsilon_final <= epsilon_start <= 1")
    if not 0.0 < epsilon_fraction <= 1.0:
        raise ValueError("epsilon_fraction must lie in (0, 1]")
    if discount is not None and not 0.0 <= discount <= 1.0:
        raise ValueError("discount must lie in [0, 1]")


def minimax_q_update(game: TurnBasedGame, q_values, visit_counts,
                     s, slot, reward, s_next, discount,
                     lr_scale=1.0, lr_exponent=0.8) -> float:
    """One temporal-difference backup of the zero-sum fixpoint.

    The continuation optimizes over the next state's moves with the operator
    owned by that state: max at maximizer states, min at minimizer states,
    zero at terminals.  Returns the learning rate that was applied.
    """
    alpha = learning_rate(visit_counts[slot], lr_scale, lr_exponent)
    visit_counts[slot] += 1
    if game.is_terminal(s_next):
        cont = 0.0
    else:
        lo, hi = int(game.action_offsets[s_next]), int(game.action_offsets[s_next + 1])
        row = q_values[lo:hi]
        cont = float(np.max(row) if game.owner[s_next] == MAX_PLAYER else np.min(row))
    q_values[slot] += alpha * (reward + discount * cont - q_values[slot])
    return alpha


@dataclass
class TrainReport:
    """Training summary; an unvisited reachable maximizer state is surfaced
    as a warning, not a failure."""
    episodes: int
    steps: int
    visited_max_states: int
    reachable_max_states: int
    unvisited_warning: bool
    final_epsilon: float

    def to_json(self) -> dict:
        return {
            "episodes": self.episodes,
            "steps": self.steps,
            "visited_max_states": self.visited_max_states,
            "reachable_max_states": self.reachable_max_states,
            "unvisited_warning": self.unvisited_warning,
            "final_epsilon": self.final_epsilon,
        }


def extract_policy(game: TurnBasedGame, q_values) -> Policy:
    """Greedy maximizer policy mapped back to contract observations.

    Maximizer states of contract games carry ``(s, q, qj, qj_next)``; the
    returned table is keyed accordingly (``(s, q)`` for games without
    environment phases).  Ties break to the lowest-index move.  Abstraction
    -tracked games key on the abstract neighbor state as well.
    """
    table = {}
    obs_class = LIMITED
    for sid in range(game.n_states):
        if game.owner[sid] != MAX_PLAYER or game.is_terminal(sid):
            continue
        lo, hi = int(game.action_offsets[sid]), int(game.action_offsets[sid + 1])
        best = lo + int(np.argmax(q_values[lo:hi]))
        action = game.move_payloads[best][1]
        payload = game.payloads[sid]
        if payload[0] == "ca":
            _, s, q, qj, kprev, qj_next = payload
            key = (s, q, qj, qj_next) if kprev is None else (s, q, qj, qj_next, kprev)
            table[key] = action
        elif payload[0] == "s" and len(payload) == 3:
            obs_class = NONE
            table[(payload[1], payload[2])] = action
        else:
            table[payload] = action
    return Policy(obs_class, table, fallback_to_enabled=True)


class MinimaxQLearner(BaseEstimator):
    """Minimax-Q learning with epsilon-greedy self-play on one shared table.

    Both players act from the same zero-sum Q-table: the maximizer greedily
    maximizes, the minimizer greedily minimizes, and each explores with the
    current epsilon.  The learning rate follows a per-visit Robbins-Monro
    schedule; epsilon decays linearly from ``epsilon_start`` to
    ``epsilon_final`` over the first ``epsilon_fraction`` of episodes.

    Attributes after ``fit``: ``q_values_``, ``visit_counts_``,
    ``state_policy_`` (greedy move slot per state), ``policy_`` (contract
    observation keys), ``snapshots_`` (``(step, policy)`` pairs when a
    snapshot interval is set), and ``report_``.
    """

    def __init__(self, episodes=2000, discount=None, lr_scale=1.0,
                 lr_exponent=0.8, epsilon_start=1.0, epsilon_final=0.05,
                 epsilon_fraction=0.8, max_episode_length=None,
                 snapshot_interval=None, seed=0):
        self.episodes = episodes
        self.discount = discount
        self.lr_scale = lr_scale
        self.lr_exponent = lr_exponent
        self.epsilon_start = epsilon_start
        self.epsilon_final = epsilon_final
        self.epsilon_fraction = epsilon_fraction
        self.max_episode_length = max_episode_length
        self.snapshot_interval = snapshot_interval
        self.seed = seed

    def _epsilon(self, episode):
        cutoff = self.epsilon_fraction * self.episodes
        if episode >= cutoff:
            return self.epsilon_final
        frac = episode / cutoff
        return self.epsilon_start + frac * (self.epsilon_final - self.epsilon_start)

    def fit(self, game: TurnBasedGame, y=None):
        if not isinstance(game, TurnBasedGame):
            raise ValueError("fit expects a compiled turn-based game")
        _validate_schedule(self.lr_scale, self.lr_exponent, self.epsilon_start,
                           self.epsilon_final, self.epsilon_fraction,
                           self.discount, self.episodes)
        gamma = game.discount if self.discount is None else float(self.discount)
        max_len = self.max_episode_length or 250
        rng = np.random.default_rng(self.seed)
        q = np.zeros(game.n_slots)
        counts = np.zeros(game.n_slots, dtype=np.int64)
        offsets = game.action_offsets.tolist()
        owner = game.owner.tolist()
        terminal = (game.accepting | game.dead).tolist()
        visited = np.zeros(game.n_states, dtype=bool)
        snapshots = []
        step = 0
        next_snap = 0 if self.snapshot_interval else None
        for episode in range(self.episodes):
            eps = self._epsilon(episode)
            s = game.initial
            for _ in range(max_len):
                if terminal[s]:
                    break
                if next_snap is not None and step >= next_snap:
                    snapshots.append((step, extract_policy(game, q.copy())))
                    next_snap += self.snapshot_interval
                visited[s] = True
                lo, hi = offsets[s], offsets[s + 1]
                if rng.random() < eps:
                    slot = lo + int(rng.integers(hi - lo))
                elif owner[s] == MAX_PLAYER:
                    slot = lo + int(np.argmax(q[lo:hi]))
                else:
                    slot = lo + int(np.argmin(q[lo:hi]))
                s_next, reward, done = game.step(s, slot, rng)
                minimax_q_update(game, q, counts, s, slot, reward, s_next,
                                 gamma, self.lr_scale, self.lr_exponent)
                step += 1
                s = s_next
        if next_snap is not None:
            snapshots.append((step, extract_policy(game, q.copy())))
        self.game_ = game
        self.q_values_ = q
        self.visit_counts_ = counts
        self.state_policy_ = self._greedy_slots(game, q)
        self.policy_ = extract_policy(game, q)
        self.snapshots_ = snapshots
        reachable = game.reachable_states()
        max_mask = (game.owner == MAX_PLAYER) & ~(game.accepting | game.dead)
        reach_max = reachable & max_mask
        self.report_ = TrainReport(
            episodes=self.episodes, steps=step,
            visited_max_states=int((visited & max_mask).sum()),
            reachable_max_states=int(reach_max.sum()),
            unvisited_warning=bool((reach_max & ~visited).any()),
            final_epsilon=self._epsilon(self.episodes - 1),
        )
        return self

    @staticmethod
    def _greedy_slots(game, q):
        best = np.full(game.n_states, -1, dtype=np.int64)
        for s in range(game.n_states):
            lo, hi = int(game.action_offsets[s]), int(game.action_offsets[s + 1])
            if lo == hi:
                continue
            if game.owner[s] == MAX_PLAYER:
                best[s] = lo + int(np.argmax(q[lo:hi]))
            else:
                best[s] = lo + int(np.argmin(q[lo:hi]))
        return best

    def predict(self, states):
        """Greedy move index (within each state's move list) per state."""
        if not hasattr(self, "state_policy_"):
            raise ValueError("learner is not fitted")
        states = np.asarray(states, dtype=np.int64)
        slots = self.state_policy_[states]
        return slots - self.game_.action_offsets[states]


def train(game: TurnBasedGame, **params) -> MinimaxQLearner:
    """Fit a fresh learner on a compiled game; convenience wrapper."""
    return MinimaxQLearner(**params).fit(game)


class IndependentQLearner(BaseEstimator):
    """Independent Q-learning: every component learns on the live network.

    Each agent runs classical Q-learning over its limited-communication
    observation with the other agents evolving in the loop, which makes the
    environment non-stationary; there is no convergence guarantee and the
    method serves as a comparison baseline.  An agent's reward is one when
    its own automaton first accepts.
    """

    def __init__(self, episodes=2000, discount=0.99, lr_scale=1.0,
                 lr_exponent=0.8, epsilon_start=1.0, epsilon_final=0.05,
                 epsilon_fraction=0.8, max_episode_length=100, seed=0):
        self.episodes = episodes
        self.discount = discount
        self.lr_scale = lr_scale
        self.lr_exponent = lr_exponent
        self.epsilon_start = epsilon_start
        self.epsilon_final = epsilon_final
        self.epsilon_fraction = epsilon_fraction
        self.max_episode_length = max_episode_length
        self.seed = seed

    def _epsilon(self, episode):
        cutoff = self.epsilon_fraction * self.episodes
        if episode >= cutoff:
            return self.epsilon_final
        frac = episode / cutoff
        return self.epsilon_start + frac * (self.epsilon_final - self.epsilon_start)

    def fit(self, net: MdpNetwork, dfas, y=None):
        _validate_schedule(self.lr_scale, self.lr_exponent, self.epsilon_start,
                           self.epsilon_final, self.epsilon_fraction,
                           self.discount, self.episodes)
        if len(dfas) != net.n_components:
            raise ValueError("need one automaton per component")
        rng = np.random.default_rng(self.seed)
        k = net.n_components
        q_tables = [dict() for _ in range(k)]
        v_counts = [dict() for _ in range(k)]
        steps = 0
        for episode in range(self.episodes):
            eps = self._epsilon(episode)
            states = [g.initial for g in net.components]
            qs = [d.initial for d in dfas]
            accepted = [False] * k
            for _ in range(self.max_episode_length):
                labels = [net.components[i].label(states[i]) for i in range(k)]
                q_next = [dfas[i].step(qs[i], labels[i]) for i in range(k)]
                envs = [net.env_tuple(i, states) for i in range(k)]
                keys = [self._key(net, i, states, qs, q_next) for i in range(k)]
                actions = []
                for i in range(k):
                    enabled = net.components[i].enabled_actions(states[i], envs[i])
                    row = q_tables[i].setdefault(
                        keys[i], np.zeros(net.components[i].n_actions))
                    if rng.random() < eps:
                        a = int(enabled[rng.integers(len(enabled))])
                    else:
                        a = max(enabled, key=lambda x: (row[x], -x))
                    actions.append(a)
                next_states = [net.components[i].sample_step(
                    states[i], actions[i], envs[i], rng) for i in range(k)]
                later_q = [dfas[j].step(q_next[j],
                                        net.components[j].label(next_states[j]))
                           for j in range(k)]
                next_keys = [self._key(net, i, next_states, q_next, later_q)
                             for i in range(k)]
                for i in range(k):
                    reward = 0.0
                    if not accepted[i] and q_next[i] in dfas[i].accepting:
                        reward = 1.0
                        accepted[i] = True
                    done = q_next[i] in dfas[i].accepting or \
                        q_next[i] in dfas[i].rejecting
                    row = q_tables[i][keys[i]]
                    cnt = v_counts[i].setdefault(
                        keys[i], np.zeros(net.components[i].n_actions, dtype=np.int64))
                    alpha = learning_rate(cnt[actions[i]], self.lr_scale,
                                          self.lr_exponent)
                    cnt[actions[i]] += 1
                    if done:
                        cont = 0.0
                    else:
                        nrow = q_tables[i].setdefault(
                            next_keys[i], np.zeros(net.components[i].n_actions))
                        cont = float(np.max(nrow))
                    row[actions[i]] += alpha * (reward + self.discount * cont
                                                - row[actions[i]])
                steps += 1
                states = next_states
                qs = q_next
                if all(q in d.accepting or q in d.rejecting
                       for q, d in zip(qs, dfas)):
                    break
        self.policies_ = []
        for i in range(k):
            table = {key: int(np.argmax(row)) for key, row in
                     sorted(q_tables[i].items(), key=lambda kv: repr(kv[0]))}
            self.policies_.append(Policy(LIMITED, table,
                                         fallback_to_enabled=True))
        self.q_tables_ = q_tables
        self.steps_ = steps
        return self

    @staticmethod
    def _key(net, i, states, qs, q_next):
        preds = net.predecessors[i]
        return (states[i], qs[i],
                tuple(qs[j] for j in preds),
                tuple(q_next[j] for j in preds))


def independent_q_train(net: MdpNetwork, dfas, **params):
    """Fit the baseline and return one policy per component."""
    return IndependentQLearner(**params).fit(net, dfas).policies_


# -- checkpoints ------------------------------------------------------------------


CHECKPOINT_VERSION = 1


def save_checkpoint(path, learner: MinimaxQLearner):
    """Versioned, reloadable dump of the learned table and policy."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "signature": learner.game_.structural_signature(),
        "q_values": learner.q_values_.tolist(),
        "visit_counts": learner.visit_counts_.tolist(),
        "policy": learner.policy_.to_dict(),
        "report": learner.report_.to_json(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    payload["policy"] = Policy.from_dict(payload["policy"])
    payload["q_values"] = np.asarray(payload["q_values"])
    payload["visit_counts"] = np.asarray(payload["visit_counts"], dtype=np.int64)
    return payload
