"""Seeded random two-component instances for property sweeps and fuzzing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .automata import Dfa
from .games import MarkovGame, MdpNetwork

LETTERS = "abcdefgh"


@dataclass(frozen=True)
class InstanceSpec:
    """Size envelope for a generated instance; every draw stays within it."""
    states: int = 3
    actions: int = 2
    labels: int = 2
    dfa_states: int = 3
    topology: str = "feedback"   # feedback | oneway | independent
    density: float = 0.9
    sink_prob: float = 0.5

    def validate(self):
        if self.states < 1 or self.actions < 1 or self.labels < 1 \
                or self.dfa_states < 1:
            raise ValueError("sizes must be positive")
        if self.labels > len(LETTERS):
            raise ValueError(f"at most {len(LETTERS)} labels supported")
        if self.topology not in ("feedback", "oneway", "independent"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")


def _random_dfa(rng, spec, alphabet):
    n = int(rng.integers(1, spec.dfa_states + 1))
    add_sink = bool(rng.random() < spec.sink_prob)
    total = n + int(add_sink)
    sink = n if add_sink else None
    accepting = set()
    while not accepting:
        accepting = {int(q) for q in range(n) if rng.random() < 0.4}
        if not accepting:
            accepting = {int(rng.integers(n))}
    table = []
    for q in range(n):
        row = []
        for _ in alphabet:
            if q in accepting:
                row.append(int(rng.choice(sorted(accepting))))
            elif add_sink and rng.random() < 0.25:
                row.append(sink)
            else:
                row.append(int(rng.integers(n)))
        table.append(row)
    if add_sink:
        table.append([sink] * len(alphabet))
    return Dfa(total, 0, accepting, alphabet, table,
               rejecting=(sink,) if add_sink else ())


def _random_component(rng, spec, n_states, n_actions, alphabet, pred_sizes):
    labels = [alphabet[int(rng.integers(len(alphabet)))] for _ in range(n_states)]
    env_space = [range(k) for k in pred_sizes]
    transitions = {}
    envs = [()]
    if pred_sizes:
        envs = [tuple(e) for e in np.ndindex(*pred_sizes)]
    for s in range(n_states):
        for env in envs:
            for a in range(n_actions):
                if a > 0 and rng.random() > spec.density:
                    continue
                support_size = int(rng.integers(1, n_states + 1))
                support = rng.choice(n_states, size=support_size, replace=False)
                weights = rng.random(support_size) + 1e-3
                weights /= weights.sum()
                transitions[(s, a, env)] = tuple(
                    (int(t), float(w)) for t, w in zip(sorted(support), weights))
    return MarkovGame(n_states, 0, n_actions, labels, alphabet,
                      transitions=transitions)


def generate_random_instance(spec: InstanceSpec, seed: int):
    """A valid two-component network with random sparse rows, random labels,
    and random specification automata with absorbing acceptance."""
    spec.validate()
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(2, spec.states + 1)) for _ in range(2)]
    n_actions = [int(rng.integers(1, spec.actions + 1)) for _ in range(2)]
    alphabets = [tuple(LETTERS[:int(rng.integers(1, spec.labels + 1))])
                 for _ in range(2)]
    if spec.topology == "feedback":
        preds = [(1,), (0,)]
    elif spec.topology == "oneway":
        preds = [(), (0,)]
    else:
        preds = [(), ()]
    comps = []
    for i in range(2):
        pred_sizes = tuple(sizes[j] for j in preds[i])
        comps.append(_random_component(rng, spec, sizes[i], n_actions[i],
                                       alphabets[i], pred_sizes))
    dfas = [_random_dfa(rng, spec, alphabets[i]) for i in range(2)]
    return MdpNetwork(comps, preds), dfas
