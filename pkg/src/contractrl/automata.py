"""Deterministic finite automata, Kripke structures, and bounded temporal formulas.

Specifications are regular languages over finite label sequences.  A run is
accepting as soon as it visits an accepting state (accepting states are
absorbing), so acceptance of a finite trace is existential over the visited
automaton states, including the initial state before any label is consumed.

Partial transition tables are totalized with an explicit rejecting sink.
Rejecting states are absorbing dead ends; the set of labels that keep an
automaton out of them (``live_labels``) is what adversarial constructions
downstream treat as the one-step-consistent label set.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

REJECT_SINK_NAME = "__reject__"


class Dfa:
    """Complete deterministic finite automaton over an indexed alphabet.

    Parameters
    ----------
    n_states : number of states, indexed 0..n_states-1.
    initial : initial state index.
    accepting : indices of accepting states; must be absorbing.
    alphabet : sequence of distinct hashable labels.
    table : ``table[q][k]`` is the successor of state ``q`` under the
        label with index ``k``; must be complete.
    rejecting : indices of designated dead states (absorbing, never
        accepting).  May be empty, in which case every label is live
        everywhere.
    state_names : optional hashable names carried through products and
        trimming; defaults to the state indices.
    """

    def __init__(self, n_states, initial, accepting, alphabet, table,
                 rejecting=(), state_names=None):
        self.n_states = int(n_states)
        self.initial = int(initial)
        self.accepting = frozenset(int(q) for q in accepting)
        self.alphabet = tuple(alphabet)
        self.label_index = {lab: i for i, lab in enumerate(self.alphabet)}
        self.table = tuple(tuple(int(x) for x in row) for row in table)
        self.rejecting = frozenset(int(q) for q in rejecting)
        if state_names is None:
            self.state_names = tuple(range(self.n_states))
        else:
            self.state_names = tuple(state_names)
        self._validate()

    def _validate(self):
        if self.n_states < 1:
            raise ValueError("automaton needs at least one state")
        if not self.alphabet:
            raise ValueError("alphabet must be nonempty")
        if len(self.label_index) != len(self.alphabet):
            raise ValueError("alphabet labels must be distinct")
        if not 0 <= self.initial < self.n_states:
            raise ValueError(f"initial state {self.initial} out of range")
        if len(self.state_names) != self.n_states:
            raise ValueError("state_names length mismatch")
        for q in self.accepting | self.rejecting:
            if not 0 <= q < self.n_states:
                raise ValueError(f"state {q} out of range")
        if self.accepting & self.rejecting:
            raise ValueError("accepting and rejecting states must be disjoint")
        if len(self.table) != self.n_states:
            raise ValueError("transition table must cover every state")
        for q, row in enumerate(self.table):
            if len(row) != len(self.alphabet):
                raise ValueError(f"state {q}: transition row incomplete")
            for target in row:
                if not 0 <= target < self.n_states:
                    raise ValueError(f"state {q}: successor {target} out of range")
            if q in self.accepting and any(t not in self.accepting for t in row):
                raise ValueError(f"accepting state {q} is not absorbing")
            if q in self.rejecting and any(t not in self.rejecting for t in row):
                raise ValueError(f"rejecting state {q} is not absorbing")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_partial(cls, n_states, initial, accepting, alphabet, transitions,
                     state_names=None):
        """Totalize a partial transition map by adding a rejecting sink.

        ``transitions`` maps ``(q, label)`` to a successor state; undefined
        pairs go to a fresh sink state.  If the map is already total no sink
        is added.
        """
        alphabet = tuple(alphabet)
        missing = [(q, lab) for q in range(n_states) for lab in alphabet
                   if (q, lab) not in transitions]
        names = list(state_names) if state_names is not None else list(range(n_states))
        n_total = n_states
        sink = None
        if missing:
            sink = n_states
            n_total = n_states + 1
            names.append(REJECT_SINK_NAME)
        label_pos = {lab: i for i, lab in enumerate(alphabet)}
        table = [[sink if sink is not None else 0] * len(alphabet) for _ in range(n_total)]
        for q in range(n_states):
            for lab in alphabet:
                tgt = transitions.get((q, lab), sink)
                table[q][label_pos[lab]] = tgt
        if sink is not None:
            table[sink] = [sink] * len(alphabet)
        rejecting = (sink,) if sink is not None else ()
        return cls(n_total, initial, accepting, alphabet, table,
                   rejecting=rejecting, state_names=names)

    # -- basic operations ------------------------------------------------------

    def step(self, q, label):
        """Successor of state ``q`` under a label value."""
        if label not in self.label_index:
            raise ValueError(f"label {label!r} not in alphabet")
        return self.step_index(q, self.label_index[label])

    def step_index(self, q, k):
        if not 0 <= q < self.n_states:
            raise ValueError(f"state {q} out of range")
        if not 0 <= k < len(self.alphabet):
            raise ValueError(f"label index {k} out of range")
        return self.table[q][k]

    def run(self, labels):
        """Visited state sequence on a word, starting at the initial state."""
        states = [self.initial]
        q = self.initial
        for lab in labels:
            q = self.step(q, lab)
            states.append(q)
        return states

    def accepts(self, labels) -> bool:
        return any(q in self.accepting for q in self.run(labels))

    def live_labels(self, q):
        """Labels whose successor from ``q`` is not a rejecting state.

        With no designated rejecting states this is the whole alphabet.
        """
        if not 0 <= q < self.n_states:
            raise ValueError(f"state {q} out of range")
        if not self.rejecting:
            return self.alphabet
        row = self.table[q]
        return tuple(lab for k, lab in enumerate(self.alphabet)
                     if row[k] not in self.rejecting)

    def live_label_indices(self, q):
        if not self.rejecting:
            return tuple(range(len(self.alphabet)))
        row = self.table[q]
        return tuple(k for k in range(len(self.alphabet))
                     if row[k] not in self.rejecting)

    def is_live(self, q) -> bool:
        return q not in self.rejecting

    # -- reshaping -------------------------------------------------------------

    def trim(self) -> "Dfa":
        """Restrict to the states reachable from the initial state."""
        seen = {self.initial}
        frontier = [self.initial]
        while frontier:
            q = frontier.pop()
            for target in self.table[q]:
                if target not in seen:
                    seen.add(target)
                    frontier.append(target)
        order = sorted(seen)
        remap = {q: i for i, q in enumerate(order)}
        table = [[remap[self.table[q][k]] for k in range(len(self.alphabet))]
                 for q in order]
        return Dfa(len(order), remap[self.initial],
                   [remap[q] for q in self.accepting if q in seen],
                   self.alphabet, table,
                   rejecting=[remap[q] for q in self.rejecting if q in seen],
                   state_names=[self.state_names[q] for q in order])

    def collapse_rejecting(self) -> "Dfa":
        """Merge all rejecting states into a single sink."""
        if len(self.rejecting) <= 1:
            return self
        keep = [q for q in range(self.n_states) if q not in self.rejecting]
        remap = {q: i for i, q in enumerate(keep)}
        sink = len(keep)
        for q in self.rejecting:
            remap[q] = sink
        table = [[remap[self.table[q][k]] for k in range(len(self.alphabet))]
                 for q in keep]
        table.append([sink] * len(self.alphabet))
        names = [self.state_names[q] for q in keep] + [REJECT_SINK_NAME]
        return Dfa(sink + 1, remap[self.initial],
                   [remap[q] for q in self.accepting],
                   self.alphabet, table, rejecting=(sink,), state_names=names)

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "initial": self.initial,
            "accepting": sorted(self.accepting),
            "rejecting": sorted(self.rejecting),
            "alphabet": [_label_to_json(lab) for lab in self.alphabet],
            "table": [list(row) for row in self.table],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Dfa":
        return cls(data["n_states"], data["initial"], data["accepting"],
                   [_label_from_json(lab) for lab in data["alphabet"]],
                   data["table"], rejecting=data.get("rejecting", ()))

    def to_text(self) -> str:
        """Plain-text table: header lines plus one ``q label q'`` line per edge.

        Only available for automata whose labels are plain strings without
        whitespace; richer alphabets round-trip through ``to_dict``.
        """
        for lab in self.alphabet:
            if not isinstance(lab, str) or any(c.isspace() for c in lab):
                raise ValueError("text format requires whitespace-free string labels")
        lines = [
            f"states {self.n_states}",
            f"initial {self.initial}",
            "accepting " + " ".join(str(q) for q in sorted(self.accepting)),
            "rejecting " + " ".join(str(q) for q in sorted(self.rejecting)),
            "alphabet " + " ".join(self.alphabet),
        ]
        for q, row in enumerate(self.table):
            for k, target in enumerate(row):
                lines.append(f"{q} {self.alphabet[k]} {target}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Dfa":
        n_states = initial = None
        accepting: list = []
        rejecting: list = []
        alphabet: list = []
        edges = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "states":
                n_states = int(parts[1])
            elif parts[0] == "initial":
                initial = int(parts[1])
            elif parts[0] == "accepting":
                accepting = [int(x) for x in parts[1:]]
            elif parts[0] == "rejecting":
                rejecting = [int(x) for x in parts[1:]]
            elif parts[0] == "alphabet":
                alphabet = list(parts[1:])
            else:
                q, lab, target = parts
                edges[(int(q), lab)] = int(target)
        if n_states is None or initial is None or not alphabet:
            raise ValueError("missing states/initial/alphabet header")
        table = []
        for q in range(n_states):
            row = []
            for lab in alphabet:
                if (q, lab) not in edges:
                    raise ValueError(f"missing transition for state {q}, label {lab}")
                row.append(edges[(q, lab)])
            table.append(row)
        return cls(n_states, initial, accepting, alphabet, table, rejecting=rejecting)

    def __repr__(self):
        return (f"Dfa(n_states={self.n_states}, |alphabet|={len(self.alphabet)}, "
                f"accepting={sorted(self.accepting)}, rejecting={sorted(self.rejecting)})")


def dfa_step(dfa: Dfa, q: int, label) -> int:
    """Successor state of ``q`` under ``label``; total and deterministic."""
    return dfa.step(q, label)


def one_step_labels(dfa: Dfa, q: int):
    """Labels that keep the automaton out of its rejecting states."""
    return dfa.live_labels(q)


def product_many(dfas: Sequence[Dfa]) -> Dfa:
    """Product automaton over the tuple alphabet ``Σ¹ × ... × Σᵏ``.

    A product state accepts iff every coordinate accepts; it is rejecting
    iff any coordinate is.  State names are tuples of coordinate names.
    """
    if not dfas:
        raise ValueError("need at least one automaton")
    state_iter = list(itertools.product(*(range(d.n_states) for d in dfas)))
    index = {combo: i for i, combo in enumerate(state_iter)}
    alphabet = list(itertools.product(*(d.alphabet for d in dfas)))
    table = []
    accepting = []
    rejecting = []
    names = []
    for combo in state_iter:
        row = []
        for labs in alphabet:
            row.append(index[tuple(d.table[q][d.label_index[lab]]
                                   for d, q, lab in zip(dfas, combo, labs))])
        table.append(row)
        if all(q in d.accepting for d, q in zip(dfas, combo)):
            accepting.append(index[combo])
        if any(q in d.rejecting for d, q in zip(dfas, combo)):
            rejecting.append(index[combo])
        names.append(tuple(d.state_names[q] for d, q in zip(dfas, combo)))
    initial = index[tuple(d.initial for d in dfas)]
    return Dfa(len(state_iter), initial, accepting, alphabet, table,
               rejecting=rejecting, state_names=names)


def dfa_product(d1: Dfa, d2: Dfa) -> Dfa:
    """Binary product; the language projects onto each component's language."""
    return product_many([d1, d2])


def dfa_intersection(d1: Dfa, d2: Dfa) -> Dfa:
    """Synchronized product of two automata over the same alphabet."""
    if d1.alphabet != d2.alphabet:
        raise ValueError("intersection requires identical alphabets")
    combos = list(itertools.product(range(d1.n_states), range(d2.n_states)))
    index = {c: i for i, c in enumerate(combos)}
    table = []
    accepting = []
    rejecting = []
    names = []
    for (q1, q2) in combos:
        table.append([index[(d1.table[q1][k], d2.table[q2][k])]
                      for k in range(len(d1.alphabet))])
        if q1 in d1.accepting and q2 in d2.accepting:
            accepting.append(index[(q1, q2)])
        if q1 in d1.rejecting or q2 in d2.rejecting:
            rejecting.append(index[(q1, q2)])
        names.append((d1.state_names[q1], d2.state_names[q2]))
    return Dfa(len(combos), index[(d1.initial, d2.initial)], accepting,
               d1.alphabet, table, rejecting=rejecting, state_names=names)


# -- bounded temporal formulas ---------------------------------------------------


@dataclass(frozen=True)
class Always:
    """Invariance: every label within the horizon satisfies the predicate.

    ``horizon=None`` means unbounded; compiling then requires a horizon cap.
    """
    predicate: frozenset
    horizon: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "predicate", frozenset(self.predicate))
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be at least 1")


@dataclass(frozen=True)
class Eventually:
    """Reachability: some label within the horizon satisfies the predicate."""
    predicate: frozenset
    horizon: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "predicate", frozenset(self.predicate))
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be at least 1")


@dataclass(frozen=True)
class Conjunction:
    operands: tuple

    def __post_init__(self):
        object.__setattr__(self, "operands", tuple(self.operands))
        if len(self.operands) < 2:
            raise ValueError("conjunction needs at least two operands")


BoundedFormula = (Always, Eventually, Conjunction)


def compile_formula(formula, alphabet, horizon_cap: Optional[int] = None) -> Dfa:
    """Compile a bounded temporal formula into a DFA over ``alphabet``.

    Bounded operators unroll into counter states: both invariance and
    reachability over ``n`` steps yield ``n + 2`` states (n counters, an
    accepting sink, a rejecting sink).  Unbounded operators are evaluated
    under finite-run semantics at the caller-supplied ``horizon_cap``.
    """
    alphabet = tuple(alphabet)
    if isinstance(formula, Conjunction):
        parts = [compile_formula(op, alphabet, horizon_cap) for op in formula.operands]
        result = parts[0]
        for part in parts[1:]:
            result = dfa_intersection(result, part)
        return result
    if not isinstance(formula, (Always, Eventually)):
        raise ValueError(f"unsupported formula {formula!r}")
    horizon = formula.horizon
    if horizon is None:
        if horizon_cap is None:
            raise ValueError("unbounded operator requires a horizon cap")
        if horizon_cap < 1:
            raise ValueError("horizon must be at least 1")
        horizon = horizon_cap
    missing = formula.predicate - set(alphabet)
    if missing:
        raise ValueError(f"predicate labels {sorted(map(repr, missing))} not in alphabet")
    n = horizon
    acc, rej = n, n + 1
    label_in = [lab in formula.predicate for lab in alphabet]
    table = []
    for k in range(n):
        if isinstance(formula, Always):
            good = acc if k == n - 1 else k + 1
            table.append([good if label_in[j] else rej for j in range(len(alphabet))])
        else:
            bad = rej if k == n - 1 else k + 1
            table.append([acc if label_in[j] else bad for j in range(len(alphabet))])
    table.append([acc] * len(alphabet))
    table.append([rej] * len(alphabet))
    names = [f"c{k}" for k in range(n)] + ["__accept__", REJECT_SINK_NAME]
    return Dfa(n + 2, 0, [acc], alphabet, table, rejecting=[rej], state_names=names)


# -- Kripke structures -------------------------------------------------------------


class KripkeStructure:
    """Nondeterministic labeled transition system over-approximating a component.

    The transition relation must be left-total and the initial set nonempty.
    """

    def __init__(self, n_states, initial, successors, labels, state_names=None):
        self.n_states = int(n_states)
        self.initial = frozenset(int(s) for s in initial)
        self.successors = tuple(tuple(sorted(set(int(t) for t in succ)))
                                for succ in successors)
        self.labels = tuple(labels)
        if state_names is None:
            self.state_names = tuple(range(self.n_states))
        else:
            self.state_names = tuple(state_names)
        self._validate()

    def _validate(self):
        if not self.initial:
            raise ValueError("initial set must be nonempty")
        for s in self.initial:
            if not 0 <= s < self.n_states:
                raise ValueError(f"initial state {s} out of range")
        if len(self.successors) != self.n_states or len(self.labels) != self.n_states:
            raise ValueError("successor/label lists must cover every state")
        for s, succ in enumerate(self.successors):
            if not succ:
                raise ValueError(f"state {s} has no successor; relation must be left-total")
            for t in succ:
                if not 0 <= t < self.n_states:
                    raise ValueError(f"successor {t} of state {s} out of range")

    def label(self, s):
        return self.labels[s]


@dataclass
class KripkeDfaProduct:
    """Reachable product of a Kripke structure with a specification automaton.

    States are ``(kripke_state, dfa_state)`` pairs; a product transition
    follows the Kripke relation while the automaton consumes the label of
    the current Kripke state.  Nondeterminism of the relation is preserved.
    """
    states: tuple
    index: dict
    initial: frozenset
    successors: tuple
    accepting: frozenset

    def is_left_total(self) -> bool:
        return all(len(s) > 0 for s in self.successors)


def kripke_dfa_product(structure: KripkeStructure, dfa: Dfa) -> KripkeDfaProduct:
    """Product of an abstraction with an automaton, restricted to reachable states."""
    for s in range(structure.n_states):
        if structure.labels[s] not in dfa.label_index:
            raise ValueError(f"label {structure.labels[s]!r} of state {s} "
                             "not in the automaton alphabet")
    initial = [(s, dfa.initial) for s in sorted(structure.initial)]
    index = {}
    states = []
    order = list(initial)
    for st in order:
        if st not in index:
            index[st] = len(states)
            states.append(st)
    frontier = list(states)
    successors_map = {}
    while frontier:
        (s, q) = frontier.pop(0)
        q_next = dfa.step(q, structure.labels[s])
        succ = []
        for t in structure.successors[s]:
            nxt = (t, q_next)
            if nxt not in index:
                index[nxt] = len(states)
                states.append(nxt)
                frontier.append(nxt)
            succ.append(index[nxt])
        successors_map[index[(s, q)]] = tuple(succ)
    successors = tuple(successors_map[i] for i in range(len(states)))
    accepting = frozenset(i for i, (s, q) in enumerate(states) if q in dfa.accepting)
    return KripkeDfaProduct(tuple(states), index,
                            frozenset(index[st] for st in initial),
                            successors, accepting)


# -- label JSON helpers -------------------------------------------------------------


def _label_to_json(lab):
    if isinstance(lab, tuple):
        return {"tuple": [_label_to_json(x) for x in lab]}
    return lab


def _label_from_json(lab):
    if isinstance(lab, dict) and "tuple" in lab:
        return tuple(_label_from_json(x) for x in lab["tuple"])
    return lab


def dump_dfa(dfa: Dfa, path):
    with open(path, "w") as fh:
        json.dump(dfa.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dfa(path) -> Dfa:
    with open(path) as fh:
        return Dfa.from_dict(json.load(fh))
