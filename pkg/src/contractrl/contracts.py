"""Compilation of assume-guarantee contracts into turn-based zero-sum games.

Each component's contract game realizes an alternating structure: the
environment first commits the effect of the neighbors' current labels on
their specification automata, the controller then picks an action, and the
environment finally resolves which concrete neighbor states carried those
labels.  A chance move folds the component's own stochastic transition into
the last step.  Reaching a configuration where the component's automaton and
its neighbors' automata all accept pays a single unit reward and ends the
episode.

Adversary label choices that drive the neighbor automata to the same state
are merged into one move whose resolution set is the union of the label
preimages.  This makes the maximizing player's decision a function of
automaton states only, so extracted policies are well defined and attain the
computed value exactly; it weakly lowers the value relative to revealing the
raw label, so certified bounds stay bounds.
"""

from __future__ import annotations

import hashlib
import itertools
from array import array
from typing import Sequence

import numpy as np

from .automata import Dfa, KripkeStructure
from .games import LIMITED, NONE, MarkovGame, MdpNetwork

MAX_PLAYER = 1
MIN_PLAYER = -1
TERMINAL = 0

ROW_SUM_TOL = 1e-9


class TurnBasedGame:
    """Turn-based stochastic game over an indexed state space.

    States are partitioned into Max states, Min states, and terminals
    (accepting or dead).  Accepting states are absorbing with zero further
    reward; the unit reward is paid exactly on the transition that first
    enters one.  Moves are stored per state in a fixed order that doubles as
    the deterministic tie-breaking order.
    """

    def __init__(self, payloads, owner, accepting, dead, initial,
                 action_offsets, move_payloads, edge_offsets,
                 edge_next, edge_prob, discount, plies_per_round,
                 metadata=None):
        self.payloads = tuple(payloads)
        self.owner = np.asarray(owner, dtype=np.int8)
        self.accepting = np.asarray(accepting, dtype=bool)
        self.dead = np.asarray(dead, dtype=bool)
        self.initial = int(initial)
        self.action_offsets = np.asarray(action_offsets, dtype=np.int64)
        self.move_payloads = tuple(move_payloads)
        self.edge_offsets = np.asarray(edge_offsets, dtype=np.int64)
        self.edge_next = np.asarray(edge_next, dtype=np.int64)
        self.edge_prob = np.asarray(edge_prob, dtype=float)
        self.discount = float(discount)
        self.plies_per_round = int(plies_per_round)
        self.metadata = dict(metadata or {})
        self._validate()

    def _validate(self):
        n = self.n_states
        if not 0 <= self.initial < n:
            raise ValueError("initial state out of range")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if np.any(self.accepting & self.dead):
            raise ValueError("accepting and dead states must be disjoint")
        terminal = self.accepting | self.dead
        for s in range(n):
            if terminal[s]:
                if self.action_offsets[s] != self.action_offsets[s + 1]:
                    raise ValueError(f"terminal state {s} has moves")
                continue
            if self.owner[s] not in (MAX_PLAYER, MIN_PLAYER):
                raise ValueError(f"state {s} has no owner")
            if self.action_offsets[s] == self.action_offsets[s + 1]:
                raise ValueError(f"nonterminal state {s} has no moves")
        sums = np.zeros(self.n_slots)
        np.add.at(sums, np.repeat(np.arange(self.n_slots),
                                  np.diff(self.edge_offsets)), self.edge_prob)
        if self.n_slots and np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"move {bad} probabilities sum to {sums[bad]}")

    @property
    def n_states(self):
        return len(self.payloads)

    @property
    def n_slots(self):
        return len(self.move_payloads)

    @property
    def payload_index(self):
        if not hasattr(self, "_payload_index"):
            self._payload_index = {p: i for i, p in enumerate(self.payloads)}
        return self._payload_index

    def slots(self, s):
        return range(int(self.action_offsets[s]), int(self.action_offsets[s + 1]))

    def n_moves(self, s):
        return int(self.action_offsets[s + 1] - self.action_offsets[s])

    def edges(self, slot):
        lo, hi = int(self.edge_offsets[slot]), int(self.edge_offsets[slot + 1])
        return self.edge_next[lo:hi], self.edge_prob[lo:hi]

    def is_terminal(self, s):
        return bool(self.accepting[s] or self.dead[s])

    def reward(self, s, s_next):
        return 1.0 if self.accepting[s_next] and not self.accepting[s] else 0.0

    def step(self, s, slot, rng):
        """Sample one move; returns ``(next_state, reward, terminal)``."""
        nxt, prob = self.edges(slot)
        if len(nxt) == 1:
            t = int(nxt[0])
        else:
            u = rng.random()
            acc = 0.0
            t = int(nxt[-1])
            for j in range(len(nxt)):
                acc += prob[j]
                if u < acc:
                    t = int(nxt[j])
                    break
        return t, self.reward(s, t), self.is_terminal(t)

    def reachable_states(self):
        seen = np.zeros(self.n_states, dtype=bool)
        seen[self.initial] = True
        frontier = [self.initial]
        while frontier:
            s = frontier.pop()
            for slot in self.slots(s):
                nxt, _ = self.edges(slot)
                for t in nxt:
                    if not seen[t]:
                        seen[t] = True
                        frontier.append(int(t))
        return seen

    def structural_signature(self) -> str:
        """Hash of the indexed structure; equal games can share training."""
        h = hashlib.sha256()
        h.update(self.owner.tobytes())
        h.update(self.accepting.tobytes())
        h.update(self.dead.tobytes())
        h.update(self.action_offsets.tobytes())
        h.update(self.edge_offsets.tobytes())
        h.update(self.edge_next.tobytes())
        h.update(np.round(self.edge_prob, 12).tobytes())
        h.update(str(self.initial).encode())
        h.update(repr(self.discount).encode())
        return h.hexdigest()

    def dump_text(self, fh):
        """Readable dump: one line per state and per move with its edges."""
        owner_name = {MAX_PLAYER: "max", MIN_PLAYER: "min", TERMINAL: "terminal"}
        for s in range(self.n_states):
            tag = "accept" if self.accepting[s] else ("dead" if self.dead[s] else
                                                      owner_name[int(self.owner[s])])
            fh.write(f"state {s} {tag} {self.payloads[s]!r}\n")
            for slot in self.slots(s):
                nxt, prob = self.edges(slot)
                edges = " ".join(f"{int(t)}:{p:.12g}" for t, p in zip(nxt, prob))
                fh.write(f"  move {self.move_payloads[slot]!r} -> {edges}\n")


def reward_of(game: TurnBasedGame, s, move, s_next) -> float:
    """Unit reward exactly on the transition that first enters acceptance."""
    return game.reward(s, s_next)


def policy_key_of_payload(payload):
    """Observation key a maximizer-state payload maps to.

    Action-phase states of contract games key on
    ``(s, q, pred_q, pred_q_next)``; games without environment phases key
    on ``(s, q)``.  Abstraction-tracked games append the abstract neighbor
    state.  Returns ``None`` for payloads that are not maximizer decisions.
    """
    if payload[0] == "ca":
        _, s, q, qj, kprev, qj_next = payload
        if kprev is None:
            return (s, q, qj, qj_next)
        return (s, q, qj, qj_next, kprev)
    if payload[0] == "s" and len(payload) == 3:
        return (payload[1], payload[2])
    return None


class _GameBuilder:
    """Interns semantic states, collects moves, finalizes indexed arrays."""

    def __init__(self, discount, plies_per_round, metadata=None):
        self.index = {}
        self.payloads = []
        self.owner = []
        self.accepting = []
        self.dead = []
        self.frontier = []
        self.move_payloads = []
        self.state_moves = []        # per state: list of slot ids
        self.slot_edges = []         # per slot: (targets, probs)
        self.discount = discount
        self.plies_per_round = plies_per_round
        self.metadata = metadata or {}

    def intern(self, payload, owner, accepting=False, dead=False, explore=False):
        sid = self.index.get(payload)
        if sid is not None:
            return sid, False
        sid = len(self.payloads)
        self.index[payload] = sid
        self.payloads.append(payload)
        self.owner.append(TERMINAL if (accepting or dead) else owner)
        self.accepting.append(accepting)
        self.dead.append(dead)
        self.state_moves.append([])
        if explore and not (accepting or dead):
            self.frontier.append(sid)
        return sid, True

    def mark_dead(self, sid):
        self.dead[sid] = True
        self.owner[sid] = TERMINAL
        self.state_moves[sid] = []

    def add_move(self, sid, payload, targets, probs):
        slot = len(self.move_payloads)
        self.move_payloads.append(payload)
        self.slot_edges.append((targets, probs))
        self.state_moves[sid].append(slot)
        return slot

    def finalize(self, initial_sid) -> TurnBasedGame:
        n = len(self.payloads)
        action_offsets = array("q", [0])
        slot_order = []
        for s in range(n):
            slot_order.extend(self.state_moves[s])
            action_offsets.append(len(slot_order))
        edge_offsets = array("q", [0])
        edge_next = array("q")
        edge_prob = array("d")
        payload_order = []
        for slot in slot_order:
            payload_order.append(self.move_payloads[slot])
            targets, probs = self.slot_edges[slot]
            edge_next.extend(targets)
            edge_prob.extend(probs)
            edge_offsets.append(len(edge_next))
        return TurnBasedGame(self.payloads, self.owner, self.accepting,
                             self.dead, initial_sid, action_offsets,
                             payload_order, edge_offsets, edge_next, edge_prob,
                             self.discount, self.plies_per_round, self.metadata)


# -- adversary move computation ----------------------------------------------------


def adversary_moves(net: MdpNetwork, i: int, dfas: Sequence[Dfa], qj: tuple,
                    mode: str, candidates=None, _cache=None):
    """Merged adversary options for component ``i`` with predecessor automata
    at ``qj``.

    Returns an ordered tuple of ``(qj_next, refinements)`` where each
    refinement is ``(env_representative, k_next)``.  ``qj_next`` ranges over
    the distinct joint automaton states reachable in one step of admissible
    labels; the refinements are environment-class representatives of every
    neighbor state tuple consistent with any label mapped to that
    ``qj_next``.  ``candidates`` optionally restricts each predecessor to a
    state set (abstraction successors); ``k_next`` then carries the concrete
    choice, otherwise it is ``None``.
    """
    preds = net.predecessors[i]
    key = (i, qj, mode, candidates)
    if _cache is not None and key in _cache:
        return _cache[key]
    game = net.components[i]
    track = candidates is not None
    option_lists = []
    for pos, j in enumerate(preds):
        comp = net.components[j]
        dfa = dfas[j]
        labels = dfa.live_labels(qj[pos]) if mode == LIMITED else dfa.alphabet
        cand = None if candidates is None else candidates[pos]
        options = []
        for lab in labels:
            states = comp.label_preimage(lab)
            if cand is not None:
                states = [s for s in states if s in cand]
            if states:
                options.append((dfa.step(qj[pos], lab), states))
        option_lists.append(options)
    groups: dict = {}
    for combo in itertools.product(*option_lists):
        qj_next = tuple(opt[0] for opt in combo)
        bucket = groups.setdefault(qj_next, {})
        if track:
            for env in itertools.product(*(opt[1] for opt in combo)):
                bucket.setdefault(env, (env, env))
        else:
            reps = []
            for pos, opt in enumerate(combo):
                by_class: dict = {}
                for s in opt[1]:
                    by_class.setdefault(game.env_class_member(pos, s), s)
                reps.append([by_class[k] for k in sorted(by_class, key=repr)])
            for env in itertools.product(*reps):
                bucket.setdefault(game.env_class(env), (env, None))
    moves = []
    for qj_next in sorted(groups, key=repr):
        bucket = groups[qj_next]
        refinements = tuple(bucket[k] for k in sorted(bucket, key=repr))
        moves.append((qj_next, refinements))
    result = tuple(moves)
    if _cache is not None:
        _cache[key] = result
    return result


# -- contract compilation ------------------------------------------------------------


def compile_contract(net: MdpNetwork, i: int, dfas: Sequence[Dfa],
                     abstraction=None, discount: float = 1.0,
                     mode: str = LIMITED) -> TurnBasedGame:
    """Compile component ``i``'s contract into a turn-based game.

    The maximizing player owns the action phase; the minimizing player owns
    the label-commitment and neighbor-resolution phases.  Components without
    predecessors compile to a plain maximizing game over
    ``(state, automaton)`` pairs with the environment phases skipped.
    ``abstraction`` optionally maps predecessor component indices to Kripke
    structures over those components' state spaces; adversary choices are
    then restricted to abstraction-consistent successors and the concrete
    abstract state is tracked in the game state.

    ``discount`` is stored on the game for training; use 1.0 for contracts
    whose automata bound every play and a value below 1 otherwise.
    """
    if not 0 <= i < net.n_components:
        raise ValueError(f"component index {i} out of range")
    if len(dfas) != net.n_components:
        raise ValueError("need one automaton per component")
    game = net.components[i]
    own = dfas[i]
    for lab in set(game.label_of):
        if lab not in own.label_index:
            raise ValueError(f"component {i} label {lab!r} missing from its automaton")
    preds = net.predecessors[i]
    for j in preds:
        comp = net.components[j]
        for lab in set(comp.label_of):
            if lab not in dfas[j].label_index:
                raise ValueError(f"component {j} label {lab!r} missing from its automaton")
    metadata = {"component": i, "mode": mode, "predecessors": preds,
                "abstracted": abstraction is not None}
    if not preds:
        return _compile_single(net, i, own, discount, metadata)

    kripke = _normalize_abstraction(net, i, abstraction)
    builder = _GameBuilder(discount, 3, metadata)
    cache: dict = {}
    k0 = tuple(None for _ in preds) if kripke is not None else None

    def cl_state(s, q, qj, kprev):
        accepting = q in own.accepting and all(
            qj[m] in dfas[j].accepting for m, j in enumerate(preds))
        dead = q in own.rejecting
        sid, _ = builder.intern(("cl", s, q, qj, kprev), MIN_PLAYER,
                                accepting, dead, explore=True)
        return sid

    init = cl_state(game.initial, own.initial,
                    tuple(dfas[j].initial for j in preds), k0)

    while builder.frontier:
        sid = builder.frontier.pop()
        _, s, q, qj, kprev = builder.payloads[sid]
        cands = _candidates(kripke, preds, kprev)
        moves = adversary_moves(net, i, dfas, qj, mode,
                                candidates=cands, _cache=cache)
        q_next = own.step(q, game.label(s))
        added = 0
        for qj_next, refinements in moves:
            ca, created = builder.intern(("ca", s, q, qj, kprev, qj_next),
                                         MAX_PLAYER)
            if created:
                actions = _legal_actions(game, s, refinements)
                if not actions:
                    builder.mark_dead(ca)
                else:
                    for a in actions:
                        rn, _ = builder.intern(
                            ("rn", s, q, qj, kprev, qj_next, a), MIN_PLAYER)
                        builder.add_move(ca, ("act", a), (rn,), (1.0,))
                        for env, k_next in refinements:
                            targets, probs = [], []
                            for (s2, p) in game.distribution(s, a, env):
                                targets.append(cl_state(s2, q_next, qj_next, k_next))
                                probs.append(p)
                            builder.add_move(rn, ("env", game.env_class(env)),
                                             targets, probs)
            builder.add_move(sid, ("label", qj_next), (ca,), (1.0,))
            added += 1
        if not added:
            builder.mark_dead(sid)
    return builder.finalize(init)


def compile_no_communication(net: MdpNetwork, i: int, dfas: Sequence[Dfa],
                             discount: float = 1.0) -> TurnBasedGame:
    """Worst-case variant: the adversary ranges over the whole neighbor label
    alphabet and state space instead of the specification-consistent sets."""
    return compile_contract(net, i, dfas, abstraction=None,
                            discount=discount, mode=NONE)


def _compile_single(net, i, own, discount, metadata):
    game = net.components[i]
    builder = _GameBuilder(discount, 1, metadata)

    def state(s, q):
        sid, _ = builder.intern(("s", s, q), MAX_PLAYER,
                                q in own.accepting, q in own.rejecting,
                                explore=True)
        return sid

    init = state(game.initial, own.initial)
    while builder.frontier:
        sid = builder.frontier.pop()
        _, s, q = builder.payloads[sid]
        q_next = own.step(q, game.label(s))
        for a in game.enabled_actions(s, ()):
            targets, probs = [], []
            for (s2, p) in game.distribution(s, a, ()):
                targets.append(state(s2, q_next))
                probs.append(p)
            builder.add_move(sid, ("act", a), targets, probs)
    return builder.finalize(init)


def _normalize_abstraction(net, i, abstraction):
    if abstraction is None:
        return None
    preds = net.predecessors[i]
    if isinstance(abstraction, KripkeStructure):
        if len(preds) != 1:
            raise ValueError("a bare abstraction needs a single predecessor")
        abstraction = {preds[0]: abstraction}
    result = []
    for j in preds:
        ab = abstraction.get(j)
        if ab is not None:
            comp = net.components[j]
            if ab.n_states != comp.n_states:
                raise ValueError(f"abstraction of component {j} must share its state space")
            for s in range(comp.n_states):
                if ab.labels[s] != comp.label(s):
                    raise ValueError(f"abstraction of component {j} disagrees on "
                                     f"the label of state {s}")
        result.append(ab)
    return tuple(result)


def _candidates(kripke, preds, kprev):
    if kripke is None:
        return None
    cands = []
    for pos in range(len(preds)):
        ab = kripke[pos]
        if ab is None:
            cands.append(None)
        elif kprev is None or kprev[pos] is None:
            cands.append(frozenset(ab.initial))
        else:
            cands.append(frozenset(ab.successors[kprev[pos]]))
    return tuple(cands)


def _legal_actions(game, s, refinements):
    """Actions guaranteed executable whichever refinement the adversary picks."""
    if game.all_actions_enabled:
        return tuple(range(game.n_actions))
    actions = []
    for a in range(game.n_actions):
        if all(game.distribution(s, a, env) is not None for env, _ in refinements):
            actions.append(a)
    return tuple(actions)


# -- concurrent to turn-based reduction ----------------------------------------------


def concurrent_to_turnbased(game: MarkovGame, accepting_states=(),
                            discount: float = 1.0) -> TurnBasedGame:
    """Reduce a concurrent game to a turn-based one in which the environment
    observes the controller's choice before moving.

    The state space becomes ``S ∪ (S × A)``: at ``s`` the maximizer commits
    an action ``a``, moving surely to ``(s, a)``; there the minimizer picks
    the environment action and the original stochastic transition resolves.
    The resulting value equals the lower value of the concurrent game in
    deterministic policies.  ``accepting_states`` are terminal with the
    usual unit reward on entry.
    """
    if game._transitions is None:
        raise ValueError("the reduction needs an explicitly enumerated game")
    env_actions = sorted({env for (_, _, env) in game._transitions})
    accepting = frozenset(accepting_states)
    builder = _GameBuilder(discount, 2, {"reduction": "concurrent"})

    def player1(s):
        sid, _ = builder.intern(("s", s), MAX_PLAYER, s in accepting,
                                False, explore=True)
        return sid

    init = player1(game.initial)
    while builder.frontier:
        sid = builder.frontier.pop()
        s = builder.payloads[sid][1]
        added = 0
        for a in range(game.n_actions):
            envs = [env for env in env_actions
                    if game.distribution(s, a, env) is not None]
            if not envs:
                continue
            pair, created = builder.intern(("sa", s, a), MIN_PLAYER)
            if created:
                for env in envs:
                    targets, probs = [], []
                    for (s2, p) in game.distribution(s, a, env):
                        targets.append(player1(s2))
                        probs.append(p)
                    builder.add_move(pair, ("env", env), targets, probs)
            builder.add_move(sid, ("act", a), (pair,), (1.0,))
            added += 1
        if not added:
            builder.mark_dead(sid)
    return builder.finalize(init)
