"""Contract-game compilation and turn-based reduction tests."""

import io

import numpy as np
import pytest

from contractrl import (Dfa, KripkeStructure, MarkovGame, MdpNetwork,
                        compile_contract, compile_no_communication,
                        concurrent_to_turnbased, finite_horizon_game_values,
                        finite_horizon_round_values, generate_random_instance,
                        local_value_iteration, reward_of, InstanceSpec)
from contractrl.contracts import MAX_PLAYER, MIN_PLAYER

from oracles import matrix_lower_value


def reach_dfa(labels=("n", "y")):
    return Dfa(2, 0, [1], labels, [[0, 1], [1, 1]])


def env_independent_component(n_states=3, n_actions=2, alphabet=("n", "y"),
                              labels=None, env_size=1, rows=None, seed=0):
    """Component whose transitions ignore its environment action."""
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = [alphabet[int(rng.integers(len(alphabet)))]
                  for _ in range(n_states)]
    transitions = {}
    for s in range(n_states):
        for a in range(n_actions):
            if rows is not None:
                row = rows[(s, a)]
            else:
                support = sorted(rng.choice(n_states,
                                            size=int(rng.integers(1, n_states + 1)),
                                            replace=False).tolist())
                w = rng.random(len(support)) + 0.1
                w /= w.sum()
                row = tuple((int(t), float(p)) for t, p in zip(support, w))
            for env in range(env_size):
                transitions[(s, a, (env,))] = row
    return MarkovGame(n_states, 0, n_actions, labels, alphabet,
                      transitions=transitions), transitions


def as_single(component, transitions):
    """No-predecessor copy of an env-independent component."""
    solo = {(s, a, ()): row for (s, a, env), row in transitions.items()
            if env == (0,)}
    return MarkovGame(component.n_states, component.initial,
                      component.n_actions, component.label_of,
                      component.alphabet, transitions=solo)


def tiny_neighbor(alphabet=("z",), n_states=1):
    transitions = {}
    for s in range(n_states):
        for env in range(3):
            transitions[(s, 0, (env,))] = ((s, 1.0),)
    return MarkovGame(n_states, 0, 1, [alphabet[0]] * n_states, alphabet,
                      transitions=transitions)


class TestCompileContract:
    def test_vacuous_adversary_equals_local_reachability(self):
        comp, rows = env_independent_component(seed=3)
        nbr = tiny_neighbor()
        net = MdpNetwork([comp, nbr], [(1,), (0,)])
        dfas = [reach_dfa(), Dfa(1, 0, [0], ("z",), [[0]])]
        game = compile_contract(net, 0, dfas)
        vals = finite_horizon_round_values(game, 6)
        solo_net = MdpNetwork([as_single(comp, rows)], [()])
        solo = local_value_iteration(solo_net, 0, [dfas[0]], 6)
        got = vals[game.initial]
        want = solo.value_at_initial()
        assert got == pytest.approx(want, abs=1e-9)

    def test_state_count_bound(self):
        for seed in range(8):
            net, dfas = generate_random_instance(
                InstanceSpec(states=2, actions=2, labels=2, dfa_states=3), seed)
            game = compile_contract(net, 0, dfas)
            g = net.components[0]
            other = net.components[1]
            d_own, d_nbr = dfas
            sigma2 = len(d_nbr.alphabet)
            bound = (g.n_states * d_own.n_states * d_nbr.n_states
                     * (1 + sigma2 + sigma2 * g.n_actions)) + 1
            assert game.n_states <= bound

    def test_phase_structure(self):
        comp, _ = env_independent_component(seed=1)
        nbr = tiny_neighbor(alphabet=("a", "b"), n_states=2)
        nbr_labels = MarkovGame(2, 0, 1, ["a", "b"], ("a", "b"),
                                transitions={(s, 0, (e,)): ((s, 1.0),)
                                             for s in range(2) for e in range(3)})
        net = MdpNetwork([comp, nbr_labels], [(1,), (0,)])
        dfas = [reach_dfa(), reach_dfa(("a", "b"))]
        game = compile_contract(net, 0, dfas)
        assert game.plies_per_round == 3
        kinds = {p[0] for p in game.payloads}
        assert kinds == {"cl", "ca", "rn"}
        for sid, payload in enumerate(game.payloads):
            if game.is_terminal(sid):
                continue
            owner = game.owner[sid]
            assert owner == (MAX_PLAYER if payload[0] == "ca" else MIN_PLAYER)

    def test_component_without_predecessors_is_plain_mdp(self):
        comp, rows = env_independent_component(seed=5)
        net = MdpNetwork([as_single(comp, rows)], [()])
        game = compile_contract(net, 0, [reach_dfa()])
        assert game.plies_per_round == 1
        assert all(game.owner[s] == MAX_PLAYER for s in range(game.n_states)
                   if not game.is_terminal(s))

    def test_alphabet_mismatch_rejected(self):
        comp, rows = env_independent_component(seed=5)
        net = MdpNetwork([as_single(comp, rows)], [()])
        with pytest.raises(ValueError):
            compile_contract(net, 0, [reach_dfa(labels=("other", "labels"))])

    def test_unsatisfiable_neighbor_assumption_kills_value(self):
        # the neighbor's automaton rejects every continuation: empty live set
        comp, _ = env_independent_component(seed=2)
        nbr = tiny_neighbor()
        net = MdpNetwork([comp, nbr], [(1,), (0,)])
        dead_nbr_dfa = Dfa(2, 0, [1], ("z",), [[0], [1]])
        # make every neighbor label lead into a rejecting sink
        dead_nbr_dfa = Dfa(2, 0, [], ("z",), [[1], [1]], rejecting=(1,))
        dfas = [reach_dfa(), dead_nbr_dfa]
        game = compile_contract(net, 0, dfas)
        vals = finite_horizon_round_values(game, 8)
        assert vals[game.initial] == 0.0


class TestRewardStructure:
    def test_rewards_only_on_entering_acceptance(self):
        net, dfas = generate_random_instance(InstanceSpec(), 11)
        game = compile_contract(net, 0, dfas)
        for s in range(game.n_states):
            for slot in game.slots(s):
                nxt, _ = game.edges(slot)
                for t in nxt:
                    r = reward_of(game, s, slot, int(t))
                    if game.accepting[t] and not game.accepting[s]:
                        assert r == 1.0
                    else:
                        assert r == 0.0

    def test_accepting_states_are_terminal(self):
        net, dfas = generate_random_instance(InstanceSpec(), 13)
        game = compile_contract(net, 0, dfas)
        for s in np.flatnonzero(game.accepting):
            assert game.n_moves(int(s)) == 0

    def test_episode_return_is_zero_or_one(self):
        net, dfas = generate_random_instance(InstanceSpec(), 17)
        game = compile_contract(net, 0, dfas)
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = game.initial
            total = 0.0
            for _ in range(60):
                if game.is_terminal(s):
                    break
                slots = list(game.slots(s))
                slot = slots[int(rng.integers(len(slots)))]
                s, r, done = game.step(s, slot, rng)
                total += r
            assert total in (0.0, 1.0)


class TestStructuralEquivalence:
    def test_recursion_matches_game_dp(self):
        """The direct local recursion and ply-indexed value iteration on the
        compiled game must agree at every reachable configuration."""
        horizon = 4
        checked = 0
        for seed in range(50):
            net, dfas = generate_random_instance(
                InstanceSpec(states=3, actions=2, labels=2, dfa_states=3), seed)
            for i in range(2):
                game = compile_contract(net, i, dfas)
                res = local_value_iteration(net, i, dfas, horizon)
                for n in range(horizon + 1):
                    vals = finite_horizon_game_values(
                        game, n * game.plies_per_round)
                    for payload, sid in game.payload_index.items():
                        if payload[0] == "cl":
                            key = (payload[1], payload[2], payload[3])
                        elif payload[0] == "s":
                            key = (payload[1], payload[2])
                        else:
                            continue
                        assert vals[sid] == pytest.approx(
                            res.values[n][key], abs=1e-9), (seed, i, n, payload)
                        checked += 1
        assert checked > 1000

    def test_no_communication_dominated_by_contract(self):
        """Widening the adversary's move sets never helps the maximizer."""
        for seed in range(50):
            net, dfas = generate_random_instance(
                InstanceSpec(states=3, actions=2, labels=2, dfa_states=3),
                1000 + seed)
            game_l = compile_contract(net, 0, dfas)
            game_n = compile_no_communication(net, 0, dfas)
            vals_l = finite_horizon_round_values(game_l, 6)
            vals_n = finite_horizon_round_values(game_n, 6)
            for payload, sid in game_n.payload_index.items():
                if payload[0] != "cl":
                    continue
                other = game_l.payload_index.get(payload)
                if other is not None:
                    assert vals_n[sid] <= vals_l[other] + 1e-9, (seed, payload)

    def test_singleton_alphabet_makes_modes_identical(self):
        comp, _ = env_independent_component(seed=9)
        nbr = tiny_neighbor()
        net = MdpNetwork([comp, nbr], [(1,), (0,)])
        dfas = [reach_dfa(), Dfa(1, 0, [0], ("z",), [[0]])]
        g1 = compile_contract(net, 0, dfas)
        g2 = compile_no_communication(net, 0, dfas)
        assert g1.structural_signature() == g2.structural_signature()


class TestAbstraction:
    def test_restricting_adversary_never_hurts(self):
        """Constraining neighbor moves to a sound abstraction can only raise
        the maximizer's value."""
        for seed in range(20):
            net, dfas = generate_random_instance(
                InstanceSpec(states=3, actions=2, labels=2, dfa_states=3),
                2000 + seed)
            nbr = net.components[1]
            succ = []
            for s in range(nbr.n_states):
                targets = set()
                for (ss, a, env), row in nbr._transitions.items():
                    if ss == s:
                        targets.update(t for t, p in row if p > 0)
                succ.append(sorted(targets) or [s])
            kripke = KripkeStructure(nbr.n_states, [nbr.initial], succ,
                                     nbr.label_of)
            plain = compile_contract(net, 0, dfas)
            restricted = compile_contract(net, 0, dfas, abstraction={1: kripke})
            v_plain = finite_horizon_round_values(plain, 6)[plain.initial]
            v_restr = finite_horizon_round_values(restricted, 6)[restricted.initial]
            assert v_restr >= v_plain - 1e-9, seed

    def test_abstraction_must_share_state_space(self):
        net, dfas = generate_random_instance(InstanceSpec(), 4)
        wrong = KripkeStructure(net.components[1].n_states + 1, [0],
                                [[0]] * (net.components[1].n_states + 1),
                                ["a"] * (net.components[1].n_states + 1))
        with pytest.raises(ValueError):
            compile_contract(net, 0, dfas, abstraction={1: wrong})


def matrix_game(matrix):
    """One-shot concurrent game: payoffs in [0, 1] become the probability of
    reaching the accepting terminal."""
    rows, cols = len(matrix), len(matrix[0])
    # state 0 = play, 1 = win (accepting), 2 = lose
    transitions = {}
    for a in range(rows):
        for b in range(cols):
            p = matrix[a][b]
            row = []
            if p > 0:
                row.append((1, p))
            if p < 1:
                row.append((2, 1.0 - p))
            transitions[(0, a, (b,))] = tuple(row)
            transitions[(1, a, (b,))] = ((1, 1.0),)
            transitions[(2, a, (b,))] = ((2, 1.0),)
    return MarkovGame(3, 0, rows, ["start", "win", "lose"],
                      ("start", "win", "lose"), transitions=transitions)


class TestConcurrentReduction:
    def test_state_space_size(self):
        g = matrix_game([[0.5, 0.5], [0.5, 0.5]])
        reduced = concurrent_to_turnbased(g)
        # reachable part: 3 player-one states plus 2x2 commitment pairs,
        # minus the terminal expansions
        assert any(p == ("sa", 0, 1) for p in reduced.payloads)
        g2 = MarkovGame(2, 0, 2, ["a", "a"], ("a",),
                        transitions={(s, a, (0,)): ((1 - s, 1.0),)
                                     for s in range(2) for a in range(2)})
        reduced2 = concurrent_to_turnbased(g2)
        assert reduced2.n_states == 2 + 2 * 2

    def test_matching_pennies_lower_value(self):
        pennies = [[1.0, 0.0], [0.0, 1.0]]
        g = matrix_game(pennies)
        reduced = concurrent_to_turnbased(g, accepting_states=[1])
        value = finite_horizon_game_values(reduced, 2)[reduced.initial]
        assert value == matrix_lower_value(pennies) == 0.0

    def test_dominant_action_closes_information_gap(self):
        dominant = [[0.9, 0.8], [0.3, 0.1]]
        g = matrix_game(dominant)
        reduced = concurrent_to_turnbased(g, accepting_states=[1])
        value = finite_horizon_game_values(reduced, 2)[reduced.initial]
        assert value == pytest.approx(matrix_lower_value(dominant), abs=1e-12)
        # here the lower value coincides with the (mixed) upper bound of the
        # row player's security level for this particular matrix
        assert value == pytest.approx(0.8)

    def test_random_matrices_match_brute_force(self):
        rng = np.random.default_rng(99)
        for _ in range(40):
            rows = int(rng.integers(1, 4))
            cols = int(rng.integers(1, 4))
            matrix = [[float(np.round(rng.random(), 6)) for _ in range(cols)]
                      for _ in range(rows)]
            g = matrix_game(matrix)
            reduced = concurrent_to_turnbased(g, accepting_states=[1])
            value = finite_horizon_game_values(reduced, 2)[reduced.initial]
            assert value == pytest.approx(matrix_lower_value(matrix), abs=1e-12)


class TestDump:
    def test_text_dump_lists_every_state(self):
        net, dfas = generate_random_instance(InstanceSpec(states=2), 5)
        game = compile_contract(net, 0, dfas)
        buf = io.StringIO()
        game.dump_text(buf)
        text = buf.getvalue()
        assert text.count("state ") == game.n_states
