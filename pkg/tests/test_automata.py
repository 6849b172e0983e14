"""Automata module tests: stepping, products, formula compilation, and the
Kripke product."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contractrl import (Always, Conjunction, Dfa, Eventually, KripkeStructure,
                        compile_formula, dfa_intersection, dfa_product,
                        dfa_step, kripke_dfa_product, one_step_labels,
                        product_many)
from contractrl.automata import REJECT_SINK_NAME

from oracles import accepts_table, enumerate_words


def reach_dfa(labels=("B", "notB")):
    """Two-state automaton accepting words that ever show the first label."""
    return Dfa(2, 0, [1], labels, [[1, 0], [1, 1]])


def universal_dfa(labels=("x",)):
    return Dfa(1, 0, [0], labels, [[0] * len(labels)])


def random_dfa(rng, n_states=4, n_labels=3):
    n = int(rng.integers(1, n_states + 1))
    m = int(rng.integers(1, n_labels + 1))
    accepting = {int(q) for q in range(n) if rng.random() < 0.4}
    table = []
    for q in range(n):
        row = []
        for _ in range(m):
            if q in accepting:
                row.append(int(rng.choice(sorted(accepting))))
            else:
                row.append(int(rng.integers(n)))
        table.append(row)
    return Dfa(n, 0, accepting, tuple(f"l{k}" for k in range(m)), table)


class TestDfaBasics:
    def test_absorbing_accepting_state_stays_accepting(self):
        dfa = reach_dfa()
        for lab in dfa.alphabet:
            assert dfa_step(dfa, 1, lab) in dfa.accepting

    def test_single_state_self_loop(self):
        dfa = universal_dfa(("a", "b"))
        assert dfa_step(dfa, 0, "a") == 0
        assert dfa_step(dfa, 0, "b") == 0

    def test_two_state_reachability_table(self):
        # hand-enumerated table of the reach-B automaton
        dfa = reach_dfa()
        assert dfa_step(dfa, 0, "B") == 1
        assert dfa_step(dfa, 0, "notB") == 0
        assert dfa_step(dfa, 1, "B") == 1
        assert dfa_step(dfa, 1, "notB") == 1

    def test_step_rejects_bad_inputs(self):
        dfa = reach_dfa()
        with pytest.raises(ValueError):
            dfa_step(dfa, 5, "B")
        with pytest.raises(ValueError):
            dfa_step(dfa, 0, "C")
        with pytest.raises(ValueError):
            dfa.step_index(0, 7)

    def test_accepting_must_be_absorbing(self):
        with pytest.raises(ValueError):
            Dfa(2, 0, [1], ("a",), [[1], [0]])

    def test_from_partial_adds_sink(self):
        dfa = Dfa.from_partial(2, 0, [1], ("a", "b"), {(0, "a"): 1, (1, "a"): 1,
                                                       (1, "b"): 1})
        assert dfa.n_states == 3
        assert dfa.rejecting == {2}
        assert dfa.state_names[2] == REJECT_SINK_NAME
        assert dfa.step(0, "b") == 2
        assert dfa.step(2, "a") == 2

    def test_from_partial_total_map_needs_no_sink(self):
        dfa = Dfa.from_partial(1, 0, [0], ("a",), {(0, "a"): 0})
        assert dfa.n_states == 1
        assert not dfa.rejecting


class TestProduct:
    def test_universal_identity_element(self):
        d = reach_dfa()
        u = universal_dfa()
        prod = dfa_product(d, u)
        for word in enumerate_words(2, 5):
            lifted = [(d.alphabet[k], "x") for k in word]
            plain = [d.alphabet[k] for k in word]
            assert prod.accepts(lifted) == d.accepts(plain)

    def test_cartesian_counts(self):
        d1 = reach_dfa()
        d2 = Dfa(3, 0, [2], ("p", "q"), [[1, 0], [2, 1], [2, 2]])
        prod = dfa_product(d1, d2)
        assert prod.n_states == 6
        assert len(prod.accepting) == len(d1.accepting) * len(d2.accepting)

    def test_hand_enumerated_word(self):
        d1 = reach_dfa(("B1", "n1"))
        d2 = reach_dfa(("B2", "n2"))
        prod = dfa_product(d1, d2)
        word = [("n1", "B2"), ("B1", "B2")]
        assert prod.accepts(word)
        assert not prod.accepts([("n1", "n2"), ("n1", "B2")])

    def test_language_is_product_of_projections(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            d1 = random_dfa(rng)
            d2 = random_dfa(rng)
            prod = dfa_product(d1, d2)
            for word in enumerate_words(len(prod.alphabet), 3):
                labs = [prod.alphabet[k] for k in word]
                expect = (accepts_table(d1.table, d1.initial, d1.accepting,
                                        [d1.label_index[l[0]] for l in labs])
                          and accepts_table(d2.table, d2.initial, d2.accepting,
                                            [d2.label_index[l[1]] for l in labs]))
                assert prod.accepts(labs) == expect

    def test_product_many_flattens_names(self):
        parts = [reach_dfa(("a", "b")), reach_dfa(("c", "d")),
                 universal_dfa(("e",))]
        prod = product_many(parts)
        assert prod.n_states == 4
        assert all(len(name) == 3 for name in prod.state_names)


class TestCompileFormula:
    def test_one_step_invariance(self):
        alphabet = ("good", "bad")
        dfa = compile_formula(Always(frozenset({"good"}), 1), alphabet)
        assert dfa.n_states == 3
        assert dfa.accepts(["good"])
        assert dfa.accepts(["good", "bad"])   # only the first label is constrained
        assert not dfa.accepts(["bad"])
        assert not dfa.accepts([])

    def test_bounded_eventually_brute_force(self):
        alphabet = ("B", "notB")
        dfa = compile_formula(Eventually(frozenset({"B"}), 2), alphabet)
        assert dfa.n_states == 4
        for word in enumerate_words(2, 4):
            labs = [alphabet[k] for k in word]
            expect = "B" in labs[:2]
            assert dfa.accepts(labs) == expect, labs

    def test_bounded_always_brute_force(self):
        alphabet = ("p", "q", "r")
        for n in range(1, 5):
            dfa = compile_formula(Always(frozenset({"p", "q"}), n), alphabet)
            assert dfa.n_states == n + 2
            for word in enumerate_words(3, n + 1):
                labs = [alphabet[k] for k in word]
                expect = len(labs) >= n and all(l != "r" for l in labs[:n])
                assert dfa.accepts(labs) == expect, (n, labs)

    def test_room_style_conjunction(self):
        # bounded invariance on a comfort band conjoined with bounded
        # reachability of a setpoint band, horizon 40 for both
        alphabet = ("cold", "low", "target", "high", "hot")
        comfort = frozenset({"low", "target", "high"})
        spec = Conjunction((Always(comfort, 40),
                            Eventually(frozenset({"target"}), 40)))
        dfa = compile_formula(spec, alphabet)
        assert dfa.n_states == 42 * 42
        ok = ["low"] * 10 + ["target"] + ["high"] * 29
        assert dfa.accepts(ok + ["hot"])      # violation after the horizon is fine
        assert not dfa.accepts(["low"] * 40)  # never reaches the setpoint band
        assert not dfa.accepts(["low"] * 5 + ["cold"] + ["target"] * 35)

    def test_unbounded_requires_cap(self):
        with pytest.raises(ValueError):
            compile_formula(Always(frozenset({"a"})), ("a", "b"))
        dfa = compile_formula(Eventually(frozenset({"a"})), ("a", "b"),
                              horizon_cap=3)
        assert dfa.accepts(["b", "a"])
        assert not dfa.accepts(["b", "b", "b"])

    def test_zero_horizon_rejected(self):
        with pytest.raises(ValueError):
            Always(frozenset({"a"}), 0)
        with pytest.raises(ValueError):
            compile_formula(Always(frozenset({"a"})), ("a",), horizon_cap=0)

    def test_compiled_accepting_states_absorbing(self):
        rng = np.random.default_rng(3)
        alphabet = ("x", "y", "z")
        for _ in range(20):
            n = int(rng.integers(1, 5))
            pred = frozenset(rng.choice(alphabet, size=int(rng.integers(1, 3)),
                                        replace=False).tolist())
            kind = Always if rng.random() < 0.5 else Eventually
            dfa = compile_formula(kind(pred, n), alphabet)
            for q in dfa.accepting:
                assert all(t in dfa.accepting for t in dfa.table[q])

    def test_conjunction_needs_two_operands(self):
        with pytest.raises(ValueError):
            Conjunction((Always(frozenset({"a"}), 1),))


class TestOneStepLabels:
    def test_no_sink_returns_alphabet(self):
        dfa = reach_dfa()
        assert one_step_labels(dfa, 0) == dfa.alphabet

    def test_safety_live_state_filters_sink(self):
        dfa = compile_formula(Always(frozenset({"p"}), 1), ("p", "q"))
        assert set(one_step_labels(dfa, 0)) == {"p"}

    def test_accepting_state_keeps_alphabet(self):
        dfa = compile_formula(Always(frozenset({"p"}), 1), ("p", "q"))
        acc = next(iter(dfa.accepting))
        assert set(one_step_labels(dfa, acc)) == {"p", "q"}

    def test_full_alphabet_when_no_sink_transition(self):
        dfa = compile_formula(Eventually(frozenset({"p"}), 3), ("p", "q"))
        # counter states only reach the sink from the last counter
        assert set(one_step_labels(dfa, 0)) == {"p", "q"}
        assert set(one_step_labels(dfa, 2)) == {"p"}


class TestTrimCollapse:
    def test_trim_preserves_language(self):
        alphabet = ("a", "b")
        spec = Conjunction((Always(frozenset({"a"}), 3),
                            Eventually(frozenset({"a"}), 3)))
        dfa = compile_formula(spec, alphabet)
        trimmed = dfa.trim()
        assert trimmed.n_states < dfa.n_states
        for word in enumerate_words(2, 5):
            labs = [alphabet[k] for k in word]
            assert dfa.accepts(labs) == trimmed.accepts(labs)

    def test_collapse_rejecting_preserves_language(self):
        alphabet = ("a", "b")
        spec = Conjunction((Always(frozenset({"a"}), 2),
                            Eventually(frozenset({"a"}), 2)))
        dfa = compile_formula(spec, alphabet).trim()
        collapsed = dfa.collapse_rejecting()
        assert len(collapsed.rejecting) <= 1
        for word in enumerate_words(2, 4):
            labs = [alphabet[k] for k in word]
            assert dfa.accepts(labs) == collapsed.accepts(labs)


class TestSerialization:
    def test_dict_round_trip(self):
        dfa = compile_formula(Eventually(frozenset({"a"}), 2), ("a", "b"))
        clone = Dfa.from_dict(dfa.to_dict())
        assert clone.table == dfa.table
        assert clone.accepting == dfa.accepting
        assert clone.rejecting == dfa.rejecting
        assert clone.alphabet == dfa.alphabet

    def test_text_round_trip(self):
        dfa = compile_formula(Always(frozenset({"p"}), 2), ("p", "q"))
        clone = Dfa.from_text(dfa.to_text())
        assert clone.table == dfa.table
        assert clone.accepting == dfa.accepting
        assert clone.rejecting == dfa.rejecting

    def test_text_rejects_tuple_labels(self):
        prod = dfa_product(reach_dfa(), universal_dfa())
        with pytest.raises(ValueError):
            prod.to_text()

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_dfa_round_trips(self, seed):
        dfa = random_dfa(np.random.default_rng(seed))
        clone = Dfa.from_dict(dfa.to_dict())
        assert clone.table == dfa.table


class TestKripke:
    def test_left_total_required(self):
        with pytest.raises(ValueError):
            KripkeStructure(2, [0], [[1], []], ["a", "b"])

    def test_nonempty_initial_required(self):
        with pytest.raises(ValueError):
            KripkeStructure(1, [], [[0]], ["a"])

    def test_single_state_self_loop_chains_automaton(self):
        m = KripkeStructure(1, [0], [[0]], ["B"])
        d = reach_dfa(("B", "notB"))
        prod = kripke_dfa_product(m, d)
        # the product follows sigma on the fixed label: (0, q0) -> (0, acc)
        assert (0, 0) in prod.index and (0, 1) in prod.index
        assert prod.successors[prod.index[(0, 0)]] == (prod.index[(0, 1)],)

    def test_two_state_product_size(self):
        m = KripkeStructure(2, [0], [[0, 1], [0, 1]], ["B", "notB"])
        d = reach_dfa(("B", "notB"))
        prod = kripke_dfa_product(m, d)
        assert len(prod.states) <= 4

    def test_left_totality_preserved(self):
        m = KripkeStructure(3, [0, 1], [[1, 2], [2], [0]], ["a", "b", "a"])
        d = universal_dfa(("a", "b"))
        prod = kripke_dfa_product(m, d)
        assert prod.is_left_total()

    def test_label_outside_alphabet_rejected(self):
        m = KripkeStructure(1, [0], [[0]], ["zz"])
        with pytest.raises(ValueError):
            kripke_dfa_product(m, reach_dfa())
