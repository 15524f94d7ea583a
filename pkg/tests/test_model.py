import itertools
import math

import numpy as np
import pytest

from episoderank.datagen import Alphabet, dataset_from_strings, dataset_from_token_rows
from episoderank.episodes import make_episode, serial
from episoderank.machine import block_prefix, build_machine
from episoderank.model import (
    EMPTY_SPEC,
    CollapsedAlphabet,
    ModelParams,
    NumericalFitError,
    PartitionSpec,
    StateStats,
    collapse_alphabet,
    collect_statistics,
    conditional_label_prob,
    fit,
    gradient_hessian,
    identity_collapse,
    log_likelihood,
    reach_probabilities,
    reach_table,
    sequence_log_prob,
    state_statistics,
    transition_rates,
    transition_rates_from_probs,
)

from conftest import random_strict_episode


def diamond():
    return make_episode(["a", "b", "c", "d"], [(0, 1), (0, 2), (1, 3), (2, 3)])


def random_instance(rng, alphabet_symbols="abc", max_vertices=4):
    """Random (machine, spec, stats) triple with synthetic counts."""
    ep = random_strict_episode(rng, "ab", max_vertices)
    m = build_machine(ep)
    col = collapse_alphabet(Alphabet(alphabet_symbols), ep)
    edges = list(range(len(m.edges)))
    rng.shuffle(edges)
    half = len(edges) // 2
    spec = PartitionSpec(frozenset(edges[:half][:3]), frozenset(edges[half:][:3]))
    n = rng.integers(0, 25, size=(m.num_states, col.size)).astype(float)
    stats = StateStats(col, n.sum(axis=1), n)
    return m, spec, stats


def random_params(rng, col, t_scale=1.0):
    u = rng.normal(size=col.size)
    u[col.star] = 0.0
    return ModelParams(col, u, float(rng.normal(scale=t_scale)),
                       float(rng.normal(scale=t_scale)), col.star)


class TestCollapse:
    def test_maps_absent_symbols_to_star(self):
        alpha = Alphabet("abcde")
        col = collapse_alphabet(alpha, serial("ab"))
        assert col.classes == ("a", "b", "*")
        assert [col.class_of(s) for s in "abcde"] == [0, 1, 2, 2, 2]

    def test_full_alphabet_keeps_identity_plus_unused_star(self):
        alpha = Alphabet("ab")
        col = collapse_alphabet(alpha, serial("ab"))
        assert col.classes == ("a", "b", "*")
        assert col.class_of_ids(alpha).tolist() == [0, 1]

    def test_parameter_dimension_bound(self):
        ep = diamond()
        col = collapse_alphabet(Alphabet([f"x{i}" for i in range(100)]), ep)
        assert col.size + 2 <= ep.n + 3


class TestStatistics:
    def test_hand_trace(self):
        ds = dataset_from_strings(["ab"])
        m = build_machine(serial("ab"))
        stats = state_statistics(m, ds)
        assert stats.c.tolist() == [1.0, 1.0, 0.0]
        assert stats.n[0].tolist() == [1.0, 0.0, 0.0]  # classes a, b, *
        assert stats.n[1].tolist() == [0.0, 1.0, 0.0]

    def test_empty_dataset_zero(self):
        ds = dataset_from_strings([])
        stats = state_statistics(build_machine(serial("ab")), ds)
        assert stats.total_events() == 0

    def test_event_conservation(self):
        rng = np.random.default_rng(2)
        rows = ["".join(rng.choice(list("abcxyz"), size=10)) for _ in range(30)]
        ds = dataset_from_strings(rows)
        for _ in range(10):
            ep = random_strict_episode(rng, "abc", 4)
            stats = state_statistics(build_machine(ep), ds)
            assert stats.c.sum() == ds.total_events
            assert np.array_equal(stats.n.sum(axis=1), stats.c)

    def test_support_comes_from_same_pass(self):
        ds = dataset_from_strings(["ab", "ba", "aab"])
        m = build_machine(serial("ab"))
        _, covered = collect_statistics(m, ds)
        assert covered == 2


class TestConditionalProb:
    def test_empty_spec_is_state_independent(self):
        m = build_machine(serial("ab"))
        col = CollapsedAlphabet(("a", "b", "*"), 2, {"a": 0, "b": 1})
        params = ModelParams(col, np.array([0.3, -0.2, 0.0]), 5.0, -5.0, 2)
        expected = np.exp(params.u) / np.exp(params.u).sum()
        for state in range(m.num_states):
            for cls, lab in enumerate(col.classes):
                p = conditional_label_prob(params, m, EMPTY_SPEC, state, lab)
                assert p == pytest.approx(expected[cls], abs=1e-15)

    def test_sink_uses_base_distribution(self):
        m = build_machine(serial("ab"))
        col = CollapsedAlphabet(("a", "b", "*"), 2, {"a": 0, "b": 1})
        spec = PartitionSpec(frozenset(range(len(m.edges))), frozenset())
        params = ModelParams(col, np.zeros(3), 3.0, 0.0, 2)
        assert conditional_label_prob(params, m, spec, m.sink, "a") == pytest.approx(1 / 3)

    def test_ln2_boost_gives_half(self):
        m = build_machine(serial("ab"))
        col = CollapsedAlphabet(("a", "b", "*"), 2, {"a": 0, "b": 1})
        # boost the b-edge out of state {a}
        (b_edge,) = [i for i, e in enumerate(m.edges) if e.label == "b"]
        spec = PartitionSpec(frozenset([b_edge]), frozenset())
        params = ModelParams(col, np.zeros(3), math.log(2.0), 0.0, 2)
        assert conditional_label_prob(params, m, spec, 1, "b") == pytest.approx(0.5)


class TestLikelihood:
    def test_zero_stats(self):
        m = build_machine(serial("a"))
        col = CollapsedAlphabet(("a", "*"), 1, {"a": 0})
        stats = StateStats(col, np.zeros(2), np.zeros((2, 2)))
        params = ModelParams(col, np.array([1.0, 0.0]), 0.0, 0.0, 1)
        assert log_likelihood(stats, params, m, EMPTY_SPEC) == 0.0

    def test_single_state_closed_form(self):
        m = build_machine(serial("a"))
        col = CollapsedAlphabet(("a", "*"), 1, {"a": 0})
        n = np.zeros((2, 2))
        n[0] = [3.0, 1.0]
        stats = StateStats(col, n.sum(axis=1), n)
        params = ModelParams(col, np.array([math.log(3.0), 0.0]), 0.0, 0.0, 1)
        expected = 3 * math.log(0.75) + math.log(0.25)
        assert log_likelihood(stats, params, m, EMPTY_SPEC) == pytest.approx(expected, abs=1e-12)

    def test_matches_eventwise_evaluation(self):
        rng = np.random.default_rng(4)
        rows = ["".join(rng.choice(list("abcz"), size=8)) for _ in range(10)]
        ds = dataset_from_strings(rows)
        ep = make_episode(["a", "b", "c"], [(0, 1)])
        m = build_machine(ep)
        col = collapse_alphabet(ds.alphabet, ep)
        stats = state_statistics(m, ds, col)
        spec = PartitionSpec(frozenset([0]), frozenset([1]))
        params = random_params(rng, col)
        eventwise = sum(sequence_log_prob(m, params, spec, ds.tokens(i))
                        for i in range(ds.num_sequences))
        assert log_likelihood(stats, params, m, spec) == pytest.approx(eventwise, abs=1e-9)


class TestGradientHessian:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            m, spec, stats = random_instance(rng)
            params = random_params(rng, stats.collapsed)
            grad, hess = gradient_hessian(stats, params, m, spec)
            layout = [k for k in range(stats.collapsed.size) if k != params.pinned]
            h = 1e-5

            def ll(tweak):
                u = params.u.copy()
                for pos, k in enumerate(layout):
                    u[k] += tweak[pos]
                p = ModelParams(stats.collapsed, u, params.t1 + tweak[-2],
                                params.t2 + tweak[-1], params.pinned)
                return log_likelihood(stats, p, m, spec)

            dim = len(layout) + 2
            fd = np.zeros(dim)
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = h
                fd[i] = (ll(e) - ll(-e)) / (2 * h)
            assert np.allclose(grad, fd, rtol=1e-5, atol=1e-6)

    def test_zero_gradient_at_empirical_frequencies(self):
        ds = dataset_from_strings(["ab", "ba", "aab", "bb"])
        ep = serial("ab")
        m = build_machine(ep)
        col = collapse_alphabet(ds.alphabet, ep)
        stats = state_statistics(m, ds, col)
        totals = stats.n.sum(axis=0)
        u = np.full(col.size, -25.0)
        nz = totals > 0
        u[nz] = np.log(totals[nz]) - np.log(totals[0])
        params = ModelParams(col, u, 0.0, 0.0, 0)
        grad, _ = gradient_hessian(stats, params, m, EMPTY_SPEC)
        assert np.abs(grad[:-2]).max() < 1e-9

    def test_hessian_negative_semidefinite(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            m, spec, stats = random_instance(rng)
            params = random_params(rng, stats.collapsed, t_scale=2.0)
            _, hess = gradient_hessian(stats, params, m, spec)
            assert np.linalg.eigvalsh(hess).max() <= 1e-8


class TestFit:
    def test_independence_recovers_empirical(self):
        ds = dataset_from_strings(["ab", "ba", "aab", "bb", "ab"])
        ep = serial("ab")
        m = build_machine(ep)
        stats = state_statistics(m, ds)
        params = fit(m, EMPTY_SPEC, stats)
        totals = stats.n.sum(axis=0)
        freq = totals / totals.sum()
        probs = np.exp(params.u) / np.exp(params.u).sum()
        assert np.allclose(probs[:-1], freq[:-1], atol=1e-9)
        # the independence likelihood in closed form
        nz = totals > 0
        expected_ll = float((totals[nz] * np.log(freq[nz])).sum())
        assert log_likelihood(stats, params, m, EMPTY_SPEC) == pytest.approx(expected_ll)

    def test_gapless_inner_edges_saturate_t1(self):
        rng = np.random.default_rng(7)
        rows = []
        for _ in range(150):
            seq = list(rng.choice(["x", "z", "w"], size=12))
            pos = int(rng.integers(0, 10))
            seq[pos:pos + 3] = ["a", "b", "c"]
            rows.append(seq)
        ds = dataset_from_token_rows(rows)
        ep = serial(["a", "b", "c", "x"])
        m = build_machine(ep)
        stats = state_statistics(m, ds)
        inner = block_prefix(m, 0b0111)
        params = fit(m, PartitionSpec(inner, frozenset()), stats)
        assert params.t1 == 25.0
        assert params.t2 == 0.0

    def test_fitted_likelihood_dominates_independence(self):
        rng = np.random.default_rng(8)
        rows = ["".join(rng.choice(list("abcz"), size=10)) for _ in range(40)]
        ds = dataset_from_strings(rows)
        for _ in range(10):
            ep = random_strict_episode(rng, "abc", 4)
            m = build_machine(ep)
            stats = state_statistics(m, ds)
            base = log_likelihood(stats, fit(m, EMPTY_SPEC, stats), m, EMPTY_SPEC)
            edges = list(range(len(m.edges)))
            rng.shuffle(edges)
            spec = PartitionSpec(frozenset(edges[: len(edges) // 2]), frozenset())
            fitted = log_likelihood(stats, fit(m, spec, stats), m, spec)
            assert fitted >= base - 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        m, spec, stats = random_instance(rng)
        p1 = fit(m, spec, stats)
        p2 = fit(m, spec, stats)
        assert np.array_equal(p1.u, p2.u) and p1.t1 == p2.t1 and p1.t2 == p2.t2

    def test_zero_events_rejected(self):
        m = build_machine(serial("ab"))
        col = CollapsedAlphabet(("a", "b", "*"), 2, {"a": 0, "b": 1})
        stats = StateStats(col, np.zeros(m.num_states), np.zeros((m.num_states, 3)))
        with pytest.raises(NumericalFitError):
            fit(m, EMPTY_SPEC, stats)

    def test_concavity_along_chords(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            m, spec, stats = random_instance(rng)
            col = stats.collapsed

            def ll(params):
                return log_likelihood(stats, params, m, spec)

            a, b = random_params(rng, col, 2.0), random_params(rng, col, 2.0)
            mid = ModelParams(col, (a.u + b.u) / 2, (a.t1 + b.t1) / 2,
                              (a.t2 + b.t2) / 2, col.star)
            assert ll(mid) >= (ll(a) + ll(b)) / 2 - 1e-9


class TestReach:
    WORKED_PROBS = {"a": 0.4, "b": 0.3, "c": 0.2, "d": 0.06, "e": 0.04}

    def test_worked_example_coefficients_exact(self):
        m = build_machine(diamond())
        stay, edge_p = transition_rates_from_probs(m, self.WORKED_PROBS)
        assert stay.tolist() == [1.0 - 0.4, 1.0 - (0.3 + 0.2), 1.0 - 0.2,
                                 1.0 - 0.3, 1.0 - 0.06, 1.0]
        incoming = {
            s: {(e.src, edge_p[i]) for i, e in enumerate(m.edges) if e.dst == s}
            for s in range(m.num_states)
        }
        assert incoming[4] == {(2, 0.2), (3, 0.3)}
        assert incoming[5] == {(4, 0.06)}

    def test_length_zero_is_point_mass(self):
        m = build_machine(diamond())
        stay, edge_p = transition_rates_from_probs(m, self.WORKED_PROBS)
        table = reach_table(m, stay, edge_p, 0)
        assert table[0, m.source] == 1.0 and table[0].sum() == 1.0

    def test_slices_are_distributions_and_sink_monotone(self):
        m = build_machine(diamond())
        stay, edge_p = transition_rates_from_probs(m, self.WORKED_PROBS)
        table = reach_table(m, stay, edge_p, 40)
        assert np.allclose(table.sum(axis=1), 1.0, atol=1e-9)
        sink = table[:, m.sink]
        assert np.all(np.diff(sink) >= -1e-15)

    def test_exhaustive_class_enumeration(self):
        rng = np.random.default_rng(3)
        alpha = Alphabet("abc")
        for _ in range(8):
            ep = random_strict_episode(rng, "ab", 4)
            m = build_machine(ep)
            col = collapse_alphabet(alpha, ep)
            params = random_params(rng, col)
            edges = list(range(len(m.edges)))
            rng.shuffle(edges)
            spec = PartitionSpec(frozenset(edges[:2]), frozenset(edges[2:4]))
            table = reach_probabilities(m, params, spec, 4)
            exact = np.zeros(m.num_states)
            from episoderank.machine import greedy
            for seq in itertools.product(col.classes, repeat=4):
                exact[greedy(m, seq)] += math.exp(sequence_log_prob(m, params, spec, seq))
            assert np.abs(exact - table[4]).max() < 1e-12

    def test_empty_spec_equals_direct_independence_recursion(self):
        m = build_machine(diamond())
        col = CollapsedAlphabet(("a", "b", "c", "d", "*"), 4,
                                {lab: i for i, lab in enumerate("abcd")})
        u = np.array([math.log(p) for p in (0.4, 0.3, 0.2, 0.06)] + [math.log(0.04)])
        params = ModelParams(col, u, 0.0, 0.0, 4)
        stay_m, edge_m = transition_rates(m, params, EMPTY_SPEC)
        stay_d, edge_d = transition_rates_from_probs(m, self.WORKED_PROBS)
        assert np.abs(stay_m - stay_d).max() < 1e-15
        assert np.abs(edge_m - edge_d).max() < 1e-15

    def test_boost_monotone_in_t1(self):
        ep = serial("abc")
        m = build_machine(ep)
        col = CollapsedAlphabet(("a", "b", "c", "*"), 3, {"a": 0, "b": 1, "c": 2})
        inner = block_prefix(m, 0b111)
        spec = PartitionSpec(inner, frozenset())
        u = np.array([math.log(0.1)] * 3 + [0.0])
        previous = -1.0
        for t1 in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]:
            params = ModelParams(col, u, t1, 0.0, 3)
            sink_p = reach_probabilities(m, params, spec, 12)[12, m.sink]
            assert sink_p >= previous
            previous = sink_p


class TestCollapseEquivalence:
    def test_rank_identical_with_and_without_collapsing(self):
        # same fitted rank whether noise symbols are pooled or kept separate
        from episoderank.ranking import rank

        rng = np.random.default_rng(12)
        rows = []
        for _ in range(100):
            seq = list(rng.choice(list("uvwxyz"), size=10))
            if rng.random() < 0.5:
                pos = int(rng.integers(0, 8))
                seq[pos:pos + 2] = ["a", "b"]
            rows.append("".join(seq))
        ds = dataset_from_strings(rows)
        ep = serial("ab")
        m = build_machine(ep)

        for collapsed in (collapse_alphabet(ds.alphabet, ep), identity_collapse(ds.alphabet)):
            stats, observed = collect_statistics(m, ds, collapsed)
            spec = PartitionSpec(frozenset([1]), frozenset())  # boost b after a
            results = []
            for s in (EMPTY_SPEC, spec):
                params = fit(m, s, stats, grad_tol=1e-12)
                results.append(rank(m, params, s, ds, observed))
            if collapsed.star == 2:
                base = results
            else:
                assert results[0].rank == pytest.approx(base[0].rank, abs=1e-9)
                assert results[1].rank == pytest.approx(base[1].rank, abs=1e-9)
