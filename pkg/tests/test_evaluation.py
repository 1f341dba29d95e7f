import json
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

import oracles
from dynex.errors import DomainError
from dynex.evaluation import (
    EvalOptions,
    EvalReport,
    FoldReport,
    cross_validate,
    dirichlet_multinomial_score,
    equiprobable_score,
    evaluate_fold,
    map_communities,
    negative_pairs,
    nmi,
    permutation_accuracy,
    predict_edge_prob,
    roc_auc,
    write_communities_csv,
    write_scores_csv,
)
from dynex.generative import Dynamics
from dynex.inference import FitOptions, fit_once, init_state
from dynex.temporal_graph import TemporalNetwork, holdout_split
from instances import random_instance, random_network


def _all_pairs(V, self_pairs=False):
    return [(i, j) for i in range(V) for j in range(i if self_pairs else i + 1, V)]


def _frozen(net, M, h_last, k_last):
    """State whose slice-T marginals are point masses at the given values."""
    state, params = init_state(net, M, np.random.default_rng(0), Dynamics.RW)
    state.h_q.coef[:] = 0.0
    state.h_q.loc[:, -1] = h_last
    state.h_q.log_scale[:] = -np.inf
    state.k_q.coef[:] = 0.0
    state.k_q.loc[-1] = k_last
    state.k_q.log_scale[:] = -np.inf
    return state, params


def _triangle(T=1):
    return TemporalNetwork.from_labeled_edges(T, [(T, "a", "b"), (T, "b", "c"), (T, "a", "c")])


class TestPredictEdgeProb:
    def test_uniform_states(self):
        net = TemporalNetwork.from_labeled_edges(1, [(1, "a", "b"), (1, "c", "d")])
        state, params = _frozen(net, 1, np.zeros((4, 1)), np.zeros(1))
        scores = predict_edge_prob(state, params, net, _all_pairs(4), S=3)
        np.testing.assert_allclose(scores, 2 / 16, rtol=1e-14)

    def test_exact_enumeration(self):
        net = _triangle()
        rng = np.random.default_rng(1)
        h, k = rng.standard_normal((3, 2)), rng.standard_normal(2)
        state, params = _frozen(net, 2, h, k)
        pairs = _all_pairs(3, self_pairs=True)
        scores = predict_edge_prob(state, params, net, pairs, S=7)
        ref = oracles.exact_pair_probs(k, h)
        np.testing.assert_allclose(scores, [ref[p] for p in pairs], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_single_draw_is_a_distribution(self, seed):
        net, state, params = random_instance(seed, V=6)
        V = net.n_vertices
        scores = predict_edge_prob(state, params, net, _all_pairs(V, True), S=1,
                                   rng=np.random.default_rng(seed))
        assert np.all(scores >= 0)
        assert scores.sum() == pytest.approx(1.0, abs=1e-9)

    def test_symmetric(self):
        net, state, params = random_instance(4)
        pairs = np.array(_all_pairs(net.n_vertices))
        a = predict_edge_prob(state, params, net, pairs, S=50, rng=np.random.default_rng(0))
        b = predict_edge_prob(state, params, net, pairs[:, ::-1], S=50, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(a, b)

    def test_chunking_does_not_change_scores(self):
        net, state, params = random_instance(5)
        pairs = _all_pairs(net.n_vertices)
        a = predict_edge_prob(state, params, net, pairs, S=20, rng=np.random.default_rng(0))
        b = predict_edge_prob(state, params, net, pairs, S=20, rng=np.random.default_rng(0), chunk=50)
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_errors(self):
        net, state, params = random_instance(6)
        with pytest.raises(DomainError, match="unknown vertex"):
            predict_edge_prob(state, params, net, [(0, net.n_vertices)])
        with pytest.raises(DomainError):
            predict_edge_prob(state, params, net, [(0, 1)], S=0)


score_lists = st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=200).filter(
    lambda xs: 0 < sum(y for _, y in xs) < len(xs)
)


class TestRocAuc:
    def test_separated(self):
        _, auc = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0

    def test_all_tied(self):
        _, auc = roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1])
        assert auc == 0.5

    def test_example(self):
        (fpr, tpr), auc = roc_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert auc == 0.75
        assert fpr.tolist() == [0.0, 0.0, 0.5, 0.5, 1.0]
        assert tpr.tolist() == [0.0, 0.5, 0.5, 1.0, 1.0]

    def test_single_class(self):
        with pytest.raises(DomainError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            roc_auc([0.1, 0.2], [1])

    @given(score_lists)
    @settings(max_examples=200, deadline=None)
    def test_brute_force_and_curve_shape(self, items):
        scores = [s / 7 for s, _ in items]
        labels = [y for _, y in items]
        (fpr, tpr), auc = roc_auc(scores, labels)
        assert auc == pytest.approx(oracles.brute_force_auc(scores, labels), abs=1e-12)
        assert 0.0 <= auc <= 1.0
        assert (fpr[0], tpr[0]) == (0.0, 0.0)
        assert (fpr[-1], tpr[-1]) == (1.0, 1.0)
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        # trapezoid area under the threshold sweep is the same statistic
        assert np.trapezoid(tpr, fpr) == pytest.approx(auc, abs=1e-12)


class TestCommunitiesAndNmi:
    class _S:
        def __init__(self, pi):
            self.pi = np.asarray(pi, float)

    def test_map_communities(self):
        pi = [[0.9, 0.1, 0.0], [0.5, 0.5, 0.0], [0.2, 0.5, 0.3]]
        assert map_communities(self._S(pi)).tolist() == [1, 1, 2]

    def test_identical(self):
        assert nmi([1, 1, 2, 2, 3], [1, 1, 2, 2, 3]) == pytest.approx(1.0)

    def test_relabelled(self):
        assert nmi([1, 1, 2, 2], [7, 7, 3, 3]) == pytest.approx(1.0)

    def test_independent(self):
        assert nmi([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(0.0, abs=1e-15)

    def test_degenerate(self):
        assert nmi([1, 1, 1], [2, 2, 2]) == 1.0
        assert nmi([1, 1, 1], [1, 2, 2]) == 0.0

    def test_errors(self):
        with pytest.raises(DomainError):
            nmi([1, 2], [1])
        with pytest.raises(DomainError):
            nmi([], [])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance_and_reference(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 60))
        a = rng.integers(0, 4, n)
        b = rng.integers(0, 3, n)
        value = nmi(a, b)
        relabel_a = rng.permutation(4)[a]
        relabel_b = rng.permutation(3)[b] + 10
        assert nmi(relabel_a, relabel_b) == pytest.approx(value, abs=1e-12)
        assert nmi(b, a) == pytest.approx(value, abs=1e-12)
        if len(set(a)) > 1 and len(set(b)) > 1:
            ref = normalized_mutual_info_score(a, b, average_method="geometric")
            assert value == pytest.approx(ref, abs=1e-10)

    def test_permutation_accuracy(self):
        assert permutation_accuracy([2, 2, 1, 1], [1, 1, 2, 2]) == 1.0
        assert permutation_accuracy([1, 1, 1, 2], [2, 2, 1, 1]) == 0.75
        assert permutation_accuracy([1, 2, 3], [1, 1, 1]) == pytest.approx(1 / 3)


class TestBaselines:
    def _abc(self):
        return TemporalNetwork.from_labeled_edges(1, [(1, "a", "b"), (1, "a", "b"), (1, "a", "c")])

    def test_dirichlet_example(self):
        net = self._abc()
        a, b, c = (net.vertex_id(x) for x in "abc")
        scores = dirichlet_multinomial_score(net, [(a, b), (a, c), (b, c)], alpha=1.0)
        np.testing.assert_allclose(scores, [3 / 6, 2 / 6, 1 / 6], rtol=1e-15)

    def test_dirichlet_counts_across_slices_and_order(self):
        net = TemporalNetwork.from_labeled_edges(2, [(1, "a", "b"), (2, "b", "a"), (2, "b", "c")])
        a, b, c = (net.vertex_id(x) for x in "abc")
        s = dirichlet_multinomial_score(net, [(b, a), (a, b), (c, b), (a, c)], alpha=2.0)
        np.testing.assert_allclose(s, np.array([4, 4, 3, 2]) / (3 + 2 * 3))

    def test_dirichlet_large_alpha_is_uniform(self):
        net = self._abc()
        s = dirichlet_multinomial_score(net, _all_pairs(3), alpha=1e12)
        np.testing.assert_allclose(s, 1 / 3, rtol=1e-9)

    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_dirichlet_preserves_count_order(self, seed, alpha):
        net = random_network(np.random.default_rng(seed), V=6)
        pairs = _all_pairs(net.n_vertices)
        counts = [sum(s.counts()[p] for s in net.slices) for p in pairs]
        scores = dirichlet_multinomial_score(net, pairs, alpha)
        for i in range(len(pairs)):
            for j in range(len(pairs)):
                if counts[i] < counts[j]:
                    assert scores[i] < scores[j]

    def test_dirichlet_alpha_domain(self):
        with pytest.raises(DomainError):
            dirichlet_multinomial_score(self._abc(), [(0, 1)], alpha=0.0)

    def test_equiprobable(self):
        assert equiprobable_score(10) == pytest.approx(1 / 90)
        assert equiprobable_score(2) == 0.5
        with pytest.raises(DomainError):
            equiprobable_score(1)
        _, auc = roc_auc(np.full(7, equiprobable_score(5)), [1, 0, 0, 1, 0, 0, 0])
        assert auc == 0.5


def _split_net():
    rng = np.random.default_rng(3)
    return random_network(rng, T=3, V=8, per_slice=12)


class TestEvaluateFold:
    def test_pair_bookkeeping(self):
        net = _split_net()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            folds = holdout_split(net, 2, seed=0)
        for train, held in folds:
            neg = {tuple(p) for p in negative_pairs(train, held).tolist()}
            assert not neg & set(held)
            assert not neg & set(train.slice(train.T).distinct())
            rep = evaluate_fold(train, held, options=EvalOptions(methods=("dirichlet", "equiprobable")))
            scored = {tuple(p) for p in rep.pairs.tolist()}
            assert set(held) <= scored
            assert rep.n_positive == len(held) and rep.n_negative == len(neg)
            assert rep.auc["equiprobable"] == 0.5

    def test_model_needs_fit(self):
        net = _split_net()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train, held = holdout_split(net, 2, seed=0)[0]
        with pytest.raises(DomainError):
            evaluate_fold(train, held, None)

    def test_empty_negative_set(self):
        net = TemporalNetwork.from_labeled_edges(2, [(1, "a", "b"), (1, "a", "c"), (1, "b", "c"),
                                                     (2, "a", "b"), (2, "a", "c"), (2, "b", "c")])
        _, held = holdout_split(net, 3, seed=0)[0]
        train = net
        with pytest.raises(DomainError, match="negative"):
            evaluate_fold(train, held, options=EvalOptions(methods=("dirichlet",)))

    def test_vanishing_alpha_matches_count_ranking(self):
        net = _split_net()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train, held = holdout_split(net, 2, seed=1)[0]
        rep = evaluate_fold(train, held, options=EvalOptions(methods=("dirichlet",), alpha=1e-9))
        counts = np.array([sum(s.counts()[tuple(p)] for s in train.slices) for p in rep.pairs.tolist()])
        _, auc_counts = roc_auc(counts, rep.is_positive)
        assert rep.auc["dirichlet"] == pytest.approx(auc_counts, abs=1e-12)

    def test_options_validation(self):
        with pytest.raises(DomainError):
            EvalOptions(samples=0)
        with pytest.raises(DomainError):
            EvalOptions(methods=("oracle",))


class TestCrossValidate:
    def test_report_and_outputs(self, tmp_path):
        net = _split_net()
        fo = FitOptions(dynamics=Dynamics.RW, iterations=40, restarts=1, warmup_cycles=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report, fits = cross_validate(net, 2, folds=2, fit_options=fo, options=EvalOptions(samples=20))
        assert len(report.folds) == 2 and len(fits) == 2
        for f in report.folds:
            assert set(f.auc) == {"model", "dirichlet", "equiprobable"}
            assert all(0 <= a <= 1 for a in f.auc.values())
        d = report.to_dict()
        assert d["mean_auc"]["equiprobable"] == 0.5
        assert d["stderr_auc"]["equiprobable"] == 0.0
        report.write_json(tmp_path / "r.json")
        back = json.loads((tmp_path / "r.json").read_text())
        assert back["folds"][0]["roc"]["model"]["fpr"][0] == 0.0

        f = report.folds[0]
        write_scores_csv(tmp_path / "s.csv", f.train, f.pairs, f.scores["model"], f.is_positive)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "u,v,score,label"
        assert len(lines) == 1 + f.n_positive + f.n_negative
        write_communities_csv(tmp_path / "c.csv", f.train, f.communities)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "t,i,u,v,label"
        assert len(lines) == 1 + f.train.n_edges

    def test_stderr(self):
        rep = EvalReport([FoldReport(1, 1, 1, auc={"m": 0.6}), FoldReport(2, 1, 1, auc={"m": 0.8})])
        assert rep.mean_auc("m") == pytest.approx(0.7)
        assert rep.stderr_auc("m") == pytest.approx(np.std([0.6, 0.8], ddof=1) / np.sqrt(2))


def test_structured_optimum_beats_homogeneous_and_ranks_pairs():
    # two disjoint cliques in every slice
    left, right = "abcd", "wxyz"
    triples = []
    for t in (1, 2, 3):
        for grp in (left, right):
            triples += [(t, grp[i], grp[j]) for i in range(4) for j in range(i + 1, 4)] * 2
    net = TemporalNetwork.from_labeled_edges(3, triples)
    ids = {c: net.vertex_id(c) for c in left + right}
    opts = FitOptions(dynamics=Dynamics.RW, iterations=3000, restarts=1, warmup_cycles=0)

    rng = np.random.default_rng(0)
    state, params = init_state(net, 2, rng, Dynamics.RW)
    for c in left:
        state.h_q.loc[ids[c], 0] = [1.5, -1.5]
    for c in right:
        state.h_q.loc[ids[c], 0] = [-1.5, 1.5]
    params = replace(params, B_chol=np.eye(2))
    s, p, _, structured = fit_once(net, 2, opts, rng, init=(state, params))
    # from the default start this small input settles on equal vertex states
    _, _, _, homogeneous = fit_once(net, 2, opts, np.random.default_rng(0))
    assert structured > homogeneous

    within = predict_edge_prob(s, p, net, [(ids["a"], ids["b"]), (ids["w"], ids["x"])])
    across = predict_edge_prob(s, p, net, [(ids["a"], ids["w"]), (ids["b"], ids["x"])])
    assert within.min() > 5 * across.max()
