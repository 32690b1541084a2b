import itertools

import numpy as np
import pytest
from scipy.special import digamma, gammaln

from basketlda.corpus import Basket, Vocabulary
from basketlda.generator import sample_dirichlet, simulate
from basketlda.inference import (
    GIBBS_MAX_TOKENS, OnlineLDA, TopicModel, TrainConfig, _flatten, _gibbs_sweep,
    dirichlet_expectation, fold_in, infer_mixture, infer_mixtures, local_elbo, local_step,
    train_gibbs, train_online_vb,
)
from basketlda.metrics import match_topics

from helpers import toy_corpus, toy_model


def naive_local(ids, cts, weights, alpha, tol, max_iter):
    """One basket, written as the textbook loop."""
    K = weights.shape[0]
    gamma = np.full(K, alpha) + cts.sum() / K
    for _ in range(max_iter):
        e = np.exp(digamma(gamma) - digamma(gamma.sum()))
        resp = e[:, None] * weights[:, ids]
        resp /= resp.sum(axis=0)
        new = alpha + resp @ cts
        change = np.mean(np.abs(new / new.sum() - gamma / gamma.sum()))
        gamma = new
        if change < tol:
            break
    return gamma


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig(K=25)
        assert (cfg.alpha, cfg.max_epochs, cfg.minibatch_size) == (0.1, 500, 4096)
        assert (cfg.learning_offset, cfg.decay, cfg.convergence_tol) == (1024.0, 0.51, 1e-4)
        assert cfg.topic_prior == pytest.approx(1 / 25)

    @pytest.mark.parametrize("kw", [dict(K=0), dict(K=2, alpha=0), dict(K=2, decay=0.5),
                                    dict(K=2, beta=-1.0), dict(K=2, init="kmeans")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_dirichlet_expectation_monte_carlo(rng):
    alpha = np.array([0.4, 1.5, 3.0])
    draws = sample_dirichlet(rng, alpha, size=400_000)
    assert np.allclose(np.log(draws).mean(axis=0), dirichlet_expectation(alpha), atol=1e-2)


class TestLocalStep:
    @pytest.fixture
    def problem(self, rng):
        K, V = 4, 15
        weights = sample_dirichlet(rng, np.full(V, 0.3), size=K)
        baskets = []
        for d in range(6):
            ids = np.sort(rng.choice(V, size=rng.integers(1, 8), replace=False))
            baskets.append(Basket(f"b{d}", None, None, ids, rng.integers(1, 4, size=ids.size)))
        return weights, baskets

    def test_matches_naive_loop(self, problem):
        weights, baskets = problem
        indptr, ids, cts, doc_of = _flatten(baskets)
        gamma, _ = local_step(ids, cts, indptr, doc_of, weights, 0.1, tol=1e-6, max_iter=500)
        for d, b in enumerate(baskets):
            ref = naive_local(b.ids, b.counts.astype(float), weights, 0.1, 1e-6, 500)
            assert np.allclose(gamma[d], ref, rtol=1e-10)

    def test_sufficient_statistics_sum_to_tokens(self, problem):
        weights, baskets = problem
        indptr, ids, cts, doc_of = _flatten(baskets)
        gamma, sstats = local_step(ids, cts, indptr, doc_of, weights, 0.1)
        assert sstats.sum() == pytest.approx(cts.sum(), rel=1e-12)
        assert np.allclose(gamma.sum(axis=1), 4 * 0.1 + np.add.reduceat(cts, indptr[:-1]), rtol=1e-4)

    def test_objective_never_decreases(self, problem):
        weights, baskets = problem
        indptr, ids, cts, doc_of = _flatten(baskets)
        history = []
        local_step(ids, cts, indptr, doc_of, weights, 0.1, tol=1e-9, max_iter=200, history=history)
        log_w = np.log(weights)
        for d, b in enumerate(baskets):
            vals = [local_elbo(g[d], b.ids, b.counts, log_w, 0.1) for g in history]
            assert np.all(np.diff(vals) >= -1e-9)


class TestOnlineVB:
    def test_single_topic_is_smoothed_frequency(self):
        corpus = toy_corpus([{0: 3, 1: 1}, {1: 2, 3: 5}, {2: 1}])
        model = train_online_vb(corpus, TrainConfig(K=1, beta=0.5))
        counts = np.array([3, 3, 1, 5])
        assert np.allclose(model.phi[0], (counts + 0.5) / (12 + 4 * 0.5), rtol=0, atol=1e-15)

    def test_minibatch_path_recovers_topics(self):
        corpus, truth = simulate(3, 60, 1500, seed=21)
        model = train_online_vb(corpus, TrainConfig(K=3, beta=0.01, minibatch_size=256, seed=1))
        _, tv = match_topics(truth.phi, model.phi)
        assert tv < 0.1
        assert np.allclose(model.phi.sum(axis=1), 1.0)

    def test_stops_on_tolerance(self):
        corpus, _ = simulate(2, 30, 300, seed=22)
        cfg = TrainConfig(K=2, convergence_tol=1e-2, seed=3)
        lda = OnlineLDA(cfg).fit(corpus)
        tr = lda.trace_
        assert len(tr) < cfg.max_epochs
        assert abs(tr[-1] - tr[-2]) < 1e-2 * abs(tr[-2])
        assert lda.updates_ == len(tr)

    def test_max_epochs_cap(self):
        corpus, _ = simulate(2, 30, 100, seed=23)
        model = train_online_vb(corpus, TrainConfig(K=2, max_epochs=3, convergence_tol=1e-12))
        assert model.trace.size == 3

    def test_deterministic(self):
        corpus, _ = simulate(3, 40, 200, seed=24)
        a = train_online_vb(corpus, TrainConfig(K=3, seed=5, max_epochs=20))
        b = train_online_vb(corpus, TrainConfig(K=3, seed=5, max_epochs=20))
        assert np.array_equal(a.phi, b.phi) and np.array_equal(a.trace, b.trace)

    def test_warns_when_k_exceeds_v(self):
        corpus = toy_corpus([{0: 2, 1: 1}, {1: 3}])
        with pytest.warns(UserWarning, match="exceeds the vocabulary"):
            train_online_vb(corpus, TrainConfig(K=3, max_epochs=2))


def collapsed_joint(z, words, K, V, alpha, beta):
    """log p(z, w) for a single basket with the Dirichlets integrated out."""
    ndk = np.bincount(z, minlength=K)
    out = gammaln(K * alpha) - gammaln(len(z) + K * alpha)
    out += np.sum(gammaln(ndk + alpha) - gammaln(alpha))
    for k in range(K):
        nkw = np.bincount(np.asarray(words)[np.asarray(z) == k], minlength=V)
        out += gammaln(V * beta) - gammaln(nkw.sum() + V * beta)
        out += np.sum(gammaln(nkw + beta) - gammaln(beta))
    return out


class TestGibbs:
    def test_sweep_targets_collapsed_posterior(self):
        # enumerate all assignments of a 3-token basket and compare with the chain
        words, K, V, alpha, beta = [0, 1, 1], 2, 2, 0.5, 0.3
        states = list(itertools.product(range(K), repeat=len(words)))
        logp = np.array([collapsed_joint(np.array(s), words, K, V, alpha, beta) for s in states])
        exact = np.exp(logp - logp.max())
        exact /= exact.sum()

        rng = np.random.default_rng(0)
        z = [0, 0, 0]
        ndk = [[3, 0]]
        nkw = [[1, 2], [0, 0]]
        nk = [3, 0]
        seen = np.zeros(len(states))
        n_sweeps = 40_000
        for _ in range(n_sweeps):
            _gibbs_sweep(words, [0, 0, 0], z, rng.random(3).tolist(), ndk, nkw, nk,
                         alpha, beta, V * beta, K)
            seen[states.index(tuple(z))] += 1
        assert np.abs(seen / n_sweeps - exact).max() < 0.01

    def test_single_topic_matches_vb(self):
        corpus = toy_corpus([{0: 3, 1: 1}, {1: 2, 3: 5}, {2: 1}])
        cfg = TrainConfig(K=1, beta=0.2)
        g = train_gibbs(corpus, cfg, burn_in=2, samples=3)
        v = train_online_vb(corpus, cfg)
        assert np.array_equal(g.phi, v.phi)

    def test_deterministic(self):
        corpus, _ = simulate(2, 15, 40, seed=25)
        cfg = TrainConfig(K=2, seed=4)
        a = train_gibbs(corpus, cfg, 10, 5)
        b = train_gibbs(corpus, cfg, 10, 5)
        assert np.array_equal(a.phi, b.phi) and np.array_equal(a.trace, b.trace)
        assert a.trace.size == 15 and a.method == "gibbs"

    @pytest.mark.parametrize("burn_in,samples", [(-1, 5), (5, 0), (400, 200)])
    def test_bad_schedule(self, burn_in, samples):
        corpus = toy_corpus([{0: 1, 1: 1}])
        with pytest.raises(ValueError):
            train_gibbs(corpus, TrainConfig(K=2), burn_in, samples)

    def test_token_limit(self):
        corpus = toy_corpus([{0: GIBBS_MAX_TOKENS, 1: 1}])
        with pytest.raises(ValueError, match="Gibbs is limited"):
            train_gibbs(corpus, TrainConfig(K=2), 1, 1)


class TestFoldIn:
    def test_single_topic(self):
        model = toy_model([[0.5, 0.25, 0.25]])
        theta = infer_mixture(model, Basket("x", None, None, np.array([0, 2]), np.array([1, 3])))
        assert theta.tolist() == [1.0]

    def test_one_hot_topics(self, rng):
        K, V = 4, 12
        phi = np.full((K, V), 1e-6)
        blocks = np.array_split(np.arange(V), K)
        for k, cols in enumerate(blocks):
            phi[k, cols] = 1.0
        phi /= phi.sum(axis=1, keepdims=True)
        model = toy_model(phi, alpha=0.1)
        for k, cols in enumerate(blocks):
            ids = rng.choice(cols, size=20)
            u, c = np.unique(ids, return_counts=True)
            theta = infer_mixture(model, Basket("x", None, None, u, c))
            assert theta[k] > 0.9

    def test_item_order_irrelevant(self, rng):
        model = toy_model(sample_dirichlet(rng, np.full(10, 0.5), size=3))
        ids, cts = np.array([1, 4, 6, 9]), np.array([2, 1, 3, 1])
        perm = rng.permutation(4)
        a = infer_mixture(model, Basket("x", None, None, ids, cts))
        b = infer_mixture(model, Basket("x", None, None, ids[perm], cts[perm]))
        assert np.array_equal(a, b)

    def test_vocabulary_remap(self):
        model = toy_model([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]], products=["a", "b", "c"])
        other = Vocabulary(["c", "z"])
        with pytest.warns(UserWarning, match="unknown products"):
            theta = infer_mixture(model, Basket("x", None, None, np.array([0, 1]), np.array([5, 2])), other)
        assert theta[1] > theta[0]
        with pytest.raises(ValueError, match="no in-vocabulary items"):
            with pytest.warns(UserWarning):
                infer_mixture(model, Basket("y", None, None, np.array([1]), np.array([1])), other)

    def test_batch_marks_empty_baskets(self):
        model = toy_model([[0.5, 0.5], [0.9, 0.1]], products=["a", "b"])
        corpus = toy_corpus([{0: 1}, {1: 2}], products=["a", "q"])
        with pytest.warns(UserWarning):
            theta, valid = infer_mixtures(model, corpus)
        assert valid.tolist() == [True, False]
        assert np.isnan(theta[1]).all() and theta[0].sum() == pytest.approx(1.0)

    def test_empty_document_gets_uniform(self):
        theta = fold_in(np.array([[0.5, 0.5], [0.2, 0.8]]), 0.1, [(np.array([], int), np.array([], int))])
        assert theta.tolist() == [[0.5, 0.5]]


class TestModelFile:
    def test_roundtrip_and_bytes(self, tmp_path):
        corpus, _ = simulate(2, 20, 50, seed=26)
        model = train_online_vb(corpus, TrainConfig(K=2, max_epochs=5))
        model.save(tmp_path / "a.bin")
        model.save(tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        back = TopicModel.load(tmp_path / "a.bin")
        assert np.array_equal(back.phi, model.phi) and back.vocab == model.vocab
        assert np.array_equal(back.product_counts, corpus.product_counts())
        assert (back.alpha, back.beta, back.method) == (0.1, 0.5, "online-vb")

    def test_permuted(self):
        model = toy_model([[0.5, 0.5], [0.9, 0.1]])
        assert model.permuted([1, 0]).phi.tolist() == [[0.9, 0.1], [0.5, 0.5]]

    def test_vocab_mismatch_rejected(self):
        with pytest.raises(ValueError, match="vocabulary"):
            TopicModel(np.ones((2, 3)) / 3, 0.1, 0.1, Vocabulary(["a", "b"]))
