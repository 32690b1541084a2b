"""LDA fitting: online variational Bayes, a collapsed Gibbs cross-check, and fold-in.

The variational code follows the usual mean-field scheme: a local step fits
per-basket Dirichlet parameters ``gamma`` with the topics held fixed, and a
global step blends minibatch sufficient statistics into the topic
parameters ``lambda`` with step size ``(tau0 + t) ** -kappa``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from ._io import read_container, write_container
from .corpus import Basket, BasketCorpus, Vocabulary

MODEL_VERSION = "model-v1"

# dense count arrays and a pure-Python sweep; beyond this use online VB
GIBBS_MAX_TOKENS = 500_000

LOCAL_TOL = 1e-3
LOCAL_MAX_ITER = 100


@dataclass(frozen=True)
class TrainConfig:
    K: int
    alpha: float = 0.1
    beta: Optional[float] = None
    max_epochs: int = 500
    minibatch_size: int = 4096
    learning_offset: float = 1024.0
    decay: float = 0.51
    seed: int = 0
    convergence_tol: float = 1e-4
    init: str = "seeded"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")
        if not self.learning_offset > 0:
            raise ValueError("learning_offset must be positive")
        if not 0.5 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0.5, 1]")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.init not in ("seeded", "random"):
            raise ValueError(f"unknown init {self.init!r} (expected 'seeded' or 'random')")

    @property
    def topic_prior(self):
        """Symmetric topic-product concentration; ``1/K`` unless set."""
        return 1.0 / self.K if self.beta is None else float(self.beta)


@dataclass(eq=False)
class TopicModel:
    phi: np.ndarray
    alpha: float
    beta: float
    vocab: Vocabulary
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    product_counts: Optional[np.ndarray] = None
    method: str = "online-vb"

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.trace = np.asarray(self.trace, dtype=np.float64)
        if self.phi.ndim != 2:
            raise ValueError("phi must be K x V")
        if self.phi.shape[1] != self.vocab.V:
            raise ValueError("phi width does not match the vocabulary")
        if self.product_counts is not None:
            self.product_counts = np.asarray(self.product_counts, dtype=np.int64)

    @property
    def K(self):
        return self.phi.shape[0]

    @property
    def V(self):
        return self.phi.shape[1]

    def permuted(self, perm):
        """Copy with topics relabelled so that new topic ``i`` is old topic ``perm[i]``."""
        return TopicModel(self.phi[np.asarray(perm)], self.alpha, self.beta, self.vocab,
                          self.trace, self.product_counts, self.method)

    def save(self, path):
        header = {
            "K": self.K, "V": self.V,
            "alpha": float(self.alpha), "beta": float(self.beta),
            "method": self.method,
            "vocab_hash": self.vocab.digest(),
            "products": list(self.vocab.products),
        }
        arrays = {"phi": self.phi, "trace": self.trace}
        if self.product_counts is not None:
            arrays["product_counts"] = self.product_counts
        write_container(path, MODEL_VERSION, header, arrays)

    @classmethod
    def load(cls, path):
        header, arr = read_container(path, MODEL_VERSION)
        vocab = Vocabulary(header["products"])
        if vocab.digest() != header["vocab_hash"]:
            raise ValueError(f"{path}: vocabulary hash mismatch")
        return cls(arr["phi"], header["alpha"], header["beta"], vocab, arr["trace"],
                   arr.get("product_counts"), header["method"])


# -- shared numerics ---------------------------------------------------------

def dirichlet_expectation(alpha):
    """``E[log x]`` for ``x ~ Dir(alpha)``, row-wise for 2-D input."""
    if alpha.ndim == 1:
        return digamma(alpha) - digamma(alpha.sum())
    return digamma(alpha) - digamma(alpha.sum(axis=1))[:, None]


def _smoothed(counts, beta):
    counts = np.asarray(counts, dtype=np.float64)
    V = counts.shape[1]
    return (counts + beta) / (counts.sum(axis=1, keepdims=True) + V * beta)


def _flatten(baskets):
    """Flat CSR-style arrays for a sequence of baskets."""
    lengths = np.fromiter((b.ids.size for b in baskets), dtype=np.int64, count=len(baskets))
    indptr = np.zeros(len(baskets) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    ids = np.concatenate([b.ids for b in baskets]).astype(np.int64)
    cts = np.concatenate([b.counts for b in baskets]).astype(np.float64)
    doc_of = np.repeat(np.arange(len(baskets)), lengths)
    return indptr, ids, cts, doc_of


def local_step(ids, cts, indptr, doc_of, topic_weights, alpha,
               tol=LOCAL_TOL, max_iter=LOCAL_MAX_ITER, history=None, gamma0=None):
    """Fit per-basket ``gamma`` with topics fixed.

    ``topic_weights`` is the K x V matrix ``exp(E[log phi])`` (or plain
    ``phi`` for fold-in with a point estimate). A basket stops updating once
    the mean absolute change of its normalised ``gamma`` drops below
    ``tol``. ``gamma0`` defaults to ``alpha + N_d / K``. Returns
    ``(gamma, sstats)`` where ``sstats[k, w]`` is the expected count of
    product ``w`` assigned to topic ``k``.
    """
    n_docs = indptr.size - 1
    K, V = topic_weights.shape
    weights = topic_weights[:, ids].T
    if gamma0 is None:
        lengths = np.add.reduceat(cts, indptr[:-1])
        gamma = np.full((n_docs, K), alpha) + (lengths / K)[:, None]
    else:
        gamma = np.array(gamma0, dtype=np.float64)
    exp_elog = np.exp(dirichlet_expectation(gamma))
    if history is not None:
        history.append(gamma.copy())

    # working set of unconverged baskets, compacted as it shrinks
    docs = np.arange(n_docs)
    w_weights, w_cts, w_doc, w_ptr = weights, cts, doc_of, indptr
    for _ in range(max_iter):
        g = gamma[docs]
        e = exp_elog[docs]
        norm = np.einsum("nk,nk->n", e[w_doc], w_weights) + 1e-100
        stats = np.add.reduceat((w_cts / norm)[:, None] * w_weights, w_ptr[:-1], axis=0)
        new_g = alpha + e * stats
        change = np.abs(new_g / new_g.sum(1, keepdims=True)
                        - g / g.sum(1, keepdims=True)).mean(axis=1)
        gamma[docs] = new_g
        exp_elog[docs] = np.exp(dirichlet_expectation(new_g))
        if history is not None:
            history.append(gamma.copy())
        keep = change >= tol
        if not keep.any():
            break
        if not keep.all():
            sizes = np.diff(w_ptr)
            tok_keep = np.repeat(keep, sizes)
            w_weights, w_cts = w_weights[tok_keep], w_cts[tok_keep]
            new_sizes = sizes[keep]
            w_ptr = np.zeros(new_sizes.size + 1, dtype=np.int64)
            np.cumsum(new_sizes, out=w_ptr[1:])
            w_doc = np.repeat(np.arange(new_sizes.size), new_sizes)
            docs = docs[keep]
    norm = np.einsum("nk,nk->n", exp_elog[doc_of], weights) + 1e-100
    resp = (cts / norm)[:, None] * exp_elog[doc_of]
    sstats = np.empty((K, V))
    for k in range(K):
        sstats[k] = np.bincount(ids, weights=resp[:, k], minlength=V)
    sstats *= topic_weights
    return gamma, sstats


def local_elbo(gamma, ids, cts, log_topics, alpha):
    """Per-basket variational objective with the token responsibilities optimised out.

    ``log_topics`` is ``E[log phi]`` (K x V); the basket's topic
    responsibilities are set to their optimum given ``gamma``.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    K = gamma.size
    elog = dirichlet_expectation(gamma)
    score = np.sum(cts * logsumexp(elog[:, None] + log_topics[:, ids], axis=0))
    score += np.sum((alpha - gamma) * elog)
    score += np.sum(gammaln(gamma)) - gammaln(gamma.sum())
    score += gammaln(K * alpha) - K * gammaln(alpha)
    return float(score)


def _token_loglik(theta, phi, ids, cts, doc_of):
    p = np.einsum("nk,kn->n", theta[doc_of], phi[:, ids])
    return float(np.dot(cts, np.log(p)))


# -- online variational Bayes --------------------------------------------------

SEED_BASKETS = 10


def _initial_topics(csr, K, beta, init, rng):
    """Starting ``lambda``.

    ``"random"`` draws every entry from Gamma(100, 1/100). ``"seeded"`` starts
    each topic from the pooled counts of ``SEED_BASKETS`` random baskets,
    rescaled so every topic carries ``1/K`` of the corpus tokens, plus the
    same Gamma jitter; this avoids most merged-topic optima that the flat
    start falls into.
    """
    D, V = csr.shape
    jitter = rng.gamma(100.0, 1.0 / 100.0, size=(K, V))
    if init == "random":
        return jitter
    total = csr.sum()
    lam = np.empty((K, V))
    for k in range(K):
        pick = np.sort(rng.choice(D, size=min(SEED_BASKETS, D), replace=False))
        row = np.asarray(csr[pick].sum(axis=0)).ravel()
        lam[k] = row / row.sum() * (total / K)
    return beta + lam + jitter

class OnlineLDA:
    """Online variational Bayes for LDA over a :class:`BasketCorpus`.

    After :meth:`fit`, ``lambda_`` holds the topic Dirichlet parameters,
    ``gamma_`` the last local-step parameters per training basket and
    ``trace_`` the per-epoch training log-perplexity.
    """

    def __init__(self, config):
        self.config = config
        self.lambda_ = None
        self.phi_ = None
        self.gamma_ = None
        self.trace_ = []
        self.updates_ = 0

    def fit(self, corpus):
        cfg = self.config
        if corpus.D == 0:
            raise ValueError("cannot train on an empty corpus")
        K, V, D = cfg.K, corpus.V, corpus.D
        beta = cfg.topic_prior
        if K > V:
            warnings.warn(f"K={K} exceeds the vocabulary size V={V}", stacklevel=2)
        counts = corpus.product_counts()
        if K == 1:
            # no latent choice: the variational posterior is exact
            self.lambda_ = beta + counts[None, :].astype(np.float64)
            self.gamma_ = cfg.alpha + corpus.doc_lengths()[:, None].astype(np.float64)
            self.phi_ = phi = _smoothed(counts[None, :], beta)
            indptr, ids, cts, doc_of = _flatten(corpus.baskets)
            ll = _token_loglik(np.ones((D, 1)), phi, ids, cts, doc_of)
            self.trace_ = [-ll / cts.sum()]
            return self

        rng = np.random.default_rng(cfg.seed)
        csr = corpus.to_csr()
        csr.data = csr.data.astype(np.float64)
        lam = _initial_topics(csr, K, beta, cfg.init, rng)
        gamma_all = np.zeros((D, K))
        B = min(cfg.minibatch_size, D)
        full = _flatten(corpus.baskets) if B == D else None
        self.trace_ = []
        t = 0
        for epoch in range(cfg.max_epochs):
            order = np.arange(D) if B == D else rng.permutation(D)
            loglik = 0.0
            n_tokens = 0.0
            for start in range(0, D, B):
                docs = order[start:start + B]
                if full is not None:
                    indptr, ids, cts, doc_of = full
                else:
                    sub = csr[docs]
                    indptr, ids, cts = sub.indptr.astype(np.int64), sub.indices.astype(np.int64), sub.data
                    doc_of = np.repeat(np.arange(docs.size), np.diff(indptr))
                elog_beta = dirichlet_expectation(lam)
                gamma, sstats = local_step(ids, cts, indptr, doc_of, np.exp(elog_beta), cfg.alpha)
                phi = lam / lam.sum(axis=1, keepdims=True)
                theta = gamma / gamma.sum(axis=1, keepdims=True)
                loglik += _token_loglik(theta, phi, ids, cts, doc_of)
                n_tokens += cts.sum()
                gamma_all[docs] = gamma
                rho = (cfg.learning_offset + t) ** -cfg.decay
                lam = (1.0 - rho) * lam + rho * (beta + (D / docs.size) * sstats)
                t += 1
            self.trace_.append(-loglik / n_tokens)
            if len(self.trace_) >= 2:
                prev, cur = self.trace_[-2], self.trace_[-1]
                if abs(cur - prev) < cfg.convergence_tol * abs(prev) or cur == prev:
                    break
        self.lambda_ = lam
        self.phi_ = lam / lam.sum(axis=1, keepdims=True)
        self.gamma_ = gamma_all
        self.updates_ = t
        return self

    def topic_model(self, vocab, product_counts=None):
        return TopicModel(self.phi_, self.config.alpha, self.config.topic_prior, vocab,
                          np.asarray(self.trace_), product_counts, "online-vb")


def train_online_vb(corpus, config):
    """Fit LDA by online variational Bayes; returns a :class:`TopicModel`."""
    if corpus.D == 0:
        raise ValueError("cannot train on an empty corpus")
    lda = OnlineLDA(config).fit(corpus)
    return lda.topic_model(corpus.vocab, corpus.product_counts())


# -- collapsed Gibbs ----------------------------------------------------------

def _gibbs_sweep(words, docs, z, u, ndk, nkw, nk, alpha, beta, vbeta, K):
    for i in range(len(words)):
        w = words[i]
        d = docs[i]
        k_old = z[i]
        nd = ndk[d]
        nd[k_old] -= 1
        nkw[k_old][w] -= 1
        nk[k_old] -= 1
        cum = []
        total = 0.0
        for k in range(K):
            total += (nd[k] + alpha) * (nkw[k][w] + beta) / (nk[k] + vbeta)
            cum.append(total)
        target = u[i] * total
        k_new = 0
        while k_new < K - 1 and cum[k_new] <= target:
            k_new += 1
        z[i] = k_new
        nd[k_new] += 1
        nkw[k_new][w] += 1
        nk[k_new] += 1


def train_gibbs(corpus, config, burn_in, samples):
    """Collapsed Gibbs sampling over token topic assignments.

    The topic estimate averages the topic-product counts over the
    ``samples`` sweeps that follow ``burn_in`` and then smooths by ``beta``.
    Intended for small corpora (at most ``GIBBS_MAX_TOKENS`` tokens).
    """
    if corpus.D == 0:
        raise ValueError("cannot train on an empty corpus")
    total_iters = burn_in + samples
    if burn_in < 0 or burn_in >= total_iters:
        raise ValueError(
            f"burn_in ({burn_in}) must be nonnegative and below the total iterations ({total_iters})")
    if total_iters > config.max_epochs:
        raise ValueError(f"burn_in + samples ({total_iters}) exceeds max_epochs ({config.max_epochs})")
    n_tokens = corpus.num_tokens()
    if n_tokens > GIBBS_MAX_TOKENS:
        raise ValueError(f"corpus has {n_tokens} tokens; Gibbs is limited to {GIBBS_MAX_TOKENS}")
    K, V, D = config.K, corpus.V, corpus.D
    alpha, beta = config.alpha, config.topic_prior
    rng = np.random.default_rng(config.seed)

    words = np.concatenate([b.tokens() for b in corpus.baskets])
    docs = np.repeat(np.arange(D), corpus.doc_lengths())
    z = rng.integers(K, size=n_tokens)
    ndk = np.zeros((D, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)

    words_l, docs_l, z_l = words.tolist(), docs.tolist(), z.tolist()
    ndk_l, nkw_l, nk_l = ndk.tolist(), nkw.tolist(), nkw.sum(axis=1).tolist()
    acc = np.zeros((K, V), dtype=np.int64)
    indptr, ids, cts, doc_of = _flatten(corpus.baskets)
    lengths = corpus.doc_lengths()[:, None]
    trace = []
    for it in range(total_iters):
        u = rng.random(n_tokens).tolist()
        _gibbs_sweep(words_l, docs_l, z_l, u, ndk_l, nkw_l, nk_l, alpha, beta, V * beta, K)
        nkw_now = np.array(nkw_l, dtype=np.int64)
        theta = (np.array(ndk_l) + alpha) / (lengths + K * alpha)
        trace.append(-_token_loglik(theta, _smoothed(nkw_now, beta), ids, cts, doc_of) / n_tokens)
        if it >= burn_in:
            acc += nkw_now
    phi = _smoothed(acc / samples, beta)
    return TopicModel(phi, alpha, beta, corpus.vocab, np.asarray(trace),
                      corpus.product_counts(), "gibbs")


# -- fold-in ------------------------------------------------------------------

def _remap(basket, source_vocab, target_vocab):
    if source_vocab is None or source_vocab == target_vocab:
        keep = basket.ids < target_vocab.V
        return basket.ids[keep], basket.counts[keep]
    ids, cts = [], []
    for i, c in zip(basket.ids, basket.counts):
        j = target_vocab.index.get(source_vocab[int(i)])
        if j is not None:
            ids.append(j)
            cts.append(c)
    return np.array(ids, dtype=np.int64), np.array(cts, dtype=np.int64)


def fold_in(phi, alpha, docs, tol=LOCAL_TOL, max_iter=LOCAL_MAX_ITER):
    """Expected mixtures for ``(ids, counts)`` pairs indexed into ``phi``'s columns.

    Empty documents get the prior mean (uniform).
    """
    K = phi.shape[0]
    theta = np.full((len(docs), K), 1.0 / K)
    idx = [i for i, (ids, _) in enumerate(docs) if len(ids)]
    if idx:
        fake = [Basket("", None, None, np.asarray(docs[i][0]), np.asarray(docs[i][1])) for i in idx]
        indptr, ids, cts, doc_of = _flatten(fake)
        gamma, _ = local_step(ids, cts, indptr, doc_of, phi, alpha, tol, max_iter)
        theta[idx] = gamma / gamma.sum(axis=1, keepdims=True)
    return theta


def model_counts(model, corpus):
    """Each basket's ``(ids, counts)`` in the model's vocabulary, unknown products dropped."""
    mapped = [_remap(b, corpus.vocab, model.vocab) for b in corpus.baskets]
    dropped = sum(int(b.counts.sum() - c.sum()) for b, (_, c) in zip(corpus.baskets, mapped))
    if dropped:
        warnings.warn(f"skipped {dropped} out-of-vocabulary tokens", stacklevel=3)
    return mapped


def infer_mixtures(model, corpus, tol=LOCAL_TOL, max_iter=LOCAL_MAX_ITER):
    """Fold-in topic mixtures for every basket of ``corpus``.

    Returns ``(theta, valid)``: a D x K array of expected mixtures and a
    boolean mask of baskets with at least one in-vocabulary product (rows
    of invalid baskets are NaN).
    """
    mapped = model_counts(model, corpus)
    valid = np.array([ids.size > 0 for ids, _ in mapped], dtype=bool)
    theta = fold_in(model.phi, model.alpha, mapped, tol, max_iter)
    theta[~valid] = np.nan
    return theta, valid


def infer_mixture(model, basket, vocab=None):
    """Expected topic mixture of a single basket with the topics held fixed.

    Products outside the model vocabulary are skipped. ``vocab`` names the
    vocabulary the basket's indices refer to (defaults to the model's).
    """
    ids, cts = _remap(basket, vocab, model.vocab)
    if ids.size < basket.ids.size:
        warnings.warn(f"skipped {basket.ids.size - ids.size} unknown products", stacklevel=2)
    if ids.size == 0:
        raise ValueError(f"basket {basket.basket_id!r} has no in-vocabulary items")
    order = np.argsort(ids, kind="stable")
    ids, cts = ids[order], cts[order]
    indptr = np.array([0, ids.size], dtype=np.int64)
    gamma, _ = local_step(ids, cts.astype(np.float64), indptr, np.zeros(ids.size, dtype=np.int64),
                          model.phi, model.alpha)
    return gamma[0] / gamma[0].sum()
