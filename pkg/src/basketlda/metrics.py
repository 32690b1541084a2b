"""Model evaluation and product ranking.

Perplexity, lift, relevance, topic sizes, topic alignment and the
frequency-correlation diagnostic. Natural logarithms throughout.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .inference import fold_in, model_counts, train_online_vb

DEFAULT_LAMBDA = 0.6


def log_perplexity(model, corpus, scheme="full", seed=0):
    """Per-token log-perplexity ``-sum log p(w) / sum N_d`` (natural log).

    Each token is scored as ``sum_k theta_k phi_kw`` with ``theta`` from
    fold-in. ``scheme="full"`` infers ``theta`` from the whole basket and
    scores the same basket. ``scheme="completion"`` shuffles each basket's
    tokens (seeded), infers ``theta`` from the first half and scores only
    the second half, which does not reward extra topics for fitting the
    scored tokens themselves. Baskets with no in-vocabulary product are
    skipped with a warning. ``exp`` of the result is the perplexity.
    """
    if corpus.D == 0:
        raise ValueError("cannot score an empty corpus")
    if scheme not in ("full", "completion"):
        raise ValueError(f"unknown scheme {scheme!r} (expected 'full' or 'completion')")
    mapped = model_counts(model, corpus)
    valid = np.array([ids.size > 0 for ids, _ in mapped], dtype=bool)
    if not valid.all():
        warnings.warn(f"excluded {int((~valid).sum())} baskets with no in-vocabulary items",
                      stacklevel=2)
    if not valid.any():
        raise ValueError("no basket has in-vocabulary items")
    mapped = [m for m, ok in zip(mapped, valid) if ok]
    if scheme == "full":
        observed = scored = mapped
    else:
        rng = np.random.default_rng(seed)
        observed, scored = [], []
        for ids, cts in mapped:
            tokens = rng.permutation(np.repeat(ids, cts))
            half = tokens.size // 2
            observed.append(np.unique(tokens[:half], return_counts=True))
            scored.append(np.unique(tokens[half:], return_counts=True))
    theta = fold_in(model.phi, model.alpha, observed)
    total = 0.0
    n = 0
    for d, (ids, cts) in enumerate(scored):
        total += float(np.dot(cts, np.log(theta[d] @ model.phi[:, ids])))
        n += int(cts.sum())
    return -total / n


def perplexity(model, corpus, scheme="full", seed=0):
    return float(np.exp(log_perplexity(model, corpus, scheme, seed)))


def lift(p_wk, p_w):
    """Within-topic probability over corpus-wide probability."""
    p_wk = np.asarray(p_wk, dtype=np.float64)
    p_w = np.asarray(p_w, dtype=np.float64)
    if np.any(p_w <= 0):
        raise ValueError("undefined lift for zero-frequency product")
    out = p_wk / p_w
    return float(out) if out.ndim == 0 else out


def relevance(p_wk, p_w, lam=DEFAULT_LAMBDA):
    """``lam * log(p_wk) + (1 - lam) * log(p_wk / p_w)``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    p_wk = np.asarray(p_wk, dtype=np.float64)
    p_w = np.asarray(p_w, dtype=np.float64)
    if np.any(p_wk <= 0):
        raise ValueError("relevance undefined for zero within-topic probability")
    if np.any(p_w <= 0):
        raise ValueError("undefined lift for zero-frequency product")
    out = lam * np.log(p_wk) + (1.0 - lam) * np.log(p_wk / p_w)
    return float(out) if out.ndim == 0 else out


def _marginals(model, corpus=None):
    if corpus is not None:
        if corpus.vocab != model.vocab:
            raise ValueError("corpus vocabulary does not match the model vocabulary")
        counts = corpus.product_counts()
    elif model.product_counts is not None:
        counts = model.product_counts
    else:
        raise ValueError("model carries no product counts; pass the training corpus")
    counts = np.asarray(counts, dtype=np.float64)
    return counts / counts.sum()


@dataclass
class RelevanceTable:
    """Per (topic, product) scores; columns limited to products seen in the corpus."""

    p_wk: np.ndarray
    p_w: np.ndarray
    lift: np.ndarray
    relevance: np.ndarray
    lam: float
    eligible: np.ndarray
    products: tuple

    def ranking(self, k, top_n=None):
        """Eligible product indices of topic ``k`` by descending relevance, ties to lower index."""
        idx = np.flatnonzero(self.eligible)
        scores = self.relevance[k, idx]
        order = idx[np.lexsort((idx, -scores))]
        return order if top_n is None else order[:top_n]

    def rows(self, top_n=None):
        for k in range(self.p_wk.shape[0]):
            for rank, w in enumerate(self.ranking(k, top_n), start=1):
                yield (k, rank, self.products[w], self.p_wk[k, w], self.p_w[w],
                       self.lift[k, w], self.relevance[k, w])

    def to_csv(self, path, top_n=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["topic", "rank", "product_id", "p_wk", "p_w", "lift", "relevance"])
            for k, rank, pid, pwk, pw, lf, rel in self.rows(top_n):
                writer.writerow([k, rank, pid, repr(float(pwk)), repr(float(pw)),
                                 repr(float(lf)), repr(float(rel))])


def relevance_table(model, corpus=None, lam=DEFAULT_LAMBDA):
    """Lift and relevance for every topic and every product seen in the corpus.

    ``p_w`` is the empirical token frequency of the corpus (the model's
    stored training counts when ``corpus`` is omitted).
    """
    p_w = _marginals(model, corpus)
    eligible = p_w > 0
    p_wk = model.phi
    lf = np.full(p_wk.shape, np.nan)
    rel = np.full(p_wk.shape, np.nan)
    lf[:, eligible] = lift(p_wk[:, eligible], p_w[eligible])
    rel[:, eligible] = relevance(p_wk[:, eligible], p_w[eligible], lam)
    return RelevanceTable(p_wk, p_w, lf, rel, lam, eligible, model.vocab.products)


def rank_products(model, corpus, k, lam=DEFAULT_LAMBDA, top_n=10):
    """Top products of topic ``k`` by relevance.

    Returns a list of ``(product_index, product_id, relevance)`` sorted by
    descending relevance with ties going to the lower vocabulary index.
    Zero-frequency products are never ranked.
    """
    if top_n < 1:
        raise ValueError("top_n must be at least 1")
    if not 0 <= k < model.K:
        raise ValueError(f"topic {k} out of range for K={model.K}")
    table = relevance_table(model, corpus, lam)
    return [(int(w), table.products[w], float(table.relevance[k, w]))
            for w in table.ranking(k, top_n)]


def topic_sizes(model):
    """Fraction of products whose most probable topic is each topic (ties to lower index)."""
    best = np.argmax(model.phi, axis=0)
    return np.bincount(best, minlength=model.K) / model.V


def tv_distance_matrix(phi_a, phi_b):
    """Pairwise total-variation distances between the rows of two topic matrices."""
    phi_a = np.asarray(phi_a, dtype=np.float64)
    phi_b = np.asarray(phi_b, dtype=np.float64)
    return 0.5 * np.abs(phi_a[:, None, :] - phi_b[None, :, :]).sum(axis=2)


def match_topics(phi_a, phi_b):
    """Align topics of two models by minimum total-variation assignment.

    Returns ``(perm, mean_tv)`` where row ``perm[i]`` of ``phi_b`` is
    matched to row ``i`` of ``phi_a``.
    """
    phi_a = np.asarray(phi_a)
    phi_b = np.asarray(phi_b)
    if phi_a.shape != phi_b.shape or phi_a.ndim != 2:
        raise ValueError(f"shape mismatch: {phi_a.shape} vs {phi_b.shape}")
    cost = tv_distance_matrix(phi_a, phi_b)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(phi_a.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm, float(cost[rows, cols].mean())


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise ValueError("need at least 3 paired values")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.dot(dx, dx))
    sy = np.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise ValueError("zero variance: correlation undefined")
    return float(np.dot(dx, dy) / (sx * sy))


def prob_freq_correlation(model, corpus=None, score="p_wk", lam=DEFAULT_LAMBDA):
    """Pearson r between product corpus frequency and its best score over topics.

    ``score`` is one of ``"p_wk"``, ``"lift"`` or ``"relevance"``.
    """
    table = relevance_table(model, corpus, lam)
    m = table.eligible
    if m.sum() < 3:
        raise ValueError("need at least 3 products")
    values = {"p_wk": table.p_wk, "lift": table.lift, "relevance": table.relevance}
    if score not in values:
        raise ValueError(f"unknown score {score!r}")
    best = values[score][:, m].max(axis=0)
    return pearson(table.p_w[m], best)


def perplexity_sweep(train, test, configs, seed=0, scheme="completion"):
    """Fit one model per config and score it on both corpora.

    Both columns use the same ``scheme``. The default completion scheme
    does not reward extra topics for fitting the scored tokens, which makes
    it the safer basis for choosing K. Returns ``[(K, train, test)]``.
    """
    rows = []
    for cfg in configs:
        model = train_online_vb(train, cfg)
        rows.append((cfg.K, log_perplexity(model, train, scheme, seed),
                     log_perplexity(model, test, scheme, seed)))
    return rows


def write_sweep_csv(path, rows):
    """Perplexity sweep rows ``(K, train, test)``; the lowest test value is flagged."""
    best = min(range(len(rows)), key=lambda i: (rows[i][2], rows[i][0])) if rows else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["K", "train_log_perplexity", "test_log_perplexity", "selected"])
        for i, (K, train, test) in enumerate(rows):
            writer.writerow([K, repr(float(train)), repr(float(test)), int(i == best)])
    return best
