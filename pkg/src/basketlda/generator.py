"""Synthetic baskets drawn from the LDA generative process, with ground truth.

Topics are drawn as ``phi_k ~ Dir(beta)``; each basket draws
``theta_d ~ Dir(alpha)`` and then, per token, a topic ``z ~ theta_d`` and a
product ``w ~ phi_z``.
"""

import calendar
import csv
import datetime as dt
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from ._io import read_container, write_container
from .corpus import BasketCorpus, Vocabulary, make_basket

TRUTH_VERSION = "truth-v1"


def sample_dirichlet(rng, alpha, size=None):
    """Draw from ``Dir(alpha)`` via normalised Gamma variates.

    Gamma variates are generated in log space as
    ``log G(a + 1) + log(U) / a`` so that tiny concentrations (``a`` around
    1e-2 or below) do not underflow to all-zero rows.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet concentration must be positive")
    shape = alpha.shape if size is None else (size,) + alpha.shape
    log_g = np.log(rng.gamma(alpha + 1.0, size=shape))
    log_u = np.log(rng.random(size=shape))
    log_x = log_g + log_u / alpha
    out = np.exp(log_x - logsumexp(log_x, axis=-1, keepdims=True))
    return out / out.sum(axis=-1, keepdims=True)


def dirichlet_logpdf(x, alpha):
    """Log density of ``Dir(alpha)`` at the rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    norm = gammaln(alpha.sum()) - gammaln(alpha).sum()
    return norm + ((alpha - 1.0) * np.log(x)).sum(axis=-1)


def shifted_poisson(mean=25.0, minimum=1):
    """Basket-size sampler: ``minimum + Poisson(mean - minimum)``."""
    if mean < minimum:
        raise ValueError("mean basket size must be at least the minimum")

    def draw(rng):
        return int(minimum + rng.poisson(mean - minimum))

    return draw


@dataclass
class GroundTruth:
    phi: np.ndarray
    theta: np.ndarray
    tokens: list
    assignments: list
    alpha: float
    beta: float

    @property
    def K(self):
        return self.phi.shape[0]

    @property
    def V(self):
        return self.phi.shape[1]

    @property
    def D(self):
        return self.theta.shape[0]

    def dominant_topics(self):
        return np.argmax(self.theta, axis=1)

    def save(self, path):
        lengths = [len(a) for a in self.assignments]
        indptr = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        flat_z = np.concatenate(self.assignments) if lengths else np.zeros(0, np.int64)
        flat_w = np.concatenate(self.tokens) if lengths else np.zeros(0, np.int64)
        header = {"K": self.K, "V": self.V, "D": self.D,
                  "alpha": float(self.alpha), "beta": float(self.beta)}
        write_container(path, TRUTH_VERSION, header, {
            "phi": self.phi.astype(np.float64),
            "theta": self.theta.astype(np.float64),
            "indptr": indptr,
            "tokens": flat_w.astype(np.int64),
            "assignments": flat_z.astype(np.int64),
        })

    @classmethod
    def load(cls, path):
        header, arr = read_container(path, TRUTH_VERSION)
        ptr = arr["indptr"]
        tokens = [arr["tokens"][ptr[d]:ptr[d + 1]] for d in range(header["D"])]
        z = [arr["assignments"][ptr[d]:ptr[d + 1]] for d in range(header["D"])]
        return cls(arr["phi"], arr["theta"], tokens, z, header["alpha"], header["beta"])


def sample_topics(K, V, beta, seed):
    """K topic-product distributions, each an independent ``Dir(beta)`` draw over V products."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if V < 2:
        raise ValueError("V must be at least 2")
    if not beta > 0:
        raise ValueError("beta must be positive")
    rng = np.random.default_rng(seed)
    return sample_dirichlet(rng, np.full(V, float(beta)), size=K)


def _draw_tokens(rng, theta_d, phi_cum, n):
    K = phi_cum.shape[0]
    z = rng.choice(K, size=n, p=theta_d)
    u = rng.random(n)
    w = (phi_cum[z] < u[:, None]).sum(axis=1)
    np.minimum(w, phi_cum.shape[1] - 1, out=w)
    return z.astype(np.int64), w.astype(np.int64)


def _check_phi(phi):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] < 1:
        raise ValueError("phi must be a K x V matrix")
    if np.any(phi < 0) or not np.allclose(phi.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("phi rows must be probability vectors")
    return phi


def synthetic_vocabulary(V):
    width = max(4, len(str(V - 1)))
    return Vocabulary([f"p{i:0{width}d}" for i in range(V)])


def sample_corpus(phi, D, alpha, basket_size=None, seed=0):
    """Generate D baskets from ``phi`` and return ``(corpus, truth)``.

    ``basket_size`` is a callable taking a numpy Generator and returning a
    positive basket size; the default is :func:`shifted_poisson` with mean 25.
    Baskets carry no dates or customer ids.
    """
    phi = _check_phi(phi)
    if D < 1:
        raise ValueError("D must be at least 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    basket_size = basket_size or shifted_poisson(25.0)
    K, V = phi.shape
    rng = np.random.default_rng(seed)
    phi_cum = np.cumsum(phi, axis=1)
    vocab = synthetic_vocabulary(V)
    width = len(str(D - 1))

    theta = np.empty((D, K))
    tokens, assignments, baskets = [], [], []
    for d in range(D):
        n = int(basket_size(rng))
        if n < 1:
            raise ValueError(f"basket_size sampler returned {n}; sizes must be positive")
        theta[d] = sample_dirichlet(rng, np.full(K, float(alpha))) if K > 1 else 1.0
        z, w = _draw_tokens(rng, theta[d], phi_cum, n)
        tokens.append(w)
        assignments.append(z)
        counts = np.bincount(w, minlength=V)
        nz = np.flatnonzero(counts)
        baskets.append(make_basket(f"b{d:0{width}d}", dict(zip(nz, counts[nz]))))
    truth = GroundTruth(phi, theta, tokens, assignments, float(alpha), np.nan)
    return BasketCorpus(vocab, baskets), truth


def _check_profiles(profiles, K, length, what):
    out = {}
    for topic, prof in (profiles or {}).items():
        t = int(topic)
        if not 0 <= t < K:
            raise ValueError(f"unknown topic index {topic} in {what} profile (K={K})")
        prof = np.asarray(prof, dtype=np.float64)
        if prof.shape != (length,):
            raise ValueError(f"{what} profile for topic {t} must have {length} entries")
        if np.any(prof <= 0):
            raise ValueError(f"{what} profile for topic {t} must be positive")
        out[t] = prof / prof.sum()
    return out


def inject_covariates(corpus, truth, seasonal=None, groups=None, seed=0, *,
                      weekday=None, baskets_per_customer=1, year=2014):
    """Attach synthetic dates and customers to a generated corpus.

    Parameters
    ----------
    corpus, truth :
        Output of :func:`sample_corpus`.
    seasonal : dict, optional
        ``topic -> 12 month multipliers``. A basket whose dominant true topic
        is ``t`` lands in month ``m`` with probability proportional to
        ``seasonal[t][m]``; topics without a profile are uniform. Passing an
        empty dict assigns uniformly random dates.
    groups : dict, optional
        ``group label -> length-K alpha vector``. Baskets are dealt to
        customers (``baskets_per_customer`` each), customers to groups
        round-robin in sorted label order, and each basket's mixture and
        tokens are redrawn from its customer's group prior.
    weekday : dict, optional
        ``topic -> 7 weekday multipliers`` (Monday first), applied when
        picking the day within the month.

    Returns
    -------
    corpus : BasketCorpus
    truth : GroundTruth
        Updated when ``groups`` forced a redraw.
    group_labels : dict
        ``customer_id -> group label`` (empty without ``groups``).
    """
    K, V = truth.phi.shape
    if corpus.D != truth.D:
        raise ValueError("corpus and ground truth disagree on the number of baskets")
    months = _check_profiles(seasonal, K, 12, "seasonal")
    days = _check_profiles(weekday, K, 7, "weekday")
    rng = np.random.default_rng(seed)

    baskets = list(corpus.baskets)
    theta = truth.theta.copy()
    tokens = list(truth.tokens)
    assignments = list(truth.assignments)
    group_labels = {}
    customers = [None] * corpus.D

    if groups:
        if baskets_per_customer < 1:
            raise ValueError("baskets_per_customer must be positive")
        labels = sorted(groups)
        priors = {}
        for g in labels:
            a = np.asarray(groups[g], dtype=np.float64)
            if a.shape != (K,) or np.any(a <= 0):
                raise ValueError(f"group {g!r} needs a positive alpha vector of length {K}")
            priors[g] = a
        n_customers = -(-corpus.D // baskets_per_customer)
        width = len(str(n_customers - 1))
        phi_cum = np.cumsum(truth.phi, axis=1)
        for d in range(corpus.D):
            c = d // baskets_per_customer
            cid = f"c{c:0{width}d}"
            g = labels[c % len(labels)]
            group_labels[cid] = g
            customers[d] = cid
            n = len(tokens[d])
            theta[d] = sample_dirichlet(rng, priors[g])
            z, w = _draw_tokens(rng, theta[d], phi_cum, n)
            tokens[d], assignments[d] = w, z
            counts = np.bincount(w, minlength=V)
            nz = np.flatnonzero(counts)
            old = baskets[d]
            baskets[d] = make_basket(old.basket_id, dict(zip(nz, counts[nz])),
                                     old.date, cid)

    if seasonal is not None or weekday is not None:
        dominant = np.argmax(theta, axis=1)
        uniform_m = np.full(12, 1.0 / 12)
        for d in range(corpus.D):
            t = int(dominant[d])
            month = 1 + int(rng.choice(12, p=months.get(t, uniform_m)))
            n_days = calendar.monthrange(year, month)[1]
            cands = [dt.date(year, month, day) for day in range(1, n_days + 1)]
            if t in days:
                w = np.array([days[t][c.weekday()] for c in cands])
                date = cands[int(rng.choice(n_days, p=w / w.sum()))]
            else:
                date = cands[int(rng.integers(n_days))]
            old = baskets[d]
            baskets[d] = type(old)(old.basket_id, date, old.customer_id, old.ids, old.counts)

    new_truth = GroundTruth(truth.phi, theta, tokens, assignments, truth.alpha, truth.beta)
    return BasketCorpus(corpus.vocab, baskets), new_truth, group_labels


def write_group_labels(path, group_labels):
    """Demographic sidecar: CSV ``customer_id,group_label``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["customer_id", "group_label"])
        for cid in sorted(group_labels):
            writer.writerow([cid, group_labels[cid]])


def simulate(K, V, D, alpha=0.1, beta=0.01, mean_basket=25.0, seed=0):
    """Convenience: topics and corpus from one seed. Returns ``(corpus, truth)``."""
    ss = np.random.SeedSequence(seed)
    topic_seed, corpus_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    phi = sample_topics(K, V, beta, topic_seed)
    corpus, truth = sample_corpus(phi, D, alpha, shifted_poisson(mean_basket), corpus_seed)
    truth.beta = float(beta)
    return corpus, truth
