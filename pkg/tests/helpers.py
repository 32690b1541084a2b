"""Small hand-built corpora and models shared by the tests."""

import numpy as np

from basketlda.corpus import BasketCorpus, Vocabulary, make_basket
from basketlda.inference import TopicModel


def toy_corpus(rows, products=None, dates=None, customers=None):
    """Corpus from a list of ``{index: count}`` dicts."""
    V = max(max(r) for r in rows if r) + 1
    vocab = Vocabulary(products or [f"p{i}" for i in range(V)])
    baskets = []
    for d, r in enumerate(rows):
        date = dates[d] if dates else None
        cust = customers[d] if customers else None
        baskets.append(make_basket(f"b{d}", r, date, cust))
    return BasketCorpus(vocab, baskets)


def toy_model(phi, alpha=0.1, products=None, counts=None):
    phi = np.asarray(phi, dtype=np.float64)
    vocab = Vocabulary(products or [f"p{i}" for i in range(phi.shape[1])])
    return TopicModel(phi, alpha, 0.01, vocab, np.zeros(1), counts)
