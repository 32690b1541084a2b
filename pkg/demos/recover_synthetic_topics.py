"""
Recovering planted topics from synthetic baskets
=================================================

Draw a small catalogue of shopping "themes", generate baskets from them,
fit the model by online variational Bayes and check how close the fitted
topics land to the planted ones.
"""

import numpy as np

from basketlda.generator import simulate
from basketlda.inference import TrainConfig, train_online_vb
from basketlda.metrics import match_topics, rank_products, topic_sizes

# 5 themes over 200 products, 3000 baskets of about 25 items each
corpus, truth = simulate(K=5, V=200, D=3000, alpha=0.1, beta=0.01, seed=42)
print(corpus)
print("mean basket size:", corpus.doc_lengths().mean())

###############################################################################
# Fit with the default schedule. The trace holds one training
# log-perplexity value per pass over the data.
model = train_online_vb(corpus, TrainConfig(K=5, seed=0))
print("epochs:", model.trace.size, "final train log-perplexity:", round(model.trace[-1], 4))

###############################################################################
# Topics come out in arbitrary order, so align them to the truth first.
perm, tv = match_topics(truth.phi, model.phi)
aligned = model.permuted(perm)
print("mean total-variation distance to the planted topics:", round(tv, 4))
per_topic = 0.5 * np.abs(aligned.phi - truth.phi).sum(axis=1)
print("per topic:", np.round(per_topic, 3))

###############################################################################
# Topic sizes count the products each topic claims as its most probable home.
for k, size in enumerate(topic_sizes(aligned)):
    top = ", ".join(pid for _, pid, _ in rank_products(aligned, corpus, k, top_n=5))
    print(f"topic {k}  {100 * size:5.1f}%  {top}")
