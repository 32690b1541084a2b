"""
Choosing the number of topics on held-out baskets
==================================================

Fit a few candidate K values on a training split and compare held-out
log-perplexity. Scoring a basket with a mixture fitted to that same basket
flatters large K, so the held-out score here infers each basket's mixture
from a random half of its items and scores the other half.
"""

from basketlda.corpus import split_corpus
from basketlda.generator import simulate
from basketlda.inference import TrainConfig
from basketlda.metrics import perplexity_sweep

corpus, _ = simulate(K=5, V=200, D=3000, seed=1003)
train, test = split_corpus(corpus, 0.2, seed=1003)

configs = [TrainConfig(K=k, seed=0) for k in (2, 5, 10)]
rows = perplexity_sweep(train, test, configs, seed=1003)

best = min(rows, key=lambda r: r[2])
print(f"{'K':>3} {'train':>8} {'test':>8}")
for K, tr, te in rows:
    print(f"{K:>3} {tr:8.4f} {te:8.4f}{'  <- lowest' if K == best[0] else ''}")

###############################################################################
# The same comparison with whole-basket fold-in. The margin between K=5
# and K=10 is several times smaller here, and on some seeds it reverses.
rows_full = perplexity_sweep(train, test, configs, seed=1003, scheme="full")
for (K, _, te), (_, _, te_full) in zip(rows, rows_full):
    print(f"K={K:<3} completion {te:.4f}   full-basket {te_full:.4f}")
