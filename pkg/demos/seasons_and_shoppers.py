"""
Seasonal topics and customer-level prediction
==============================================

Plant a summer theme in a synthetic year of baskets, then read it back from
the fitted model's monthly prevalence index. Next, give two shopper groups
different taste profiles and predict group membership from each
customer's average topic mixture.
"""

import numpy as np

from basketlda.analysis import (
    MONTHS, customer_features, fit_demographic_model, label_baskets, prevalence_index,
)
from basketlda.generator import inject_covariates, simulate
from basketlda.inference import TrainConfig, train_online_vb
from basketlda.metrics import match_topics

# topic 0 is three times as likely in June and July
profile = np.ones(12)
profile[[5, 6]] = 3.0
corpus, truth = simulate(K=5, V=200, D=20_000, seed=1)
corpus, truth, _ = inject_covariates(corpus, truth, seasonal={0: profile}, seed=2)

model = train_online_vb(corpus, TrainConfig(K=5, seed=0))
perm, _ = match_topics(truth.phi, model.phi)
model = model.permuted(perm)

index = prevalence_index(label_baskets(model, corpus), "month")
print("      " + " ".join(f"{m:>5}" for m in MONTHS))
for k in range(model.K):
    print(f"topic {k}" + " ".join(f"{v:5.2f}" for v in index.index[k]))
# 1.0 is average prevalence; the planted topic should spike mid-year

###############################################################################
# Two groups of 1,000 customers with three baskets each.
corpus, truth = simulate(K=5, V=200, D=6000, seed=3)
groups = {"f": [1.0, 1.0, 0.1, 0.1, 0.1], "m": [0.1, 0.1, 0.1, 1.0, 1.0]}
corpus, truth, labels = inject_covariates(corpus, truth, groups=groups, seed=4,
                                          baskets_per_customer=3)
model = train_online_vb(corpus, TrainConfig(K=5, seed=0))
features = customer_features(model, corpus)

result = fit_demographic_model(features, labels, "gender", seed=0)
cv = result.cv
print("chosen lambda:", result.lambda_reg)
print(f"accuracy {cv['mean']['accuracy']:.3f}  AUC {cv['mean']['auc']:.3f}  "
      f"majority baseline {cv['baseline']['mean']:.3f}")
