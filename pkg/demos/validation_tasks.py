"""
Building and scoring topic validation tasks
============================================

Two instruments check whether topics make sense to people: picking the
right label for a topic's top products, and spotting an intruder product
from another topic. Here the "respondents" are simulated.
"""

import numpy as np

from basketlda.generator import simulate
from basketlda.inference import TrainConfig, train_online_vb
from basketlda.survey import format_chance, gen_intruder_task, gen_label_task, score_responses

corpus, _ = simulate(K=5, V=200, D=3000, seed=42)
model = train_online_vb(corpus, TrainConfig(K=5, seed=0))
names = ["breakfast", "baking", "barbecue", "baby care", "snacks"]

label_tasks = [gen_label_task(model, corpus, names, k, seed=k) for k in range(model.K)]
intruder_tasks = [gen_intruder_task(model, corpus, k, seed=k) for k in range(model.K)]

task = intruder_tasks[0]
print("shown products:", task.product_ids)
print("intruder:", task.intruder, "from topic", task.intruder_topic)

###############################################################################
# Simulated respondents: right 70% of the time, otherwise a random guess.
rng = np.random.default_rng(0)
responses = []
for t in label_tasks + intruder_tasks:
    n_options = len(t.options) if t.type == "label" else len(t.product_ids)
    for r in range(40):
        choice = t.answer if rng.random() < 0.7 else int(rng.integers(n_options))
        responses.append((t.task_id, f"r{r}", choice))

sheet = score_responses(label_tasks + intruder_tasks, responses)
for kind, s in sheet.overall.items():
    print(f"{kind:9s} {100 * s.proportion:5.1f}% correct  (chance {format_chance(s.chance)}, "
          f"p = {s.p_value:.2g})")
