"""Topic validation instruments: label-agreement and intruder tasks, plus scoring."""

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binomtest

from .metrics import DEFAULT_LAMBDA, relevance_table

LABEL_CHANCE = 1 / 4
INTRUDER_CHANCE = 1 / 6
LABEL_PRODUCTS = 10
LABEL_OPTIONS = 4
INTRUDER_IN_TOPIC = 5


def format_chance(chance):
    return f"{100 * chance:.2f}%"


@dataclass
class LabelTask:
    task_id: str
    topic: int
    product_ids: list
    options: list
    answer: int
    seed: int
    type: str = "label"
    chance: float = LABEL_CHANCE


@dataclass
class IntruderTask:
    task_id: str
    topic: int
    product_ids: list
    answer: int
    intruder_topic: int
    seed: int
    type: str = "intruder"
    chance: float = INTRUDER_CHANCE

    @property
    def intruder(self):
        return self.product_ids[self.answer]


def _pool(model, k, topics):
    topics = list(range(model.K)) if topics is None else [int(t) for t in topics]
    if not 0 <= k < model.K:
        raise ValueError(f"topic {k} out of range for K={model.K}")
    if any(not 0 <= t < model.K for t in topics):
        raise ValueError("topic subset contains out-of-range topics")
    return [t for t in dict.fromkeys(topics) if t != k]


def gen_label_task(model, corpus, topic_labels, k, seed, topics=None, lam=DEFAULT_LAMBDA):
    """Ten most relevant products of topic ``k`` with four candidate labels.

    The three distractor labels are drawn without replacement from the other
    topics (restricted to ``topics`` when given) and the four options are
    shuffled.
    """
    if len(topic_labels) != model.K:
        raise ValueError(f"need {model.K} topic labels, got {len(topic_labels)}")
    if len(set(topic_labels)) != len(topic_labels):
        raise ValueError("topic labels must be distinct")
    others = _pool(model, k, topics)
    if len(others) < LABEL_OPTIONS - 1:
        raise ValueError(f"need at least {LABEL_OPTIONS} labeled topics to build a label task")
    table = relevance_table(model, corpus, lam)
    products = [table.products[w] for w in table.ranking(k, LABEL_PRODUCTS)]
    rng = np.random.default_rng(seed)
    distractors = rng.choice(others, size=LABEL_OPTIONS - 1, replace=False)
    options = [topic_labels[k]] + [topic_labels[int(j)] for j in distractors]
    order = rng.permutation(LABEL_OPTIONS)
    options = [options[i] for i in order]
    answer = int(np.flatnonzero(order == 0)[0])
    return LabelTask(f"label-t{k}-s{seed}", int(k), products, options, answer, int(seed))


def gen_intruder_task(model, corpus, k, seed, topics=None, lam=DEFAULT_LAMBDA):
    """Five most relevant products of topic ``k`` plus the top product of a random other topic.

    When the other topic's top product is already among the five, another
    topic is drawn (without replacement) until one does not collide.
    """
    others = _pool(model, k, topics)
    if not others:
        raise ValueError("intruder tasks need at least two topics")
    table = relevance_table(model, corpus, lam)
    shown = [int(w) for w in table.ranking(k, INTRUDER_IN_TOPIC)]
    rng = np.random.default_rng(seed)
    intruder = source = None
    for j in rng.permutation(others):
        top = int(table.ranking(int(j), 1)[0])
        if top not in shown:
            intruder, source = top, int(j)
            break
    if intruder is None:
        raise ValueError(f"every alternative topic's top product collides with topic {k}'s shown set")
    items = shown + [intruder]
    order = rng.permutation(len(items))
    products = [table.products[items[i]] for i in order]
    answer = int(np.flatnonzero(order == len(items) - 1)[0])
    return IntruderTask(f"intruder-t{k}-s{seed}", int(k), products, answer, source, int(seed))


def tasks_to_json(path, tasks):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(t) for t in tasks], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tasks(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out = []
    for obj in raw:
        kind = obj.get("type")
        if kind == "label":
            out.append(LabelTask(**obj))
        elif kind == "intruder":
            out.append(IntruderTask(**obj))
        else:
            raise ValueError(f"unknown task type {kind!r}")
    return out


@dataclass(frozen=True)
class Response:
    task_id: str
    respondent_id: str
    chosen_index: int


def read_responses(path):
    """Responses CSV with columns ``task_id,respondent_id,chosen_index``."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"task_id", "respondent_id", "chosen_index"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                chosen = int(row["chosen_index"])
            except ValueError:
                raise ValueError(
                    f"invalid chosen_index {row['chosen_index']!r} (line {reader.line_num})") from None
            out.append(Response(row["task_id"], row["respondent_id"], chosen))
    return out


@dataclass
class TopicScore:
    type: str
    topic: int
    n: int
    correct: int
    proportion: float
    std_error: float
    chance: float
    p_value: float


@dataclass
class ResponseSheet:
    responses: list
    topics: list
    overall: dict

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["type", "topic", "n", "correct", "proportion", "std_error",
                             "chance", "p_value"])
            for s in self.topics:
                writer.writerow([s.type, s.topic, s.n, s.correct, repr(s.proportion),
                                 repr(s.std_error), format_chance(s.chance), repr(s.p_value)])


def _score(kind, topic, correct, n, chance):
    p = correct / n
    return TopicScore(kind, topic, n, correct, p, float(np.sqrt(p * (1 - p) / n)), chance,
                      float(binomtest(correct, n, chance).pvalue))


def score_responses(tasks, responses):
    """Proportion correct per (task type, topic) with an exact two-sided binomial test.

    ``responses`` are :class:`Response` objects or ``(task_id,
    respondent_id, chosen_index)`` tuples.
    """
    by_id = {t.task_id: t for t in tasks}
    scored = []
    tallies = defaultdict(lambda: [0, 0])
    for r in responses:
        r = r if isinstance(r, Response) else Response(*r)
        task = by_id.get(r.task_id)
        if task is None:
            raise ValueError(f"unknown task id {r.task_id!r}")
        if not 0 <= r.chosen_index < len(task.options if task.type == "label" else task.product_ids):
            raise ValueError(f"chosen_index {r.chosen_index} out of range for task {r.task_id!r}")
        ok = r.chosen_index == task.answer
        scored.append((r.task_id, r.respondent_id, r.chosen_index, ok))
        tally = tallies[(task.type, task.topic)]
        tally[0] += ok
        tally[1] += 1
    chance = {"label": LABEL_CHANCE, "intruder": INTRUDER_CHANCE}
    topics = [_score(kind, topic, c, n, chance[kind])
              for (kind, topic), (c, n) in sorted(tallies.items())]
    overall = {}
    for kind in sorted({k for k, _ in tallies}):
        c = sum(s.correct for s in topics if s.type == kind)
        n = sum(s.n for s in topics if s.type == kind)
        overall[kind] = _score(kind, -1, c, n, chance[kind])
    return ResponseSheet(scored, topics, overall)
