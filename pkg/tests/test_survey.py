import numpy as np
import pytest

from basketlda.generator import sample_dirichlet
from basketlda.metrics import rank_products
from basketlda.survey import (
    INTRUDER_CHANCE, LABEL_CHANCE, Response, format_chance, gen_intruder_task, gen_label_task,
    load_tasks, read_responses, score_responses, tasks_to_json,
)

from helpers import toy_model


def random_model(K, V=40, seed=0):
    rng = np.random.default_rng(seed)
    phi = sample_dirichlet(rng, np.full(V, 0.2), size=K)
    return toy_model(phi, counts=rng.integers(1, 100, size=V))


NAMES = ["fruit", "baking", "tea", "bbq", "baby", "wine"]


class TestLabelTask:
    def test_forced_choice_set(self):
        model = random_model(4)
        task = gen_label_task(model, None, NAMES[:4], 2, seed=1)
        assert sorted(task.options) == sorted(NAMES[:4])
        assert task.options[task.answer] == "tea"

    def test_deterministic(self):
        model = random_model(6)
        assert gen_label_task(model, None, NAMES, 3, 9) == gen_label_task(model, None, NAMES, 3, 9)

    def test_products_follow_relevance_ranking(self):
        model = random_model(6, seed=2)
        task = gen_label_task(model, None, NAMES, 4, seed=0)
        assert task.product_ids == [pid for _, pid, _ in rank_products(model, None, 4, top_n=10)]

    def test_needs_four_topics(self):
        with pytest.raises(ValueError, match="at least 4"):
            gen_label_task(random_model(3), None, NAMES[:3], 0, seed=0)
        with pytest.raises(ValueError, match="distinct"):
            gen_label_task(random_model(4), None, ["a", "a", "b", "c"], 0, seed=0)

    def test_topic_subset(self):
        model = random_model(6)
        for seed in range(20):
            task = gen_label_task(model, None, NAMES, 0, seed, topics=[0, 1, 2, 3])
            assert set(task.options) == set(NAMES[:4])


class TestIntruderTask:
    def test_two_topics(self):
        model = random_model(2)
        for seed in range(10):
            assert gen_intruder_task(model, None, 0, seed).intruder_topic == 1

    def test_invariants(self):
        model = random_model(5, seed=3)
        for seed in range(100):
            k = seed % 5
            task = gen_intruder_task(model, None, k, seed)
            shown = [pid for _, pid, _ in rank_products(model, None, k, top_n=5)]
            assert len(task.product_ids) == 6 and len(set(task.product_ids)) == 6
            assert task.intruder not in shown
            assert sorted(p for p in task.product_ids if p != task.intruder) == sorted(shown)
            assert task.intruder_topic != k
            assert task.intruder == rank_products(model, None, task.intruder_topic, top_n=1)[0][1]

    def test_deterministic(self):
        model = random_model(5)
        assert gen_intruder_task(model, None, 1, 4) == gen_intruder_task(model, None, 1, 4)

    def test_collision_skipped(self):
        # topics 1 and 2 share a top product with topic 0's shown set
        phi = np.array([[0.3, 0.2, 0.2, 0.1, 0.1, 0.05, 0.05],
                        [0.9, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01],
                        [0.01, 0.01, 0.01, 0.01, 0.01, 0.05, 0.9]])
        model = toy_model(phi, counts=[10] * 7)
        for seed in range(10):
            task = gen_intruder_task(model, None, 0, seed)
            assert task.intruder_topic == 2 and task.intruder == "p6"

    def test_all_collide(self):
        phi = np.array([[0.5, 0.2, 0.1, 0.1, 0.05, 0.05], [0.9, 0.02, 0.02, 0.02, 0.02, 0.02]])
        with pytest.raises(ValueError, match="collides"):
            gen_intruder_task(toy_model(phi, counts=[10] * 6), None, 0, 0)


class TestScoring:
    def test_chance_strings(self):
        assert format_chance(LABEL_CHANCE) == "25.00%"
        assert format_chance(INTRUDER_CHANCE) == "16.67%"

    def test_all_correct_tail(self):
        task = gen_label_task(random_model(4), None, NAMES[:4], 0, seed=0)
        sheet = score_responses([task], [(task.task_id, f"r{i}", task.answer) for i in range(10)])
        assert sheet.overall["label"].p_value == pytest.approx(0.25 ** 10, rel=1e-12)
        assert sheet.overall["label"].proportion == 1.0

    def test_chance_rate_not_significant(self):
        task = gen_intruder_task(random_model(3), None, 0, seed=0)
        wrong = (task.answer + 1) % 6
        responses = [(task.task_id, f"r{i}", task.answer if i % 6 == 0 else wrong) for i in range(6000)]
        assert score_responses([task], responses).overall["intruder"].p_value > 0.05

    def test_simulated_null(self):
        rng = np.random.default_rng(4)
        model = random_model(5)
        tasks = [gen_intruder_task(model, None, k, k) for k in range(5)]
        responses = [Response(t.task_id, f"r{i}", int(rng.integers(6))) for t in tasks for i in range(400)]
        sheet = score_responses(tasks, responses)
        assert sheet.overall["intruder"].p_value > 0.05
        assert len(sheet.topics) == 5 and sum(s.n for s in sheet.topics) == 2000

    def test_roundtrip_and_csv(self, tmp_path):
        model = random_model(4)
        tasks = [gen_label_task(model, None, NAMES[:4], 1, 0), gen_intruder_task(model, None, 2, 0)]
        tasks_to_json(tmp_path / "t.json", tasks)
        assert load_tasks(tmp_path / "t.json") == tasks
        (tmp_path / "r.csv").write_text(
            "task_id,respondent_id,chosen_index\n"
            f"{tasks[0].task_id},a,{tasks[0].answer}\n{tasks[1].task_id},a,{(tasks[1].answer + 1) % 6}\n")
        sheet = score_responses(tasks, read_responses(tmp_path / "r.csv"))
        sheet.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "type,topic,n,correct,proportion,std_error,chance,p_value"
        assert lines[1].startswith("intruder,2,1,0,0.0") and ",16.67%," in lines[1]
        assert lines[2].startswith("label,1,1,1,1.0") and ",25.00%," in lines[2]

    def test_bad_responses(self):
        task = gen_intruder_task(random_model(3), None, 0, seed=0)
        with pytest.raises(ValueError, match="unknown task id"):
            score_responses([task], [("nope", "r", 0)])
        with pytest.raises(ValueError, match="out of range"):
            score_responses([task], [(task.task_id, "r", 6)])
