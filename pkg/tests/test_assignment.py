import numpy as np
import pytest

from crowdloop.assignment import (
    AssignmentConfig,
    assign_greedy,
    assign_random,
    eligible_workers,
    worker_importance,
)
from crowdloop.errors import NoEligibleWorker
from crowdloop.inference import AnnotationLog, LabelTable, WorkerSkill


def skill(worker_id, diag, k=2):
    conf = np.full((k, k), 0.0)
    for y in range(k):
        conf[y, y] = diag
        off = (1 - diag) / (k - 1)
        for z in range(k):
            if z != y:
                conf[y, z] = off
    return WorkerSkill(worker_id=worker_id, confusion=conf)


class TestAssignRandom:
    def test_single_worker_takes_everything(self):
        pairs = assign_random(["a", "b", "c"], ["w0"], AnnotationLog(), rng=0)
        assert pairs == [("a", "w0"), ("b", "w0"), ("c", "w0")]

    def test_no_eligible_worker(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        with pytest.raises(NoEligibleWorker):
            assign_random(["a"], ["w0"], log, rng=0)

    def test_deterministic_under_seed(self):
        workers = [f"w{j}" for j in range(5)]
        a = assign_random(["x", "y", "z"], workers, AnnotationLog(), rng=42)
        b = assign_random(["x", "y", "z"], workers, AnnotationLog(), rng=42)
        assert a == b

    def test_pairs_never_repeat_within_call(self):
        log = AnnotationLog()
        pairs = assign_random(["a", "a", "a"], ["w0", "w1", "w2"], log, rng=1)
        assert len({p for p in pairs}) == 3


class TestAssignGreedy:
    def table(self, posterior):
        return LabelTable([f"i{j}" for j in range(len(posterior))],
                          np.asarray(posterior, dtype=np.float64))

    def test_most_reliable_worker_wins(self):
        labels = self.table([[1.0, 0.0]])
        skills = {"w0": skill("w0", 0.9), "w1": skill("w1", 0.6)}
        pairs = assign_greedy(["i0"], labels, skills, AnnotationLog(),
                              alpha_cap=2000)
        assert pairs == [("i0", "w0")]

    def test_capped_worker_passed_over(self):
        labels = self.table([[1.0, 0.0]])
        skills = {"w0": skill("w0", 0.9), "w1": skill("w1", 0.6)}
        log = AnnotationLog()
        log.append("other", "w0", 0, 0)
        pairs = assign_greedy(["i0"], labels, skills, log, alpha_cap=1)
        assert pairs == [("i0", "w1")]

    def test_cap_enforced_within_batch(self):
        labels = self.table([[1.0, 0.0]] * 4)
        skills = {"w0": skill("w0", 0.9), "w1": skill("w1", 0.6)}
        pairs = assign_greedy(["i0", "i1", "i2", "i3"], labels, skills,
                              AnnotationLog(), alpha_cap=2)
        counts = {}
        for _, w in pairs:
            counts[w] = counts.get(w, 0) + 1
        assert counts == {"w0": 2, "w1": 2}

    def test_ties_break_on_lowest_worker_id(self):
        labels = self.table([[0.5, 0.5]])
        skills = {"w9": skill("w9", 0.7), "w1": skill("w1", 0.7)}
        pairs = assign_greedy(["i0"], labels, skills, AnnotationLog(),
                              alpha_cap=10)
        assert pairs == [("i0", "w1")]

    def test_posterior_scaling_invariance(self):
        # ranking depends only on posterior-weighted diagonals, which a
        # common positive scale on every diagonal cannot reorder
        def worker_with_diags(worker_id, diags):
            k = len(diags)
            conf = np.empty((k, k))
            for y, d in enumerate(diags):
                conf[y] = (1 - d) / (k - 1)
                conf[y, y] = d
            return WorkerSkill(worker_id=worker_id, confusion=conf)

        labels = LabelTable(["i0", "i1"],
                            np.array([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]))
        base = {
            "w0": worker_with_diags("w0", [0.9, 0.6, 0.3]),
            "w1": worker_with_diags("w1", [0.3, 0.6, 0.9]),
        }
        scaled = {
            w: worker_with_diags(w, (np.diag(s.confusion) * 0.5).tolist())
            for w, s in base.items()
        }
        picks_base = assign_greedy(["i0", "i1"], labels, base,
                                   AnnotationLog(), alpha_cap=10)
        picks_scaled = assign_greedy(["i0", "i1"], labels, scaled,
                                     AnnotationLog(), alpha_cap=10)
        assert picks_base == picks_scaled

    def test_already_annotated_is_ineligible(self):
        labels = self.table([[1.0, 0.0]])
        skills = {"w0": skill("w0", 0.9), "w1": skill("w1", 0.6)}
        log = AnnotationLog()
        log.append("i0", "w0", 0, 0)
        pairs = assign_greedy(["i0"], labels, skills, log, alpha_cap=10)
        assert pairs == [("i0", "w1")]

    def test_no_eligible_worker(self):
        labels = self.table([[1.0, 0.0]])
        skills = {"w0": skill("w0", 0.9)}
        log = AnnotationLog()
        log.append("i0", "w0", 0, 0)
        with pytest.raises(NoEligibleWorker):
            assign_greedy(["i0"], labels, skills, log, alpha_cap=10)


class TestHelpers:
    def test_eligible_workers_sorted_and_filtered(self):
        log = AnnotationLog()
        log.append("a", "w1", 0, 0)
        assert eligible_workers("a", ["w2", "w1", "w0"], log) == ["w0", "w2"]

    def test_assignment_config_validation(self):
        with pytest.raises(ValueError):
            AssignmentConfig(mode="bogus")
        with pytest.raises(ValueError):
            AssignmentConfig(mode="greedy", alpha_cap=0)

    def test_worker_importance_ranks_reliability(self):
        skills = {"w0": skill("w0", 0.95), "w1": skill("w1", 0.55)}
        log = AnnotationLog()
        for i in range(4):
            log.append(f"i{i}", "w0", 0, 0)
            log.append(f"i{i}", "w1", 0, 0)
        rows = worker_importance(skills, log, np.array([0.9, 0.5]))
        by_id = {r["worker"]: r for r in rows}
        assert by_id["w0"]["importance"] > by_id["w1"]["importance"]
        assert by_id["w0"]["annotations"] == 4
