import numpy as np
import pytest

from crowdloop.errors import EmptyLog, ZeroPosterior
from crowdloop.inference import (
    AnnotationLog,
    DawidSkene,
    LabelTable,
    SkillPrior,
    WorkerSkill,
    e_step,
    m_step,
    mean_likelihood,
    run_em,
)

# Hand-evaluated posteriors for the worked two-class examples:
#   prior 0.5/0.5, confusion [[0.8, 0.2], [0.3, 0.7]], one vote for class 0
#     -> [0.4, 0.15] / 0.55 = [8/11, 3/11]
#   the same worker voting 0 twice -> [0.64, 0.09] / 0.73
POST_ONE_VOTE = (8 / 11, 3 / 11)
POST_TWO_VOTES = (0.64 / 0.73, 0.09 / 0.73)
# MAP row for n_beta=10, alpha_diag=0.7, K=2 and three agreeing counts:
#   pseudo-counts [7, 3], plus [3, 0] -> [10/13, 3/13]
MAP_ROW = (10 / 13, 3 / 13)


def skill(worker_id, matrix):
    return WorkerSkill(worker_id=worker_id,
                       confusion=np.asarray(matrix, dtype=np.float64))


def uniform_prior(n, k):
    return np.full((n, k), 1.0 / k)


class TestEStep:
    def test_identity_worker_gives_exact_onehot(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        labels = e_step(log, {"w0": skill("w0", np.eye(2))},
                        uniform_prior(1, 2), ["a"])
        np.testing.assert_array_equal(labels.posterior[0], [1.0, 0.0])

    def test_single_vote_micro_oracle(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        skills = {"w0": skill("w0", [[0.8, 0.2], [0.3, 0.7]])}
        labels = e_step(log, skills, uniform_prior(1, 2), ["a"])
        np.testing.assert_allclose(labels.posterior[0], POST_ONE_VOTE,
                                   atol=1e-12)

    def test_repeated_vote_micro_oracle(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        log.append("a", "w0", 0, 1)
        skills = {"w0": skill("w0", [[0.8, 0.2], [0.3, 0.7]])}
        labels = e_step(log, skills, uniform_prior(1, 2), ["a"])
        np.testing.assert_allclose(labels.posterior[0], POST_TWO_VOTES,
                                   atol=1e-12)

    def test_unannotated_items_keep_prior(self):
        log = AnnotationLog()
        log.append("a", "w0", 1, 0)
        prior = np.array([[0.5, 0.5], [0.9, 0.1]])
        labels = e_step(log, {"w0": skill("w0", np.eye(2))}, prior, ["a", "b"])
        np.testing.assert_allclose(labels.posterior[1], [0.9, 0.1])
        assert labels.annotation_count.tolist() == [1, 0]

    def test_zero_posterior_raised_for_contradictory_identities(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        log.append("a", "w1", 1, 0)
        skills = {"w0": skill("w0", np.eye(2)), "w1": skill("w1", np.eye(2))}
        with pytest.raises(ZeroPosterior):
            e_step(log, skills, uniform_prior(1, 2), ["a"])

    def test_posterior_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        log = AnnotationLog()
        for i in range(6):
            for w in range(3):
                if rng.random() < 0.7:
                    log.append(f"i{i}", f"w{w}", int(rng.integers(0, 3)), 0)
        skills = {}
        for w in range(3):
            m = rng.dirichlet(np.ones(3), size=3)
            skills[f"w{w}"] = skill(f"w{w}", m)
        labels = e_step(log, skills, uniform_prior(6, 3),
                        [f"i{i}" for i in range(6)])
        np.testing.assert_allclose(labels.posterior.sum(axis=1), 1.0,
                                   atol=1e-9)

    def test_scale_invariance_via_uninformative_vote(self):
        # an annotation from a worker whose column is constant across true
        # classes multiplies every class's likelihood by the same factor
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        skills = {"w0": skill("w0", [[0.8, 0.2], [0.3, 0.7]])}
        base = e_step(log, skills, uniform_prior(1, 2), ["a"])
        log.append("a", "flat", 1, 0)
        skills["flat"] = skill("flat", [[0.5, 0.5], [0.5, 0.5]])
        scaled = e_step(log, skills, uniform_prior(1, 2), ["a"])
        np.testing.assert_allclose(scaled.posterior, base.posterior, atol=1e-12)

    def test_aggregated_ties_break_low_index(self):
        labels = LabelTable(["a"], np.array([[0.5, 0.5]]))
        assert labels.aggregated[0] == 0


class TestMajorityVoteEquivalence:
    def test_plurality_match_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(150):
            n = int(rng.integers(1, 11))
            m = int(rng.integers(1, 6))
            k = int(rng.integers(2, 5))
            acc = float(rng.uniform(1.0 / k + 0.05, 0.95))
            conf = np.full((k, k), (1 - acc) / (k - 1))
            np.fill_diagonal(conf, acc)
            skills = {f"w{j}": skill(f"w{j}", conf) for j in range(m)}
            log = AnnotationLog()
            votes = np.zeros((n, k), dtype=int)
            for i in range(n):
                for j in range(m):
                    if rng.random() < 0.6:
                        z = int(rng.integers(0, k))
                        log.append(f"i{i}", f"w{j}", z, 0)
                        votes[i, z] += 1
            labels = e_step(log, skills, uniform_prior(n, k),
                            [f"i{i}" for i in range(n)])
            plurality = votes.argmax(axis=1)
            np.testing.assert_array_equal(labels.aggregated, plurality)


class TestMStep:
    def test_zero_annotation_worker_gets_prior_rows(self):
        labels = LabelTable(["a"], uniform_prior(1, 3))
        skills = m_step(AnnotationLog(), labels,
                        SkillPrior(n_beta=10.0, alpha_diag=0.7), ["w0"])
        conf = skills["w0"].confusion
        for y in range(3):
            row = conf[y].tolist()
            assert row[y] == pytest.approx(0.7)
            assert sorted(row) == pytest.approx([0.15, 0.15, 0.7])
        assert skills["w0"].annotation_count == 0

    def test_counts_dominate_with_tiny_prior(self):
        log = AnnotationLog()
        for i in range(3):
            log.append(f"i{i}", "w0", 0, 0)
        labels = LabelTable([f"i{i}" for i in range(3)],
                            np.array([[1.0, 0.0]] * 3))
        skills = m_step(log, labels, SkillPrior(n_beta=1e-9, alpha_diag=0.7),
                        ["w0"])
        np.testing.assert_allclose(skills["w0"].confusion[0], [1.0, 0.0],
                                   atol=1e-9)

    def test_map_row_micro_oracle(self):
        log = AnnotationLog()
        for i in range(3):
            log.append(f"i{i}", "w0", 0, 0)
        labels = LabelTable([f"i{i}" for i in range(3)],
                            np.array([[1.0, 0.0]] * 3))
        skills = m_step(log, labels, SkillPrior(n_beta=10.0, alpha_diag=0.7),
                        ["w0"])
        np.testing.assert_allclose(skills["w0"].confusion[0], MAP_ROW,
                                   atol=1e-12)
        assert skills["w0"].annotation_count == 3

    def test_large_prior_pins_rows(self):
        log = AnnotationLog()
        log.append("i0", "w0", 1, 0)
        labels = LabelTable(["i0"], np.array([[1.0, 0.0]]))
        skills = m_step(log, labels, SkillPrior(n_beta=1e9, alpha_diag=0.7),
                        ["w0"])
        np.testing.assert_allclose(skills["w0"].confusion[0], [0.7, 0.3],
                                   atol=1e-6)

    def test_rows_always_sum_to_one(self):
        rng = np.random.default_rng(5)
        log = AnnotationLog()
        for i in range(10):
            log.append(f"i{i}", f"w{i % 3}", int(rng.integers(0, 4)), 0)
        labels = LabelTable([f"i{i}" for i in range(10)],
                            rng.dirichlet(np.ones(4), size=10))
        skills = m_step(log, labels, SkillPrior(), [f"w{j}" for j in range(3)])
        for s in skills.values():
            np.testing.assert_allclose(s.confusion.sum(axis=1), 1.0, atol=1e-9)


class TestMeanLikelihood:
    def test_single_record(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        labels = LabelTable(["a"], np.array([[0.9, 0.1]]))
        skills = {"w0": skill("w0", [[0.9, 0.1], [0.1, 0.9]])}
        assert mean_likelihood(log, labels, skills) == pytest.approx(0.9)

    def test_arithmetic_mean(self):
        log = AnnotationLog()
        log.append("a", "w0", 0, 0)
        log.append("b", "w1", 1, 0)
        labels = LabelTable(["a", "b"], np.array([[1.0, 0.0], [0.0, 1.0]]))
        skills = {
            "w0": skill("w0", [[0.8, 0.2], [0.2, 0.8]]),
            "w1": skill("w1", [[0.4, 0.6], [0.4, 0.6]]),
        }
        assert mean_likelihood(log, labels, skills) == pytest.approx(0.7)

    def test_empty_log(self):
        labels = LabelTable(["a"], uniform_prior(1, 2))
        with pytest.raises(EmptyLog):
            mean_likelihood(AnnotationLog(), labels, {})


class TestRunEm:
    def prior_skills(self, worker_ids, k, prior=None):
        prior = prior or SkillPrior()
        return {w: prior.prior_skill(w, k) for w in worker_ids}

    def test_empty_log_returns_prior(self):
        prior = np.array([[0.6, 0.4], [0.5, 0.5]])
        labels, skills, iters = run_em(
            AnnotationLog(), self.prior_skills(["w0"], 2), prior,
            ["a", "b"], SkillPrior())
        assert iters == 1
        np.testing.assert_allclose(labels.posterior, prior)
        np.testing.assert_allclose(skills["w0"].confusion[0], [0.7, 0.3])

    def test_consistent_annotations_converge_hard(self):
        log = AnnotationLog()
        truth = [0, 1, 0]
        for i, y in enumerate(truth):
            for w in range(2):
                log.append(f"i{i}", f"w{w}", y, 0)
        labels, _, iters = run_em(
            log, self.prior_skills(["w0", "w1"], 2), uniform_prior(3, 2),
            [f"i{i}" for i in range(3)], SkillPrior(), mode="hard")
        assert iters <= 5
        assert labels.aggregated.tolist() == truth

    def test_soft_mode_stops(self):
        log = AnnotationLog()
        for i in range(4):
            log.append(f"i{i}", "w0", i % 2, 0)
        labels, skills, iters = run_em(
            log, self.prior_skills(["w0"], 2), uniform_prior(4, 2),
            [f"i{i}" for i in range(4)], SkillPrior(),
            epsilon=0.01, mode="soft")
        assert 1 <= iters <= 50

    def test_hard_fixed_point_idempotence(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 4))
            k = int(rng.integers(2, 4))
            log = AnnotationLog()
            for i in range(n):
                for j in range(m):
                    if rng.random() < 0.8:
                        log.append(f"i{i}", f"w{j}", int(rng.integers(0, k)), 0)
            items = [f"i{i}" for i in range(n)]
            prior = SkillPrior()
            init = self.prior_skills([f"w{j}" for j in range(m)], k, prior)
            labels, skills, _ = run_em(log, init, uniform_prior(n, k), items,
                                       prior, mode="hard", max_iters=100)
            if not len(log):
                continue
            # one extra iteration changes no aggregated label
            relabeled = e_step(log, skills, uniform_prior(n, k), items)
            np.testing.assert_array_equal(relabeled.aggregated,
                                          labels.aggregated)

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            run_em(AnnotationLog(), {}, uniform_prior(1, 2), ["a"],
                   SkillPrior(), epsilon=0.0)


class TestSkillPrior:
    def test_homogeneous_rows(self):
        counts = SkillPrior(n_beta=10, alpha_diag=0.7).pseudo_counts(3)
        np.testing.assert_allclose(counts[0], [7.0, 1.5, 1.5])

    def test_class_aware(self):
        prior = SkillPrior(mode="class_aware",
                           class_diags=np.array([0.9, 0.5]))
        counts = prior.pseudo_counts(2)
        np.testing.assert_allclose(counts, [[9.0, 1.0], [5.0, 5.0]])

    def test_worker_aware_falls_back(self):
        mat = np.array([[0.6, 0.4], [0.4, 0.6]])
        prior = SkillPrior(mode="worker_aware",
                           worker_matrices={"w0": mat})
        np.testing.assert_allclose(prior.pseudo_counts(2, "w0"), 10 * mat)
        np.testing.assert_allclose(prior.pseudo_counts(2, "other")[0],
                                   [7.0, 3.0])

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            SkillPrior(n_beta=0.0)
        with pytest.raises(ValueError):
            SkillPrior(alpha_diag=1.0)


class TestAnnotationLog:
    def test_jsonl_round_trip(self, tmp_path):
        log = AnnotationLog()
        log.append("a", "w0", 1, 0)
        log.append("b", "w1", 0, 2)
        path = tmp_path / "log.jsonl"
        log.to_jsonl(path)
        loaded = AnnotationLog.from_jsonl(path)
        assert loaded.records == log.records

    def test_counts(self):
        log = AnnotationLog()
        log.append("a", "w0", 1, 0)
        log.append("a", "w1", 1, 0)
        assert log.counts_by_item() == {"a": 2}
        assert log.workers_of("a") == {"w0", "w1"}


class TestDawidSkeneEstimator:
    def test_fit_exposes_results(self):
        log = AnnotationLog()
        for i in range(3):
            log.append(f"i{i}", "w0", 0, 0)
            log.append(f"i{i}", "w1", 0, 0)
        ds = DawidSkene(mode="hard").fit(log, [f"i{i}" for i in range(3)], 2)
        assert ds.labels_.aggregated.tolist() == [0, 0, 0]
        assert set(ds.skills_) == {"w0", "w1"}
        assert ds.n_iter_ >= 1

    def test_get_params_round_trip(self):
        ds = DawidSkene(epsilon=0.05)
        params = ds.get_params()
        assert params["epsilon"] == 0.05
        ds.set_params(max_iters=7)
        assert ds.max_iters == 7
