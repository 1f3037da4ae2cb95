import math

import numpy as np
import pytest

from bayesmem.classifier import (
    CLAMP_LOG_PDF,
    class_log_likelihood,
    class_means,
    log_prior,
    posterior,
    predict,
    predict_batch,
    predict_ncm,
    softmax_rows,
)
from bayesmem.density import Gmm1D, GaussianComponent, gmm_log_pdf
from bayesmem.memory import EstimatorConfig, MemoryBank, add_class, form_memory, update_class
from bayesmem.features import FeatureDataset, l2_normalize
from bayesmem.utils import ValidationError
from conftest import gauss_pdf, gmm_bank, oracle_posteriors


def two_class_bank(counts=(500, 500), mus=((0.0, 0.0), (1.0, 1.0)), sigma=0.3):
    params = {}
    for cid, count in enumerate(counts):
        mu = np.array(mus[cid], dtype=np.float64)[:, None]
        k = mu.shape[0]
        params[cid] = (count, np.ones((k, 1)), mu, np.full((k, 1), sigma))
    return gmm_bank(params)


class TestClassLogLikelihood:
    def test_k1_equals_single_feature_log_pdf(self):
        bank = gmm_bank({0: (10, np.ones((1, 1)), np.array([[0.3]]), np.array([[0.5]]))})
        model = Gmm1D((GaussianComponent(1.0, 0.3, 0.5),))
        got = class_log_likelihood(bank, 0, np.array([0.1]))
        assert got == pytest.approx(gmm_log_pdf(model, 0.1), rel=1e-12)

    def test_k2_sum_of_hand_computed_terms(self):
        bank = gmm_bank(
            {0: (10, np.ones((2, 1)), np.array([[0.2], [-0.4]]), np.array([[0.5], [0.7]]))}
        )
        z = np.array([0.1, 0.3])
        expected = math.log(gauss_pdf(0.1, 0.2, 0.5)) + math.log(gauss_pdf(0.3, -0.4, 0.7))
        assert class_log_likelihood(bank, 0, z) == pytest.approx(expected, rel=1e-12)

    def test_peak_value_arithmetic(self):
        # z exactly at the S=1 component means: sum_k log(1/(sqrt(2*pi)*sigma_k))
        sigmas = np.array([[0.2], [0.5], [0.9]])
        mus = np.array([[0.1], [-0.2], [0.7]])
        bank = gmm_bank({0: (10, np.ones((3, 1)), mus, sigmas)})
        expected = sum(-math.log(math.sqrt(2 * math.pi) * s) for s in sigmas[:, 0])
        got = class_log_likelihood(bank, 0, mus[:, 0])
        assert got == pytest.approx(expected, rel=1e-12)

    def test_unknown_class_and_shape_errors(self):
        bank = two_class_bank()
        with pytest.raises(ValidationError, match="not in bank"):
            class_log_likelihood(bank, 7, np.zeros(2))
        with pytest.raises(ValidationError, match="length 2"):
            class_log_likelihood(bank, 0, np.zeros(3))


class TestLogPrior:
    def test_balanced(self):
        bank = two_class_bank(counts=(500, 500))
        assert log_prior(bank, 0) == pytest.approx(math.log(0.5), abs=1e-12)
        assert log_prior(bank, 1) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_imbalanced(self):
        bank = two_class_bank(counts=(750, 250))
        assert log_prior(bank, 0) == pytest.approx(math.log(0.75), abs=1e-12)
        assert log_prior(bank, 1) == pytest.approx(math.log(0.25), abs=1e-12)

    def test_recomputed_after_update(self, rng):
        est = EstimatorConfig(kind="gmm", components=1)
        bank = MemoryBank(K=2, estimator=est)
        for cid in (0, 1):
            raw = rng.standard_normal((10, 2)) + cid
            ds = l2_normalize(
                FeatureDataset(K=2, labels=np.full(10, cid, dtype=np.int64), values=raw)
            )
            add_class(bank, form_memory(cid, ds, est))
        assert log_prior(bank, 0) == pytest.approx(math.log(0.5), abs=1e-12)
        raw = rng.standard_normal((10, 2))
        update_class(
            bank,
            0,
            l2_normalize(FeatureDataset(K=2, labels=np.zeros(10, dtype=np.int64), values=raw)),
        )
        assert log_prior(bank, 0) == pytest.approx(math.log(20 / 30), abs=1e-12)
        assert log_prior(bank, 1) == pytest.approx(math.log(10 / 30), abs=1e-12)


class TestPredict:
    def test_prior_only_decision(self):
        # identical likelihood models; the larger prior wins
        bank = two_class_bank(counts=(750, 250), mus=((0.0, 0.0), (0.0, 0.0)))
        scores = predict(bank, np.array([0.2, -0.1]))
        assert scores.predicted == 0
        uniform = predict(bank, np.array([0.2, -0.1]), uniform_prior=True)
        assert uniform.predicted == 0  # tie on likelihood -> smallest id

    def test_single_class_bank(self):
        bank = gmm_bank({4: (5, np.ones((1, 1)), np.array([[0.0]]), np.array([[1.0]]))})
        assert predict(bank, np.array([3.0])).predicted == 4

    def test_empty_bank_rejected(self):
        bank = MemoryBank(K=2, estimator=EstimatorConfig(kind="gmm"))
        with pytest.raises(ValidationError, match="no classes learned"):
            predict(bank, np.zeros(2))

    def test_tie_break_smallest_id(self):
        bank = two_class_bank(counts=(100, 100), mus=((0.0, 0.0), (0.0, 0.0)))
        scores = predict(bank, np.array([0.5, 0.5]))
        assert scores.log_joint[0] == scores.log_joint[1]
        assert scores.predicted == 0

    def test_matches_bruteforce_oracle(self, rng):
        # independent direct Bayes evaluation with explicit denominator
        bank = gmm_bank(
            {
                0: (30, np.full((3, 2), 0.5), rng.uniform(-1, 1, (3, 2)), rng.uniform(0.2, 1.0, (3, 2))),
                1: (50, np.full((3, 2), 0.5), rng.uniform(-1, 1, (3, 2)), rng.uniform(0.2, 1.0, (3, 2))),
                2: (20, np.full((3, 2), 0.5), rng.uniform(-1, 1, (3, 2)), rng.uniform(0.2, 1.0, (3, 2))),
            }
        )
        for _ in range(200):
            z = rng.uniform(-1.5, 1.5, 3)
            ids, post, pred = oracle_posteriors(bank, z)
            scores = posterior(bank, z)
            assert scores.predicted == pred
            assert np.allclose(scores.posterior, post, atol=1e-9)

    def test_adding_class_never_changes_existing_scores(self, rng):
        # quantitative no-forgetting: per-class log-joint is invariant
        bank = two_class_bank()
        zs = [rng.uniform(-1, 1, 2) for _ in range(20)]
        before = [predict(bank, z).log_joint.copy() for z in zs]
        counts_before = {c: bank.classes[c].count for c in bank.classes}
        bank.classes[2] = gmm_bank(
            {2: (300, np.ones((2, 1)), np.array([[2.0], [2.0]]), np.array([[0.3], [0.3]]))}
        ).classes[2]
        for z, old in zip(zs, before):
            new = predict(bank, z)
            # likelihood part unchanged; prior shifts by the same constant for
            # all old classes (total count grew), so subtract priors
            for j, cid in enumerate((0, 1)):
                old_ll = old[j] - math.log(counts_before[cid] / 1000)
                new_ll = new.log_joint[j] - math.log(counts_before[cid] / 1300)
                assert new_ll == pytest.approx(old_ll, rel=1e-12)

    def test_clamped_flag(self):
        # floored-sigma model evaluated far away trips the per-feature clamp
        bank = gmm_bank(
            {0: (10, np.ones((1, 1)), np.array([[0.0]]), np.array([[1e-4]]))}
        )
        scores = predict(bank, np.array([1.0]))
        assert scores.clamped
        assert np.isfinite(scores.log_joint[0])
        assert scores.log_joint[0] == pytest.approx(CLAMP_LOG_PDF + math.log(1.0), abs=1e-9)
        near = predict(bank, np.array([0.0]))
        assert not near.clamped


class TestPosterior:
    def test_uniform_for_identical_classes(self):
        bank = two_class_bank(counts=(100, 100), mus=((0.0, 0.0), (0.0, 0.0)))
        scores = posterior(bank, np.array([0.3, 0.3]))
        assert np.allclose(scores.posterior, [0.5, 0.5], atol=1e-12)

    def test_log3_gap_gives_three_quarters(self):
        # two classes whose log-joints differ by log 3 -> posterior (0.75, 0.25)
        bank = two_class_bank(counts=(750, 250), mus=((0.0, 0.0), (0.0, 0.0)))
        scores = posterior(bank, np.array([0.1, 0.2]))
        assert scores.log_joint[0] - scores.log_joint[1] == pytest.approx(math.log(3), rel=1e-12)
        assert np.allclose(scores.posterior, [0.75, 0.25], atol=1e-12)

    def test_sums_to_one_and_argmax_consistent(self, rng):
        bank = gmm_bank(
            {
                cid: (
                    int(rng.integers(10, 100)),
                    np.full((4, 2), 0.5),
                    rng.uniform(-1, 1, (4, 2)),
                    rng.uniform(0.2, 1.0, (4, 2)),
                )
                for cid in range(3)
            }
        )
        for _ in range(50):
            z = rng.uniform(-1.5, 1.5, 4)
            scores = posterior(bank, z)
            assert abs(scores.posterior.sum() - 1.0) < 1e-9
            assert np.all(scores.posterior > 0)
            assert scores.class_ids[int(np.argmax(scores.posterior))] == scores.predicted


class TestBatch:
    def test_batch_matches_single(self, rng):
        bank = two_class_bank()
        Z = rng.uniform(-1, 1, (10, 2))
        batch = predict_batch(bank, Z)
        for i in range(10):
            single = predict(bank, Z[i])
            assert single.predicted == batch.predicted[i]
            assert np.array_equal(single.log_joint, batch.log_joint[i])

    def test_threads_do_not_change_result(self, rng):
        bank = gmm_bank(
            {
                cid: (10, np.ones((2, 1)), rng.uniform(-1, 1, (2, 1)), np.full((2, 1), 0.3))
                for cid in range(5)
            }
        )
        Z = rng.uniform(-1, 1, (20, 2))
        a = predict_batch(bank, Z, threads=1)
        b = predict_batch(bank, Z, threads=4)
        assert np.array_equal(a.log_joint, b.log_joint)
        assert np.array_equal(a.predicted, b.predicted)

    def test_kde_bank_predicts(self, rng):
        est = EstimatorConfig(kind="kde")
        bank = MemoryBank(K=2, estimator=est)
        for cid in (0, 1):
            raw = rng.standard_normal((15, 2)) + 3 * cid
            ds = l2_normalize(
                FeatureDataset(K=2, labels=np.full(15, cid, dtype=np.int64), values=raw)
            )
            add_class(bank, form_memory(cid, ds, est))
        Z = bank.classes[1].centers[:5]
        assert np.all(predict_batch(bank, Z).predicted == 1)


class TestNcm:
    def test_exact_mean_hits_class(self):
        ids = np.array([0, 1])
        means = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert predict_ncm(ids, means, np.array([[1.0, 1.0]]))[0] == 1

    def test_tie_goes_to_smallest_id(self):
        ids = np.array([3, 1])
        means = np.array([[1.0, 0.0], [-1.0, 0.0]])
        # equidistant from both means
        assert predict_ncm(ids, means, np.array([[0.0, 5.0]]))[0] == 1

    def test_matches_bayes_on_separated_classes(self, rng):
        bank = two_class_bank(mus=((0.0, 0.0), (1.0, 1.0)), sigma=0.1)
        ids, means = class_means(bank)
        Z = np.vstack(
            [rng.normal(0, 0.05, (20, 2)), rng.normal(1, 0.05, (20, 2))]
        )
        bayes = predict_batch(bank, Z).predicted
        ncm = predict_ncm(ids, means, Z)
        assert np.array_equal(bayes, ncm)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            predict_ncm(np.array([0]), np.zeros((1, 3)), np.zeros((1, 2)))


class TestClassMeans:
    def test_gmm_mixture_mean(self):
        bank = gmm_bank(
            {0: (10, np.array([[0.25, 0.75]]), np.array([[0.0, 1.0]]), np.full((1, 2), 0.1))}
        )
        ids, means = class_means(bank)
        assert means[0, 0] == pytest.approx(0.75, abs=1e-12)

    def test_softmax_rows_stable(self):
        big = np.array([[1000.0, 1000.0 + math.log(3)]])
        out = softmax_rows(big)
        assert np.allclose(out, [[0.25, 0.75]], atol=1e-12)
