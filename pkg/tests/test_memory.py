import numpy as np
import pytest

from bayesmem.density import SIGMA_FLOOR
from bayesmem.features import FeatureDataset, l2_normalize
from bayesmem.memory import (
    EstimatorConfig,
    MemoryBank,
    add_class,
    bank_to_bytes,
    feature_seed,
    form_memory,
    load_bank,
    memory_footprint,
    save_bank,
    serialize_class_memory,
    update_class,
)
from bayesmem.utils import DataFormatError, ValidationError

GMM1 = EstimatorConfig(kind="gmm", components=1)
GMM2 = EstimatorConfig(kind="gmm", components=2)
KDE = EstimatorConfig(kind="kde")


def class_ds(cid, values, normalized=True):
    values = np.asarray(values, dtype=np.float64)
    return FeatureDataset(
        K=values.shape[1],
        labels=np.full(values.shape[0], cid, dtype=np.int64),
        values=values,
        normalized=normalized,
    )


def normalized_cloud(rng, cid, n, k, loc=0.0):
    raw = rng.standard_normal((n, k)) + loc
    return l2_normalize(
        FeatureDataset(K=k, labels=np.full(n, cid, dtype=np.int64), values=raw)
    )


class TestFormMemory:
    def test_single_component_closed_form(self, rng):
        ds = normalized_cloud(rng, 0, 50, 2)
        cm = form_memory(0, ds, GMM1)
        assert cm.count == 50
        assert cm.K == 2
        for k in range(2):
            col = ds.values[:, k]
            assert cm.mus[k, 0] == pytest.approx(float(np.mean(col)), abs=1e-9)
            assert cm.sigmas[k, 0] == pytest.approx(
                max(float(np.std(col)), SIGMA_FLOOR), abs=1e-9
            )

    def test_single_record_degenerate_fit(self):
        ds = class_ds(3, [[0.6, 0.8]])
        cm = form_memory(3, ds, GMM2)
        assert cm.n_components == 1  # reduced from 2
        assert cm.mus[0, 0] == pytest.approx(0.6, abs=1e-12)
        assert cm.mus[1, 0] == pytest.approx(0.8, abs=1e-12)
        assert np.all(cm.sigmas == SIGMA_FLOOR)

    def test_requires_normalized(self, rng):
        ds = class_ds(0, rng.standard_normal((5, 2)), normalized=False)
        with pytest.raises(ValidationError, match="normalized"):
            form_memory(0, ds, GMM1)

    def test_rejects_mixed_labels(self, rng):
        values = rng.standard_normal((4, 2))
        ds = FeatureDataset(
            K=2, labels=np.array([0, 0, 1, 0]), values=values, normalized=True
        )
        with pytest.raises(ValidationError, match="mixed labels"):
            form_memory(0, ds, GMM1)

    def test_rejects_empty(self):
        ds = FeatureDataset(
            K=2, labels=np.zeros(0, dtype=np.int64), values=np.empty((0, 2)), normalized=True
        )
        with pytest.raises(ValidationError, match="no records"):
            form_memory(0, ds, GMM1)

    def test_models_property_exposes_density_models(self, rng):
        ds = normalized_cloud(rng, 1, 30, 3)
        cm = form_memory(1, ds, GMM2)
        models = cm.models
        assert len(models) == 3
        from bayesmem.density import Gmm1D

        assert all(isinstance(m, Gmm1D) for m in models)
        kde_cm = form_memory(1, ds, KDE)
        from bayesmem.density import Kde1D

        assert all(isinstance(m, Kde1D) for m in kde_cm.models)

    def test_suffstat_counts_sum_to_count(self, rng):
        ds = normalized_cloud(rng, 0, 37, 4)
        cm = form_memory(0, ds, GMM2)
        per_dim = cm.suff_counts.sum(axis=1)
        assert np.allclose(per_dim, 37.0, atol=1e-6)

    def test_threads_do_not_change_result(self, rng):
        ds = normalized_cloud(rng, 0, 40, 600)  # spans multiple fit chunks
        a = form_memory(0, ds, GMM2, threads=1)
        b = form_memory(0, ds, GMM2, threads=4)
        assert serialize_class_memory(a) == serialize_class_memory(b)

    def test_feature_seed_stable_and_distinct(self):
        s1 = feature_seed(7, 3, 0)
        s2 = feature_seed(7, 3, 0)
        s3 = feature_seed(7, 3, 1)
        s4 = feature_seed(7, 4, 0)
        assert s1 == s2
        assert len({s1, s3, s4}) == 3


class TestAddClass:
    def test_empty_bank_grows(self, rng):
        bank = MemoryBank(K=2, estimator=GMM1)
        cm = form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1)
        add_class(bank, cm)
        assert bank.class_ids() == [0]
        assert bank.total_count == 10

    def test_duplicate_rejected(self, rng):
        bank = MemoryBank(K=2, estimator=GMM1)
        cm = form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1)
        add_class(bank, cm)
        with pytest.raises(ValidationError, match="already learned"):
            add_class(bank, cm)

    def test_k_mismatch_rejected(self, rng):
        bank = MemoryBank(K=3, estimator=GMM1)
        cm = form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1)
        with pytest.raises(ValidationError, match="dimension mismatch"):
            add_class(bank, cm)

    def test_isolation_bytes_unchanged(self, rng):
        # the core no-forgetting property: old memories bit-identical
        bank = MemoryBank(K=4, estimator=GMM2)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 20, 4), GMM2))
        add_class(bank, form_memory(1, normalized_cloud(rng, 1, 25, 4, loc=1.0), GMM2))
        snap0 = serialize_class_memory(bank.classes[0])
        snap1 = serialize_class_memory(bank.classes[1])
        add_class(bank, form_memory(2, normalized_cloud(rng, 2, 30, 4, loc=-1.0), GMM2))
        assert serialize_class_memory(bank.classes[0]) == snap0
        assert serialize_class_memory(bank.classes[1]) == snap1
        assert bank.class_ids() == [0, 1, 2]

    def test_order_invariance_of_bank_bytes(self, rng):
        memories = {
            cid: form_memory(cid, normalized_cloud(rng, cid, 15, 3, loc=cid), GMM2)
            for cid in range(4)
        }
        bank_a = MemoryBank(K=3, estimator=GMM2)
        for cid in [0, 1, 2, 3]:
            add_class(bank_a, memories[cid])
        bank_b = MemoryBank(K=3, estimator=GMM2)
        for cid in [3, 1, 0, 2]:
            add_class(bank_b, memories[cid])
        assert bank_to_bytes(bank_a) == bank_to_bytes(bank_b)


class TestUpdateClass:
    def test_empty_batch_is_noop(self, rng):
        bank = MemoryBank(K=2, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1))
        before = bank_to_bytes(bank)
        empty = FeatureDataset(
            K=2, labels=np.zeros(0, dtype=np.int64), values=np.empty((0, 2)), normalized=True
        )
        update_class(bank, 0, empty)
        assert bank_to_bytes(bank) == before

    def test_unknown_class_rejected(self, rng):
        bank = MemoryBank(K=2, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1))
        with pytest.raises(ValidationError, match="not in bank"):
            update_class(bank, 9, normalized_cloud(rng, 9, 5, 2))

    def test_s1_incremental_equals_batch(self, rng):
        # oracle: a single fit over the concatenation (exact for S=1)
        full = normalized_cloud(rng, 0, 60, 3)
        first = class_ds(0, full.values[:30])
        second = class_ds(0, full.values[30:])
        bank = MemoryBank(K=3, estimator=GMM1)
        add_class(bank, form_memory(0, first, GMM1))
        update_class(bank, 0, second)
        batch = form_memory(0, full, GMM1)
        inc = bank.classes[0]
        assert inc.count == batch.count == 60
        assert np.allclose(inc.weights, batch.weights, atol=1e-9)
        assert np.allclose(inc.mus, batch.mus, atol=1e-9)
        assert np.allclose(inc.sigmas, batch.sigmas, atol=1e-9)

    def test_s2_incremental_close_to_batch_refit(self):
        # well-separated bimodal data per dim; loose tolerance (incremental
        # EM approximates the refit)
        rng = np.random.default_rng(77)
        a = np.concatenate([rng.normal(-2, 0.1, 100), rng.normal(2, 0.1, 100)])
        b = np.concatenate([rng.normal(-2, 0.1, 50), rng.normal(2, 0.1, 50)])
        full = np.concatenate([a, b])
        # build 2-D feature matrices (second dim mirrors the first)
        to_ds = lambda v: l2_normalize(
            FeatureDataset(
                K=2,
                labels=np.zeros(v.size, dtype=np.int64),
                values=np.stack([v, v + 5.0], axis=1),
            )
        )
        bank = MemoryBank(K=2, estimator=GMM2)
        add_class(bank, form_memory(0, to_ds(a), GMM2))
        update_class(bank, 0, to_ds(b))
        batch = form_memory(0, to_ds(full), GMM2)
        assert np.allclose(bank.classes[0].mus, batch.mus, atol=0.1)

    def test_counts_bookkeeping(self, rng):
        bank = MemoryBank(K=2, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1))
        add_class(bank, form_memory(1, normalized_cloud(rng, 1, 20, 2), GMM1))
        update_class(bank, 0, normalized_cloud(rng, 0, 7, 2))
        assert bank.classes[0].count == 17
        assert bank.total_count == 37

    def test_kde_update_appends_and_rederives_bandwidth(self, rng):
        first = normalized_cloud(rng, 0, 20, 2)
        second = normalized_cloud(rng, 0, 15, 2)
        bank = MemoryBank(K=2, estimator=KDE)
        add_class(bank, form_memory(0, first, KDE))
        update_class(bank, 0, second)
        cm = bank.classes[0]
        assert cm.count == 35
        assert cm.centers.shape == (35, 2)
        merged = np.vstack([first.values, second.values])
        assert np.array_equal(cm.centers, merged)
        expected_bw = np.maximum(
            1.06 * np.sqrt(np.mean((merged - merged.mean(0)) ** 2, axis=0)) * 35 ** (-0.2),
            1e-4,
        )
        assert np.allclose(cm.bandwidths, expected_bw, atol=1e-12)

    def test_update_swaps_whole_entry(self, rng):
        bank = MemoryBank(K=2, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 10, 2), GMM1))
        old = bank.classes[0]
        update_class(bank, 0, normalized_cloud(rng, 0, 5, 2))
        assert bank.classes[0] is not old
        assert old.count == 10  # snapshot untouched


class TestSaveLoad:
    def test_round_trip_gmm(self, rng, tmp_path):
        bank = MemoryBank(K=3, estimator=GMM2)
        for cid in range(3):
            add_class(bank, form_memory(cid, normalized_cloud(rng, cid, 12 + cid, 3), GMM2))
        path = tmp_path / "bank.bmb"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert bank_to_bytes(loaded) == bank_to_bytes(bank)
        assert loaded.estimator == bank.estimator
        assert loaded.class_ids() == bank.class_ids()
        for cid in bank.class_ids():
            a, b = bank.classes[cid], loaded.classes[cid]
            assert a.count == b.count
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.mus, b.mus)
            assert np.array_equal(a.sigmas, b.sigmas)
            assert np.array_equal(a.suff_counts, b.suff_counts)
            assert np.array_equal(a.suff_sums, b.suff_sums)
            assert np.array_equal(a.suff_sumsqs, b.suff_sumsqs)

    def test_round_trip_kde(self, rng, tmp_path):
        bank = MemoryBank(K=2, estimator=KDE)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 9, 2), KDE))
        path = tmp_path / "bank.bmb"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert bank_to_bytes(loaded) == bank_to_bytes(bank)
        assert loaded.estimator.bandwidth is None

    def test_truncated_file_rejected(self, rng, tmp_path):
        bank = MemoryBank(K=2, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 5, 2), GMM1))
        path = tmp_path / "bank.bmb"
        save_bank(bank, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(DataFormatError, match="truncated"):
            load_bank(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bank.bmb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataFormatError, match="magic"):
            load_bank(path)

    def test_version_mismatch_rejected(self, rng, tmp_path):
        bank = MemoryBank(K=2, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 5, 2), GMM1))
        path = tmp_path / "bank.bmb"
        save_bank(bank, path)
        data = bytearray(path.read_bytes())
        data[4] = 99  # version byte (little-endian u32 at offset 4)
        path.write_bytes(bytes(data))
        with pytest.raises(DataFormatError, match="version"):
            load_bank(path)

    def test_skin40_shaped_bank(self, tmp_path):
        # 40 classes at K=2048 (the Skin40 configuration), direct construction
        from conftest import gmm_class_memory

        rng = np.random.default_rng(3)
        bank = MemoryBank(K=2048, estimator=GMM2)
        for cid in range(40):
            mus = rng.uniform(-1, 1, (2048, 2))
            bank.classes[cid] = gmm_class_memory(
                cid, 50, np.full((2048, 2), 0.5), mus, np.full((2048, 2), 0.1)
            )
        path = tmp_path / "skin40.bmb"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert len(loaded.classes) == 40
        assert loaded.K == 2048


class TestFootprint:
    def test_gmm_production_scale(self):
        from conftest import gmm_class_memory

        bank = MemoryBank(K=2048, estimator=GMM2)
        bank.classes[0] = gmm_class_memory(
            0, 50, np.full((2048, 2), 0.5), np.zeros((2048, 2)), np.ones((2048, 2))
        )
        fp = memory_footprint(bank)
        # 3*S*K with weights stored explicitly (2*S*K = 8192 if weights were
        # assumed uniform and left out)
        assert fp["per_class"][0]["param_reals"] == 12288
        assert fp["total_param_reals"] == 12288

    def test_gmm_small(self, rng):
        bank = MemoryBank(K=4, estimator=GMM1)
        add_class(bank, form_memory(0, normalized_cloud(rng, 0, 8, 4), GMM1))
        fp = memory_footprint(bank)
        assert fp["per_class"][0]["param_reals"] == 12  # 3*1*4

    def test_kde_footprint(self, rng):
        bank = MemoryBank(K=2048, estimator=KDE)
        vals = rng.standard_normal((60, 2048))
        ds = l2_normalize(
            FeatureDataset(K=2048, labels=np.zeros(60, dtype=np.int64), values=vals)
        )
        add_class(bank, form_memory(0, ds, KDE))
        fp = memory_footprint(bank)
        assert fp["per_class"][0]["center_reals"] == 122880  # 60*2048
        assert fp["per_class"][0]["bandwidth_reals"] == 2048  # Silverman: one per dim
        fixed = MemoryBank(K=2048, estimator=EstimatorConfig(kind="kde", bandwidth=0.1))
        add_class(fixed, form_memory(0, ds, fixed.estimator))
        assert memory_footprint(fixed)["per_class"][0]["bandwidth_reals"] == 1
