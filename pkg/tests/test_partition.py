"""Population builders: regimes, imbalance, holdout mirroring, manifests."""

import numpy as np
import pytest

from cyclefed.data import synth_dataset
from cyclefed.partition import (
    PartitionError,
    PartitionPlan,
    attach_train_labels,
    build_holdouts,
    build_population,
    imbalance_weights,
    load_manifest,
    partition_blocks,
    partition_iid,
    partition_shards,
    save_manifest,
)


@pytest.fixture(scope="module")
def data():
    return synth_dataset(10, 200, 0, "train")  # N=2000


@pytest.fixture(scope="module")
def test_data():
    return synth_dataset(10, 100, 0, "test")


class TestIid:
    def test_sizes_and_disjoint_union(self, data):
        pop = partition_iid(data, 20, seed=1)
        assert all(c.n_train == 100 for c in pop.clients)
        union = np.concatenate([c.train_indices for c in pop.clients])
        assert len(np.unique(union)) == len(union) == 2000

    def test_deterministic(self, data):
        a = partition_iid(data, 20, seed=1)
        b = partition_iid(data, 20, seed=1)
        for ca, cb in zip(a.clients, b.clients):
            assert np.array_equal(ca.train_indices, cb.train_indices)

    def test_roughly_uniform_labels(self, data):
        pop = partition_iid(data, 20, seed=1)
        for c in pop.clients:
            hist = np.bincount(data.labels[c.train_indices], minlength=10)
            assert np.all(np.abs(hist - 10) < 10 * 0.8)

    def test_too_many_clients(self, data):
        with pytest.raises(PartitionError):
            partition_iid(data, 3000, seed=0)


class TestShards:
    def test_shard_sizes(self, data):
        pop = partition_shards(data, 20, 2, seed=3)
        # 2000 / (20*2) = 50 per shard, 100 per client
        assert all(c.n_train == 100 for c in pop.clients)

    def test_at_most_s_distinct_labels(self, data):
        pop = partition_shards(data, 20, 2, seed=3)
        for c in pop.clients:
            assert len(np.unique(data.labels[c.train_indices])) <= 2

    def test_multiset_union_is_whole_dataset(self, data):
        pop = partition_shards(data, 20, 2, seed=3)
        union = np.concatenate([c.train_indices for c in pop.clients])
        assert np.array_equal(np.sort(union), np.arange(2000))

    def test_shard_label_contiguity(self, data):
        # each client's sorted-by-label indices split into <= s constant runs
        pop = partition_shards(data, 20, 2, seed=3)
        for c in pop.clients:
            labels = data.labels[c.train_indices]
            order = np.argsort(labels, kind="stable")
            runs = 1 + int((np.diff(labels[order]) != 0).sum())
            assert runs <= 2

    def test_divisibility_enforced(self, data):
        with pytest.raises(PartitionError):
            partition_shards(data, 21, 2, seed=0)


class TestBlocks:
    def test_label_sets_disjoint_and_contiguous(self, data):
        pop = partition_blocks(data, 20, 2, 5, 1.0, seed=5)
        assert [b.tolist() for b in pop.block_labels] == [
            [0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]
        flat = np.concatenate(pop.block_labels)
        assert len(np.unique(flat)) == 10

    def test_client_labels_stay_in_block(self, data):
        pop = partition_blocks(data, 20, 2, 5, 1.0, seed=5)
        for c in pop.clients:
            labels = np.unique(data.labels[c.train_indices])
            assert set(labels) <= set(pop.block_labels[c.block_id].tolist())

    def test_fig1_structure(self, data):
        # 15 clients, five blocks: 3 clients per block, 2 classes per block
        pop = partition_blocks(data, 15, 2, 5, 1.0, seed=5)
        for g in range(5):
            assert len(pop.block_members(g)) == 3
            assert len(pop.block_labels[g]) == 2

    def test_balanced_ratio(self, data):
        pop = partition_blocks(data, 20, 2, 2, 1.0, seed=5)
        totals = pop.block_totals()
        assert abs(totals[0] / totals[1] - 1.0) < 0.05

    def test_unbalanced_ratio_one_to_eleven(self, data):
        pop = partition_blocks(data, 20, 2, 2, 5.0, seed=5)
        totals = pop.block_totals()
        assert totals[0] / totals[1] == pytest.approx(11.0, rel=0.10)

    def test_without_replacement_when_balanced(self, data):
        pop = partition_blocks(data, 20, 2, 5, 1.0, seed=5)
        union = np.concatenate([c.train_indices for c in pop.clients])
        assert len(np.unique(union)) == len(union)

    @pytest.mark.parametrize("G,alpha", [(2, 1.0), (2, 1.5), (2, 2.0), (2, 5.0),
                                         (5, 1.5), (5, 2.0)])
    def test_imbalance_realization(self, G, alpha):
        # >= 200 shard draws so integer shard rounding stays within 10%
        data = synth_dataset(10, 1000, 0, "train")  # N=10000
        pop = partition_blocks(data, 100, 2, G, alpha, seed=9)
        totals = pop.block_totals().astype(float)
        weights = imbalance_weights(G, alpha)
        realized = totals / totals.sum()
        assert np.all(np.abs(realized - weights) / weights < 0.10)

    def test_divisibility_errors(self, data):
        with pytest.raises(PartitionError):
            partition_blocks(data, 21, 2, 5, 1.0, seed=0)
        with pytest.raises(PartitionError):
            partition_blocks(data, 20, 2, 3, 1.0, seed=0)

    def test_deterministic(self, data):
        a = partition_blocks(data, 20, 2, 5, 5.0, seed=4)
        b = partition_blocks(data, 20, 2, 5, 5.0, seed=4)
        for ca, cb in zip(a.clients, b.clients):
            assert np.array_equal(ca.train_indices, cb.train_indices)


class TestImbalanceWeights:
    def test_tabulated_two_block_ratios(self):
        assert imbalance_weights(2, 1.0).tolist() == [0.5, 0.5]
        w = imbalance_weights(2, 5.0)
        assert w[0] == pytest.approx(11 / 12)
        assert w[1] == pytest.approx(1 / 12)
        w = imbalance_weights(2, 2.0)
        assert w[0] / w[1] == pytest.approx(3.0)

    def test_interpolation_between_tabulated(self):
        w = imbalance_weights(2, 1.25)
        assert w[0] / w[1] == pytest.approx(1.5)

    def test_power_mode_uniform_at_alpha_one(self):
        assert np.allclose(imbalance_weights(4, 1.0, mode="power"), 0.25)

    def test_weights_sum_to_one(self):
        for G in (2, 5):
            for alpha in (1.0, 1.5, 2.0, 5.0):
                assert imbalance_weights(G, alpha).sum() == pytest.approx(1.0)

    def test_alpha_out_of_range(self):
        with pytest.raises(PartitionError):
            imbalance_weights(2, 7.0)


class TestHoldouts:
    def test_proportional_histogram(self, data, test_data):
        pop = partition_shards(data, 20, 2, seed=3)
        attach_train_labels(pop, data)
        build_holdouts(pop, test_data, per_client_size=100, seed=1)
        for c in pop.clients:
            train_hist = np.bincount(c.train_labels, minlength=10)
            hold_hist = np.bincount(test_data.labels[c.holdout_indices], minlength=10)
            expected = train_hist * (100 / train_hist.sum())
            assert np.all(np.abs(hold_hist - expected) <= 1.0)

    def test_two_label_client_gets_even_split(self, data, test_data):
        pop = partition_shards(data, 20, 2, seed=3)
        attach_train_labels(pop, data)
        # craft a client holding labels 3 and 7 equally
        pop.clients[0].train_labels = np.repeat([3, 7], 300)
        build_holdouts(pop, test_data, per_client_size=100, seed=1)
        hist = np.bincount(test_data.labels[pop.clients[0].holdout_indices], minlength=10)
        assert hist[3] == 50 and hist[7] == 50 and hist.sum() == 100

    def test_tv_distance_bound(self, data, test_data):
        pop = partition_blocks(data, 20, 2, 5, 1.0, seed=5)
        attach_train_labels(pop, data)
        size = 50
        build_holdouts(pop, test_data, per_client_size=size, seed=1)
        for c in pop.clients:
            p = np.bincount(c.train_labels, minlength=10) / c.n_train
            q = np.bincount(test_data.labels[c.holdout_indices], minlength=10) / size
            tv = 0.5 * np.abs(p - q).sum()
            distinct = (p > 0).sum()
            assert tv <= distinct / (2 * size) + 1e-9

    def test_holdout_indices_point_into_test_split(self, data, test_data):
        pop = build_population(data, test_data, PartitionPlan("shards", K=20, seed=3))
        for c in pop.clients:
            assert c.holdout_indices.min() >= 0
            assert c.holdout_indices.max() < len(test_data)

    def test_without_replacement_within_client(self, data, test_data):
        pop = build_population(data, test_data, PartitionPlan("iid", K=20, seed=3),
                               holdout_size=100)
        for c in pop.clients:
            assert not c.holdout_with_replacement
            assert len(np.unique(c.holdout_indices)) == len(c.holdout_indices)


class TestManifest:
    def test_roundtrip(self, data, test_data, tmp_path):
        plan = PartitionPlan("block", K=20, s=2, G=5, alpha=5.0, seed=11)
        pop = build_population(data, test_data, plan, holdout_size=50)
        path = tmp_path / "manifest.txt"
        save_manifest(pop, path, extra={"note": "roundtrip"})
        loaded, meta = load_manifest(path)
        assert meta["note"] == "roundtrip"
        assert loaded.K == 20 and loaded.G == 5
        assert loaded.regime == "block" and loaded.alpha == 5.0
        for ca, cb in zip(pop.clients, loaded.clients):
            assert ca.block_id == cb.block_id
            assert np.array_equal(ca.train_indices, cb.train_indices)
            assert np.array_equal(ca.holdout_indices, cb.holdout_indices)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.txt"
        path.write_text("hello\n")
        with pytest.raises(PartitionError):
            load_manifest(path)
