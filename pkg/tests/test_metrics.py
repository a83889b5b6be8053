"""Grid summaries, fairness, forgetting, and oscillation metrics."""

import numpy as np
import pytest

from cyclefed.federation import RoundRecord
from cyclefed.metrics import (
    consensus_grid,
    fairness_report,
    forgetting_profile,
    oscillation_index,
    read_grid_csv,
    write_grid_csv,
)
from cyclefed.nn import build_model, evaluate
from cyclefed.partition import PartitionPlan, build_population


def grid_row(g, c, alpha, rep, acc):
    return {"G": g, "C": c, "alpha": alpha, "rep": rep, "accuracy": acc}


class TestConsensusGrid:
    def test_cell_statistics(self):
        rows = [grid_row(2, 0.1, 1.0, r, a) for r, a in enumerate((0.5, 0.7, 0.6))]
        summary = consensus_grid(rows, expected_replicates=3)
        (cell,) = summary.cells
        assert cell.mean == pytest.approx(0.6)
        assert cell.min == 0.5
        assert cell.max == 0.7
        assert not cell.incomplete

    def test_marginal_means(self):
        rows = [
            grid_row(2, 0.1, 1.0, 0, 0.4),
            grid_row(2, 0.1, 5.0, 0, 0.6),
            grid_row(2, 0.2, 1.0, 0, 0.8),
            grid_row(2, 0.2, 5.0, 0, 1.0),
        ]
        summary = consensus_grid(rows)
        assert summary.row_means[(2, 0.1)] == pytest.approx(0.5)
        assert summary.row_means[(2, 0.2)] == pytest.approx(0.9)
        assert summary.col_means[(2, 1.0)] == pytest.approx(0.6)
        assert summary.col_means[(2, 5.0)] == pytest.approx(0.8)

    def test_incomplete_cells_excluded_from_marginals(self):
        rows = [
            grid_row(1, 0.1, 1.0, 0, 0.5),
            grid_row(1, 0.1, 1.0, 1, 0.7),
            grid_row(1, 0.2, 1.0, 0, 0.9),  # one missing replicate
        ]
        summary = consensus_grid(rows, expected_replicates=2)
        flags = {(c.C): c.incomplete for c in summary.cells}
        assert flags == {0.1: False, 0.2: True}
        assert (1, 0.2) not in summary.row_means
        assert summary.col_means[(1, 1.0)] == pytest.approx(0.6)

    def test_csv_roundtrip(self, tmp_path):
        rows = [grid_row(5, 0.05, 1.5, r, 0.1 * r) for r in range(3)]
        path = tmp_path / "grid.csv"
        write_grid_csv(rows, path)
        back = read_grid_csv(path)
        summary = consensus_grid(back, expected_replicates=3)
        assert summary.cells[0].mean == pytest.approx(0.1)


@pytest.fixture(scope="module")
def population(desk_train, desk_test):
    plan = PartitionPlan("block", K=20, s=2, G=5, alpha=1.0, seed=2)
    return build_population(desk_train, desk_test, plan, holdout_size=50)


class TestFairness:
    def test_sorted_and_consistent(self, desk_test, population):
        model = build_model("mlp-small", 0)
        report = fairness_report(model, population, desk_test)
        assert len(report.client_ids) == 20
        assert np.all(np.diff(report.accuracies) >= 0)
        assert report.mean == pytest.approx(report.accuracies.mean())
        assert report.variance == pytest.approx(report.accuracies.var())

    def test_uniform_reference_endpoints(self, desk_test, population):
        model = build_model("mlp-small", 0)
        report = fairness_report(model, population, desk_test)
        assert report.uniform_reference[0] == report.accuracies[0]
        assert report.uniform_reference[-1] == report.accuracies[-1]

    def test_model_not_mutated(self, desk_test, population):
        model = build_model("mlp-small", 0)
        before = model.params.copy()
        fairness_report(model, population, desk_test)
        assert np.array_equal(model.params, before)

    def test_missing_holdout_rejected(self, desk_test, population):
        model = build_model("mlp-small", 0)
        saved = population.clients[3].holdout_indices
        population.clients[3].holdout_indices = np.empty(0, dtype=np.int64)
        try:
            with pytest.raises(ValueError, match="holdout"):
                fairness_report(model, population, desk_test)
        finally:
            population.clients[3].holdout_indices = saved


class TestForgetting:
    def test_identity_confusion_perfect_recall(self):
        confusion = np.eye(10, dtype=np.int64) * 7
        blocks = [np.arange(5), np.arange(5, 10)]
        profile = forgetting_profile(confusion, blocks, last_trained_block=1)
        assert np.allclose(profile.block_recalls, 1.0)
        assert profile.last_block_share == pytest.approx(0.5)

    def test_degenerate_all_last_block(self):
        # everything predicted as class 8: first block recall collapses
        confusion = np.zeros((10, 10), dtype=np.int64)
        confusion[:, 8] = 10
        blocks = [np.arange(8), np.array([8, 9])]
        profile = forgetting_profile(confusion, blocks, last_trained_block=1)
        assert profile.block_recalls[0] == 0.0
        assert profile.block_recalls[1] == pytest.approx(10 / 20)
        assert profile.last_block_share == 1.0

    def test_recall_support_weighting_matches_accuracy(self, rng):
        confusion = rng.integers(0, 20, size=(10, 10))
        blocks = [np.arange(0, 2), np.arange(2, 6), np.arange(6, 10)]
        profile = forgetting_profile(confusion, blocks, last_trained_block=0)
        supports = np.array([confusion[np.asarray(b), :].sum() for b in blocks])
        weighted = (profile.block_recalls * supports).sum() / supports.sum()
        accuracy = np.trace(confusion) / confusion.sum()
        assert weighted == pytest.approx(accuracy)

    def test_invalid_partition_rejected(self):
        confusion = np.eye(10, dtype=np.int64)
        with pytest.raises(ValueError, match="partition"):
            forgetting_profile(confusion, [np.arange(4), np.arange(4, 9)], 0)


def loss_record(t, losses):
    losses = list(map(float, losses))
    return RoundRecord(round=t, block=0, selected=list(range(len(losses))),
                       client_losses=losses, diverged=[],
                       consensus_accuracy=None, seconds=0.0)


class TestOscillation:
    def test_constant_losses_zero_index(self):
        records = [loss_record(t, [2.0, 2.0]) for t in range(10)]
        summary = oscillation_index(records, (0, 10))
        assert summary.index == 0.0
        assert np.all(summary.envelope_widths == 0.0)

    def test_alternating_losses(self):
        records = [loss_record(t, [1.0 if t % 2 else 3.0]) for t in range(10)]
        summary = oscillation_index(records, (0, 10))
        assert summary.index == pytest.approx(1.0)

    def test_envelope_width(self):
        records = [loss_record(t, [1.0, 2.0, 4.0]) for t in range(4)]
        summary = oscillation_index(records, (0, 4))
        assert np.all(summary.envelope_widths == 3.0)

    def test_window_validation(self):
        records = [loss_record(t, [1.0]) for t in range(5)]
        with pytest.raises(ValueError):
            oscillation_index(records, (0, 6))
        with pytest.raises(ValueError):
            oscillation_index(records, (2, 3))
