"""Analysis surfaces: accuracy grids, fairness, forgetting, oscillation."""

import csv
from dataclasses import dataclass

import numpy as np

from .nn import evaluate


@dataclass
class GridCell:
    G: int
    C: float
    alpha: float
    accuracies: list
    incomplete: bool = False

    @property
    def mean(self):
        return float(np.mean(self.accuracies))

    @property
    def min(self):
        return float(np.min(self.accuracies))

    @property
    def max(self):
        return float(np.max(self.accuracies))


@dataclass
class GridSummary:
    cells: list
    row_means: dict  # (G, C) -> mean over alpha (participation effect)
    col_means: dict  # (G, alpha) -> mean over C (imbalance effect)


def consensus_grid(rows, expected_replicates=None):
    """Aggregate (G, C, alpha, rep, accuracy) rows into grid cells.

    Cells missing replicates (when ``expected_replicates`` is given) are
    flagged incomplete and excluded from the marginal means.
    """
    by_key = {}
    for row in rows:
        key = (int(row["G"]), float(row["C"]), float(row["alpha"]))
        by_key.setdefault(key, []).append(float(row["accuracy"]))
    cells = []
    for (g, c, a), accs in sorted(by_key.items()):
        incomplete = expected_replicates is not None and len(accs) != expected_replicates
        cells.append(GridCell(g, c, a, accs, incomplete))
    complete = [cell for cell in cells if not cell.incomplete]
    row_means = {}
    col_means = {}
    for group, attr, out in (("C", "alpha", row_means), ("alpha", "C", col_means)):
        buckets = {}
        for cell in complete:
            key = (cell.G, getattr(cell, group))
            buckets.setdefault(key, []).append(cell.mean)
        out.update({k: float(np.mean(v)) for k, v in buckets.items()})
    return GridSummary(cells, row_means, col_means)


@dataclass
class FairnessReport:
    client_ids: list  # ordered by ascending accuracy
    accuracies: np.ndarray  # sorted ascending
    blocks: list  # block id per entry, aligned with client_ids
    mean: float
    variance: float
    uniform_reference: np.ndarray  # straight line between min and max

    def quantile_pairs(self):
        return list(zip(self.accuracies, self.uniform_reference))


def fairness_report(model, population, test_data):
    """Per-client accuracies of the consensus model on local holdouts.

    The uniform reference is the straight line between the observed
    minimum and maximum accuracy (the fairness-optimal distribution for
    a quantile-quantile comparison). Variance of the accuracies is the
    scalar fairness summary. The model is not mutated.
    """
    entries = []
    for client in population.clients:
        if client.holdout_indices is None or len(client.holdout_indices) == 0:
            raise ValueError(f"client {client.client_id} has no holdout")
        result = evaluate(
            model,
            test_data.images[client.holdout_indices],
            test_data.labels[client.holdout_indices],
        )
        entries.append((result.accuracy, client.client_id, client.block_id))
    entries.sort()
    accs = np.array([e[0] for e in entries])
    reference = np.linspace(accs[0], accs[-1], len(accs))
    return FairnessReport(
        client_ids=[e[1] for e in entries],
        accuracies=accs,
        blocks=[e[2] for e in entries],
        mean=float(accs.mean()),
        variance=float(accs.var()),
        uniform_reference=reference,
    )


@dataclass
class ForgettingProfile:
    block_recalls: np.ndarray  # per-block recall, indexed by block id
    last_block_share: float  # fraction of predictions in the last block's labels
    last_block: int


def forgetting_profile(confusion, block_label_sets, last_trained_block):
    """Per-block recall plus the prediction mass captured by the last block."""
    confusion = np.asarray(confusion)
    classes = confusion.shape[0]
    covered = np.concatenate([np.asarray(b) for b in block_label_sets])
    if sorted(covered.tolist()) != list(range(classes)):
        raise ValueError("block label sets must partition the classes")
    recalls = np.empty(len(block_label_sets))
    for g, block in enumerate(block_label_sets):
        block = np.asarray(block)
        support = confusion[block, :].sum()
        correct = confusion[block, block].sum() if support else 0
        recalls[g] = correct / support if support else 0.0
    last_labels = np.asarray(block_label_sets[last_trained_block])
    share = confusion[:, last_labels].sum() / confusion.sum()
    return ForgettingProfile(recalls, float(share), last_trained_block)


@dataclass
class OscillationSummary:
    index: float  # std of per-round mean training loss over the window
    envelope_widths: np.ndarray  # per-round (max - min) client loss


def oscillation_index(records, window):
    """Training-error volatility over a round window [lo, hi)."""
    lo, hi = window
    rounds = {r.round: r for r in records}
    if hi - lo < 2:
        raise ValueError("window must span at least 2 rounds")
    if lo < min(rounds) or hi > max(rounds) + 1:
        raise ValueError(f"window {window} outside recorded rounds")
    picked = [rounds[t] for t in range(lo, hi)]
    means = np.array([r.loss_mean for r in picked])
    widths = np.array([r.loss_max - r.loss_min for r in picked])
    return OscillationSummary(float(means.std()), widths)


def write_grid_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("G", "C", "alpha", "rep", "accuracy"))
        for row in rows:
            writer.writerow([
                row["G"], f"{row['C']:.2f}", f"{row['alpha']:.2f}",
                row["rep"], f"{row['accuracy']:.6f}",
            ])


def write_fairness_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("client", "block", "accuracy"))
        for cid, block, acc in zip(report.client_ids, report.blocks, report.accuracies):
            writer.writerow([cid, block, f"{acc:.6f}"])


def write_confusion_csv(confusion, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("true", "pred", "count"))
        for i, row in enumerate(confusion):
            for j, count in enumerate(row):
                writer.writerow([i, j, int(count)])


def read_grid_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
