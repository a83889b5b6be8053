"""FedAvg protocol engine: sampling schedules, local updates, aggregation.

The round loop is deterministic given (config, master seed): selection,
shuffling, and dropout all draw from derived seed streams keyed by round
and client id, so concurrent and sequential client execution produce
bit-identical aggregates.
"""

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .nn import DivergenceError, ModelState, OptimizerState, evaluate, sgd_epochs


class AggregationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplingSchedule:
    kind: str  # "uniform" | "block-cyclic"
    fraction: float  # reporting fraction C in (0, 1]
    block_order: tuple | None = None  # permutation of blocks; identity if None

    def __post_init__(self):
        if self.kind not in ("uniform", "block-cyclic"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("reporting fraction must be in (0, 1]")

    def selection_size(self, K):
        return max(math.floor(self.fraction * K), 1)


def select_clients(schedule, population, t, rng):
    """The round-t client subset, sorted ascending, no duplicates."""
    m = schedule.selection_size(population.K)
    if schedule.kind == "uniform":
        ids = np.arange(population.K)
        return np.sort(rng.choice(ids, size=min(m, population.K), replace=False))
    order = schedule.block_order or tuple(range(population.G))
    g = order[t % population.G]
    members = np.array([c.client_id for c in population.block_members(g)])
    take = min(m, len(members))  # capped at the block size
    return np.sort(rng.choice(members, size=take, replace=False))


def active_block(schedule, population, t):
    if schedule.kind != "block-cyclic":
        return None
    order = schedule.block_order or tuple(range(population.G))
    return order[t % population.G]


@dataclass
class ClientResult:
    client_id: int
    n_k: int
    params: np.ndarray | None
    final_loss: float
    diverged: bool = False


def client_update(global_model, client, train_data, *, epochs, batch_size,
                  lr, momentum, epoch_seed):
    """Local FedAvg update: copy global weights, train E epochs, return.

    Momentum velocity starts at zero every call (only weights travel
    between server and clients). The global model is never mutated.
    A divergent client (non-finite loss) is returned flagged so the
    caller can exclude it from aggregation.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    local = global_model.copy()
    opt = OptimizerState.fresh(lr, momentum, local)
    x = train_data.images[client.train_indices]
    y = train_data.labels[client.train_indices]
    try:
        loss = sgd_epochs(local, x, y, opt, epochs=epochs, batch_size=batch_size,
                          epoch_seed=epoch_seed)
    except DivergenceError:
        return ClientResult(client.client_id, client.n_train, None, math.nan, True)
    return ClientResult(client.client_id, client.n_train, local.params, loss)


def aggregate(updates):
    """n_k-weighted parameter average, summed in ascending client-id order.

    Accumulates n_k * params in float64 and divides by the subset total,
    which keeps the average exact when all updates are identical.
    """
    updates = [u for u in updates if not u.diverged]
    if not updates:
        raise AggregationError("no surviving client updates to aggregate")
    updates = sorted(updates, key=lambda u: u.client_id)
    lengths = {len(u.params) for u in updates}
    if len(lengths) != 1:
        raise AggregationError("parameter vectors disagree in length")
    total = sum(u.n_k for u in updates)
    acc = np.zeros(lengths.pop(), dtype=np.float64)
    for u in updates:
        acc += u.n_k * u.params.astype(np.float64)
    return (acc / total).astype(updates[0].params.dtype)


@dataclass(frozen=True)
class ConvergenceBudget:
    """Stop when consensus accuracy fails to improve, or at the round cap."""

    min_delta: float = 0.0
    patience: int = 3
    cap: int = 1000


@dataclass
class RoundRecord:
    round: int
    block: int | None
    selected: list
    client_losses: list  # final-epoch mean loss per selected client
    diverged: list
    consensus_accuracy: float | None
    seconds: float

    # nan-aware: diverged clients report nan losses but stay in the record
    @property
    def loss_min(self):
        return float(np.nanmin(self.client_losses))

    @property
    def loss_mean(self):
        return float(np.nanmean(self.client_losses))

    @property
    def loss_max(self):
        return float(np.nanmax(self.client_losses))


@dataclass
class FedRunState:
    model: ModelState
    population: object
    train_data: object
    test_data: object
    schedule: SamplingSchedule
    epochs: int
    batch_size: int
    lr: float
    momentum: float
    master_seed: int
    round: int = 0
    union_holdout: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.union_holdout is None:
            self.union_holdout = self.population.union_holdout()


def _consensus_accuracy(state):
    result = evaluate(
        state.model,
        state.test_data.images[state.union_holdout],
        state.test_data.labels[state.union_holdout],
    )
    return result.accuracy


def run_rounds(state, budget, *, eval_every=5, jobs=1):
    """Drive the FedAvg loop under a fixed or convergence budget.

    ``budget`` is either an int (fixed number of rounds, no early
    stopping) or a ConvergenceBudget. Consensus accuracy on the union
    holdout is measured every ``eval_every`` rounds and at the final
    round. Returns the list of RoundRecords; the global model and round
    counter live on ``state``.
    """
    fixed = not isinstance(budget, ConvergenceBudget)
    cap = budget if fixed else budget.cap
    records = []
    best = -math.inf
    stale = 0
    master = state.master_seed

    def one_client(t, cid):
        client = state.population.clients[cid]
        return client_update(
            state.model, client, state.train_data,
            epochs=state.epochs, batch_size=state.batch_size,
            lr=state.lr, momentum=state.momentum,
            epoch_seed=lambda e: seeds.seed_seq(master, "client", t, cid, e),
        )

    while state.round < cap:
        t = state.round
        started = time.perf_counter()
        sel_rng = seeds.rng(master, "select", t)
        selected = select_clients(state.schedule, state.population, t, sel_rng)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(lambda cid: one_client(t, cid), selected))
        else:
            results = [one_client(t, cid) for cid in selected]
        try:
            state.model.params = aggregate(results)
        except AggregationError as exc:
            raise AggregationError(f"round {t}: {exc}") from exc
        is_eval = (t + 1) % eval_every == 0 or t + 1 == cap
        accuracy = _consensus_accuracy(state) if is_eval else None
        records.append(RoundRecord(
            round=t,
            block=active_block(state.schedule, state.population, t),
            selected=list(map(int, selected)),
            client_losses=[r.final_loss for r in results],
            diverged=[r.client_id for r in results if r.diverged],
            consensus_accuracy=accuracy,
            seconds=time.perf_counter() - started,
        ))
        state.round += 1
        if not fixed and accuracy is not None:
            if accuracy > best + budget.min_delta:
                best = accuracy
                stale = 0
            else:
                stale += 1
                if stale >= budget.patience:
                    break
    # Guarantee a final consensus measurement on early stop.
    if records and records[-1].consensus_accuracy is None:
        records[-1].consensus_accuracy = _consensus_accuracy(state)
    return records


ROUNDS_CSV_FIELDS = ("t", "block", "n_selected", "loss_min", "loss_mean",
                     "loss_max", "consensus_acc", "seconds")


def write_rounds_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_CSV_FIELDS)
        for r in records:
            writer.writerow([
                r.round,
                "" if r.block is None else r.block,
                len(r.selected),
                f"{r.loss_min:.8f}",
                f"{r.loss_mean:.8f}",
                f"{r.loss_max:.8f}",
                "" if r.consensus_accuracy is None else f"{r.consensus_accuracy:.6f}",
                f"{r.seconds:.4f}",
            ])
