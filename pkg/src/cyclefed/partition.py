"""Client population builders: IID, sorted shards, label blocks, imbalance.

Regimes:
  iid     — seeded global shuffle, N/K samples per client, no label skew.
  shards  — sort by label, cut into K*s label-contiguous shards, assign s
            shards per client (pathological label skew, no block structure).
  block   — group sorted labels into G disjoint, equally sized label
            blocks; each client belongs to one block and draws s shards
            from that block's pool. With imbalance (alpha > 1) shard
            sizes scale per block to hit the target block totals and
            draws are with replacement, which deliberately permits
            duplicated shards (oversampling of the majority block).
"""

from dataclasses import dataclass, field

import numpy as np

from . import seeds


class PartitionError(ValueError):
    pass


@dataclass
class ClientDataset:
    client_id: int
    block_id: int
    train_indices: np.ndarray
    holdout_indices: np.ndarray | None = None
    holdout_with_replacement: bool = False
    train_labels: np.ndarray | None = None  # cached via attach_train_labels

    @property
    def n_train(self):
        return len(self.train_indices)


@dataclass
class FederatedPopulation:
    clients: list
    block_labels: list  # G arrays of class labels, pairwise disjoint
    regime: str
    s: int
    alpha: float
    seed: int
    dataset_source: str = "unknown"

    @property
    def K(self):
        return len(self.clients)

    @property
    def G(self):
        return len(self.block_labels)

    @property
    def n(self):
        return sum(c.n_train for c in self.clients)

    def block_members(self, g):
        return [c for c in self.clients if c.block_id == g]

    def block_totals(self):
        totals = np.zeros(self.G, dtype=np.int64)
        for c in self.clients:
            totals[c.block_id] += c.n_train
        return totals

    def union_holdout(self):
        """Deduplicated union of all client holdout indices."""
        parts = [c.holdout_indices for c in self.clients if c.holdout_indices is not None]
        if not parts:
            raise PartitionError("holdouts have not been built")
        return np.unique(np.concatenate(parts))


@dataclass(frozen=True)
class PartitionPlan:
    regime: str  # "iid" | "shards" | "block"
    K: int
    s: int = 2
    G: int = 1
    alpha: float = 1.0
    seed: int = 0
    imbalance_mode: str = "target-ratio"

    def __post_init__(self):
        if self.regime not in ("iid", "shards", "block"):
            raise PartitionError(f"unknown regime {self.regime!r}")
        if self.s < 1:
            raise PartitionError("shards per client must be >= 1")
        if self.alpha < 1:
            raise PartitionError("imbalance scaling must be >= 1")
        if self.regime == "block" and self.G < 2:
            raise PartitionError("block regime requires G > 1")


# Reported two-block majority:minority ratios at the tabulated scalings.
_ALPHA_TAB = np.array([1.0, 1.5, 2.0, 5.0])
_RATIO_TAB = np.array([1.0, 2.0, 3.0, 11.0])


def imbalance_weights(G, alpha, mode="target-ratio"):
    """Per-block sample-mass weights, normalized to sum to 1.

    "target-ratio" pins the tabulated two-block majority:minority ratios
    (linear interpolation in alpha) and extends to G > 2 geometrically
    with the same ratio; "power" uses weight(g) ~ (g+1)^-(alpha-1).
    """
    if mode == "target-ratio":
        if not _ALPHA_TAB[0] <= alpha <= _ALPHA_TAB[-1]:
            raise PartitionError(
                f"alpha={alpha} outside [{_ALPHA_TAB[0]}, {_ALPHA_TAB[-1]}] "
                "for target-ratio mode"
            )
        ratio = float(np.interp(alpha, _ALPHA_TAB, _RATIO_TAB))
        w = ratio ** -np.arange(G, dtype=np.float64)
    elif mode == "power":
        w = (np.arange(G, dtype=np.float64) + 1.0) ** -(alpha - 1.0)
    else:
        raise PartitionError(f"unknown imbalance mode {mode!r}")
    return w / w.sum()


def partition_iid(data, K, seed):
    """Uniform split after a seeded global shuffle; N//K samples each."""
    n = len(data)
    if K > n:
        raise PartitionError(f"cannot split {n} samples across {K} clients")
    per = n // K
    perm = seeds.rng(seed, "partition-iid").permutation(n)
    clients = [
        ClientDataset(k, 0, np.sort(perm[k * per : (k + 1) * per])) for k in range(K)
    ]
    labels = np.unique(data.labels)
    return FederatedPopulation(
        clients, [labels], regime="iid", s=1, alpha=1.0, seed=seed,
        dataset_source=data.source,
    )


def _sorted_order(labels):
    return np.argsort(labels, kind="stable")


def partition_shards(data, K, s, seed):
    """McMahan-style sort-and-shard label skew; s shards per client."""
    n = len(data)
    num_shards = K * s
    if n % num_shards != 0:
        raise PartitionError(
            f"{n} samples do not divide into {num_shards} equal shards"
        )
    shard_size = n // num_shards
    order = _sorted_order(data.labels)
    shards = order.reshape(num_shards, shard_size)
    assignment = seeds.rng(seed, "partition-shards").permutation(num_shards)
    clients = []
    for k in range(K):
        own = assignment[k * s : (k + 1) * s]
        clients.append(ClientDataset(k, 0, np.sort(np.concatenate(shards[own]))))
    labels = np.unique(data.labels)
    return FederatedPopulation(
        clients, [labels], regime="shards", s=s, alpha=1.0, seed=seed,
        dataset_source=data.source,
    )


def partition_blocks(data, K, s, G, alpha, seed, imbalance_mode="target-ratio"):
    """Block-grouped label skew with optional power-law block imbalance.

    Clients [g*K/G, (g+1)*K/G) belong to block g; block g owns the g-th
    contiguous group of sorted class labels. Balanced blocks draw shards
    without replacement from evenly cut per-block pools; unbalanced
    blocks use per-block shard sizes proportional to the target weights
    and draw with replacement.
    """
    labels = np.unique(data.labels)
    if K % G != 0:
        raise PartitionError(f"K={K} must be divisible by G={G}")
    if len(labels) % G != 0:
        raise PartitionError(
            f"class count {len(labels)} must be divisible by G={G}"
        )
    n = len(data)
    cpb = K // G  # clients per block
    per_block_labels = labels.reshape(G, len(labels) // G)
    order = _sorted_order(data.labels)
    sorted_labels = data.labels[order]
    weights = imbalance_weights(G, alpha, imbalance_mode)
    balanced = np.allclose(weights, 1.0 / G)
    rng = seeds.rng(seed, "partition-blocks")
    clients = []
    for g in range(G):
        pool = order[np.isin(sorted_labels, per_block_labels[g])]
        if balanced:
            shard_size = len(pool) // (cpb * s)
        else:
            shard_size = max(1, round(weights[g] * n / (cpb * s)))
            shard_size = min(shard_size, len(pool))
        num_shards = len(pool) // shard_size
        shards = pool[: num_shards * shard_size].reshape(num_shards, shard_size)
        if balanced:
            picks = rng.permutation(num_shards)[: cpb * s]
        else:
            picks = rng.integers(0, num_shards, size=cpb * s)
        for i in range(cpb):
            own = picks[i * s : (i + 1) * s]
            clients.append(
                ClientDataset(g * cpb + i, g, np.sort(np.concatenate(shards[own])))
            )
    return FederatedPopulation(
        clients, list(per_block_labels), regime="block", s=s, alpha=alpha,
        seed=seed, dataset_source=data.source,
    )


def build_plan(data, plan):
    if plan.regime == "iid":
        return partition_iid(data, plan.K, plan.seed)
    if plan.regime == "shards":
        return partition_shards(data, plan.K, plan.s, plan.seed)
    return partition_blocks(
        data, plan.K, plan.s, plan.G, plan.alpha, plan.seed, plan.imbalance_mode
    )


def _apportion(hist, size):
    """Largest-remainder rounding of size * hist/sum(hist) to integers."""
    exact = hist * (size / hist.sum())
    counts = np.floor(exact).astype(np.int64)
    remainder = exact - counts
    short = size - counts.sum()
    for lab in np.argsort(-remainder, kind="stable")[:short]:
        counts[lab] += 1
    return counts


def build_holdouts(population, test_data, per_client_size=100, seed=0):
    """Attach per-client holdouts mirroring each client's label histogram.

    Drawn from the test split without replacement per client when the
    per-label test pool suffices, with replacement otherwise (flagged on
    the client). Returns the population for chaining.
    """
    if per_client_size < 1:
        raise PartitionError("per-client holdout size must be >= 1")
    classes = int(test_data.labels.max()) + 1
    pools = [np.flatnonzero(test_data.labels == c) for c in range(classes)]
    for client in population.clients:
        if client.train_labels is None:
            raise PartitionError("call attach_train_labels before build_holdouts")
        rng = seeds.rng(seed, "holdout", client.client_id)
        hist = np.bincount(client.train_labels, minlength=classes)
        counts = _apportion(hist.astype(np.float64), per_client_size)
        parts = []
        with_replacement = False
        for c in range(classes):
            if counts[c] == 0:
                continue
            pool = pools[c]
            if len(pool) >= counts[c]:
                parts.append(rng.choice(pool, size=counts[c], replace=False))
            else:
                with_replacement = True
                parts.append(rng.choice(pool, size=counts[c], replace=True))
        client.holdout_indices = np.sort(np.concatenate(parts))
        client.holdout_with_replacement = with_replacement
    return population


def attach_train_labels(population, train_data):
    """Cache each client's train label vector (used by holdout mirroring)."""
    for client in population.clients:
        client.train_labels = train_data.labels[client.train_indices]
    return population


def build_population(train_data, test_data, plan, holdout_size=100, holdout_seed=None):
    """Convenience: partition, cache labels, and attach holdouts."""
    population = build_plan(train_data, plan)
    attach_train_labels(population, train_data)
    hseed = plan.seed if holdout_seed is None else holdout_seed
    return build_holdouts(population, test_data, holdout_size, hseed)


MANIFEST_HEADER = "cyclefed-partition v1"


def _ints_csv(arr):
    return ",".join(str(int(v)) for v in arr)


def save_manifest(population, path, extra=None):
    """Write a replayable plain-text manifest of the population."""
    lines = [MANIFEST_HEADER]
    meta = {
        "regime": population.regime,
        "K": population.K,
        "G": population.G,
        "s": population.s,
        "alpha": population.alpha,
        "seed": population.seed,
        "dataset": population.dataset_source,
    }
    if extra:
        meta.update(extra)
    for key, value in meta.items():
        lines.append(f"{key}={value}")
    lines.append(
        "block_labels=" + ";".join(_ints_csv(b) for b in population.block_labels)
    )
    for client in population.clients:
        lines.append(f"client={client.client_id} block={client.block_id}")
        lines.append("train=" + _ints_csv(client.train_indices))
        holdout = client.holdout_indices
        lines.append("holdout=" + (_ints_csv(holdout) if holdout is not None else ""))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path):
    """Rebuild a FederatedPopulation (and metadata dict) from a manifest."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise PartitionError(f"{path} is not a cyclefed partition manifest")
    meta = {}
    clients = []
    block_labels = None
    i = 1
    while i < len(lines) and not lines[i].startswith("client="):
        key, _, value = lines[i].partition("=")
        if key == "block_labels":
            block_labels = [
                np.array([int(v) for v in part.split(",")], dtype=np.int64)
                for part in value.split(";")
            ]
        else:
            meta[key] = value
        i += 1
    while i < len(lines):
        head = dict(field.split("=") for field in lines[i].split())
        train = np.array([int(v) for v in lines[i + 1][len("train="):].split(",")])
        hold_raw = lines[i + 2][len("holdout="):]
        holdout = (
            np.array([int(v) for v in hold_raw.split(",")]) if hold_raw else None
        )
        clients.append(
            ClientDataset(int(head["client"]), int(head["block"]), train, holdout)
        )
        i += 3
    population = FederatedPopulation(
        clients,
        block_labels,
        regime=meta["regime"],
        s=int(meta["s"]),
        alpha=float(meta["alpha"]),
        seed=int(meta["seed"]),
        dataset_source=meta.get("dataset", "unknown"),
    )
    return population, meta
