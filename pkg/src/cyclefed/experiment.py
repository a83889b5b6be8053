"""Experiment orchestration: config, sweep expansion, output tree.

A config is a flat key/value mapping (YAML on disk, CLI flags override
individual keys). ``expand_grid`` turns it into concrete runs over the
Cartesian product of G, C, alpha, and eta with n seeded replicates per
cell; each run gets a seed derived from (master seed, cell key, rep), so
replicate r of different cells never shares randomness.
"""

import dataclasses
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import metrics, seeds
from .data import get_datasets
from .federation import (
    ConvergenceBudget,
    FedRunState,
    SamplingSchedule,
    run_rounds,
    write_rounds_csv,
)
from .nn import build_model, evaluate, save_checkpoint
from .partition import PartitionPlan, build_population, save_manifest


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # Defaults reproduce the reference protocol at full scale.
    dataset: str = "mnist"
    model: str = "paper-cnn"
    K: int = 100
    C: tuple = (0.05, 0.10, 0.20, 1.00)
    G: tuple = (1, 2, 5)
    alpha: tuple = (1.0, 1.5, 2.0, 5.0)
    eta: tuple = (0.01,)
    B: int = 64
    E: int = 3
    T: int = 100
    s: int = 2
    beta: float = 0.5
    reps: int = 3
    seed: int = 0
    eval_every: int = 5
    out: str = "runs"
    precision: str = "f32"
    regime: str = "auto"  # G=1 -> shards unless overridden to "iid"
    holdout_size: int = 100
    imbalance_mode: str = "target-ratio"
    convergence: dict | None = None  # {min_delta, patience, cap} or None
    jobs: int = 1
    data_dir: str | None = None
    synth_train_per_class: int = 200
    synth_test_per_class: int = 100

    def __post_init__(self):
        for key in ("C", "G", "alpha", "eta"):
            value = getattr(self, key)
            if not isinstance(value, (tuple, list)) or len(value) == 0:
                raise ConfigError(f"{key} must be a nonempty list")
            setattr(self, key, tuple(value))
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        if self.regime not in ("auto", "iid", "shards"):
            raise ConfigError("regime must be auto, iid, or shards")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


PRESETS = {
    # Full protocol: MNIST, paper-cnn, K=100, T=100, 96 block runs plus
    # the G=1 baseline column.
    "paper": {},
    # Scaled-down trend suite: synthetic blobs, small MLP, minutes on CPU.
    "desk": {
        "dataset": "synthetic",
        "model": "mlp-small",
        "K": 20,
        "T": 50,
        "C": [1.0],
        "alpha": [1.0, 5.0],
        "G": [1, 2, 5],
        "holdout_size": 50,
    },
}


def config_from_preset(name, overrides=None):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    if overrides:
        values.update(overrides)
    return ExperimentConfig(**values)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def config_from_file(path, overrides=None):
    with open(path) as fh:
        values = yaml.safe_load(fh) or {}
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must contain a flat key/value mapping")
    preset = values.pop("preset", None)
    unknown = set(values) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if preset:
        merged = dict(PRESETS.get(preset, {}))
        merged.update(values)
        values = merged
    if overrides:
        values.update(overrides)
    return ExperimentConfig(**values)


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    G: int
    C: float
    alpha: float
    eta: float
    rep: int
    seed: int


def _milli(value):
    return int(round(value * 1e6))


def expand_grid(config):
    """Concrete run specs for the config's sweep grid.

    G=1 runs ignore alpha (a single alpha=1.0 column is emitted).
    """
    runs = []
    for g in config.G:
        if g < 1:
            raise ConfigError("G must be >= 1")
        if config.K % g != 0:
            raise ConfigError(f"K must be divisible by G (K={config.K}, G={g})")
        alphas = (1.0,) if g == 1 else config.alpha
        for c in config.C:
            if not 0.0 < c <= 1.0:
                raise ConfigError(f"C={c} outside (0, 1]")
            for alpha in alphas:
                if alpha < 1.0:
                    raise ConfigError(f"alpha={alpha} must be >= 1")
                for eta in config.eta:
                    for rep in range(config.reps):
                        seed = seeds.seed_int(
                            config.seed, "run", g, _milli(c), _milli(alpha),
                            _milli(eta), rep,
                        )
                        run_id = f"G{g}_C{c:.2f}_a{alpha:g}_eta{eta:g}_r{rep}"
                        runs.append(RunSpec(run_id, g, c, alpha, eta, rep, seed))
    return runs


def _plan_for(config, spec):
    if spec.G == 1:
        regime = "iid" if config.regime == "iid" else "shards"
        return PartitionPlan(regime=regime, K=config.K, s=config.s,
                             seed=seeds.seed_int(spec.seed, "partition"))
    return PartitionPlan(
        regime="block", K=config.K, s=config.s, G=spec.G, alpha=spec.alpha,
        seed=seeds.seed_int(spec.seed, "partition"),
        imbalance_mode=config.imbalance_mode,
    )


def execute_run(config, spec, train_data=None, test_data=None, out_dir=None):
    """Run one grid cell replicate and write its output directory.

    Returns (spec, final consensus accuracy).
    """
    synth_seed = seeds.seed_int(config.seed, "dataset")
    if train_data is None or test_data is None:
        train_data, test_data = get_datasets(
            config.dataset, data_dir=config.data_dir,
            synth_train_per_class=config.synth_train_per_class,
            synth_test_per_class=config.synth_test_per_class,
            synth_seed=synth_seed,
        )
    population = build_population(
        train_data, test_data, _plan_for(config, spec),
        holdout_size=config.holdout_size,
        holdout_seed=seeds.seed_int(spec.seed, "holdout"),
    )
    model = build_model(config.model, seeds.seed_seq(spec.seed, "init"),
                        dtype=config.dtype)
    schedule = SamplingSchedule(
        kind="uniform" if spec.G == 1 else "block-cyclic", fraction=spec.C
    )
    state = FedRunState(
        model=model, population=population, train_data=train_data,
        test_data=test_data, schedule=schedule, epochs=config.E,
        batch_size=config.B, lr=spec.eta, momentum=config.beta,
        master_seed=spec.seed,
    )
    budget = (
        ConvergenceBudget(**config.convergence) if config.convergence else config.T
    )
    records = run_rounds(state, budget, eval_every=config.eval_every)
    final_accuracy = records[-1].consensus_accuracy

    if out_dir is not None:
        run_dir = Path(out_dir) / spec.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        save_manifest(population, run_dir / "manifest.txt",
                      extra={"model": config.model, "run_seed": spec.seed,
                             "synth_seed": synth_seed,
                             "synth_train_per_class": config.synth_train_per_class,
                             "synth_test_per_class": config.synth_test_per_class})
        write_rounds_csv(records, run_dir / "rounds.csv")
        save_checkpoint(model, run_dir / "checkpoint.bin")
        report = metrics.fairness_report(model, population, test_data)
        metrics.write_fairness_csv(report, run_dir / "fairness.csv")
        union = population.union_holdout()
        result = evaluate(model, test_data.images[union], test_data.labels[union])
        metrics.write_confusion_csv(result.confusion, run_dir / "confusion.csv")
    return spec, final_accuracy


def _run_worker(args):
    config, spec, out_dir = args
    try:
        _, accuracy = execute_run(config, spec, out_dir=out_dir)
        return spec, accuracy, None
    except Exception:
        return spec, None, traceback.format_exc()


def run_experiment(config, progress=None):
    """Execute the whole sweep; returns a process exit status (0 = ok).

    Writes per-run directories plus grid.csv and summary.txt under
    ``config.out``. Individual run failures are recorded and the
    remaining runs continue.
    """
    progress = progress or (lambda msg: print(msg, file=sys.stderr))
    started = time.perf_counter()
    runs = expand_grid(config)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_rows = []
    failures = []
    jobs = [(config, spec, out_dir) for spec in runs]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_worker, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            progress(f"[{i + 1}/{len(jobs)}] {job[1].run_id}")
            results.append(_run_worker(job))
    for spec, accuracy, error in results:
        if error is not None:
            failures.append((spec, error))
            progress(f"run {spec.run_id} aborted:\n{error}")
            continue
        grid_rows.append({
            "G": spec.G, "C": spec.C, "alpha": spec.alpha,
            "rep": spec.rep, "accuracy": accuracy,
        })
    metrics.write_grid_csv(grid_rows, out_dir / "grid.csv")
    summary = metrics.consensus_grid(grid_rows, expected_replicates=config.reps)
    _write_summary(config, summary, failures,
                   time.perf_counter() - started, out_dir / "summary.txt")
    return 1 if failures else 0


def _write_summary(config, summary, failures, elapsed, path):
    lines = ["cyclefed experiment summary", "", "[config]"]
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    lines += ["", "[cells]  (G, C, alpha) -> mean [min, max] over replicates"]
    for cell in summary.cells:
        flag = "  INCOMPLETE" if cell.incomplete else ""
        lines.append(
            f"G={cell.G} C={cell.C:.2f} alpha={cell.alpha:g}: "
            f"{cell.mean:.4f} [{cell.min:.4f}, {cell.max:.4f}]{flag}"
        )
    lines += ["", "[participation means]  (G, C) over alpha"]
    for (g, c), mean in sorted(summary.row_means.items()):
        lines.append(f"G={g} C={c:.2f}: {mean:.4f}")
    lines += ["", "[imbalance means]  (G, alpha) over C"]
    for (g, a), mean in sorted(summary.col_means.items()):
        lines.append(f"G={g} alpha={a:g}: {mean:.4f}")
    if failures:
        lines += ["", "[failures]"]
        for spec, _ in failures:
            lines.append(spec.run_id)
    lines += ["", f"wall clock: {elapsed:.1f} s"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
