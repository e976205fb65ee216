"""Experiment orchestration: config parsing, seed management, learning-rate
grid search, repeated runs with mean/std reporting, sweeps, and artifacts."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .baselines import (TrainingParams, run_centralized, run_fedavg,
                        run_hypcluster, run_local_only)
from .clustering import ClusterSchedule
from .data import (ClientShard, PartitionSpec, dirichlet_partition,
                   extract_unlabeled, generate_synthetic, split_shard)
from .engine import (TAG_PROBE, TAG_SPLIT, FedMeConfig, RoundRecord,
                     derive_seed, fine_tune, run_fedme)
from .nn import ArchitectureSpec

ALGORITHMS = ("fedme", "local_only", "centralized", "fedavg", "hypcluster")
INIT_POLICIES = ("best_local", "fixed_index", "round_robin")

ROUND_LOG_HEADER = ("round,client,K,cluster,donor,a,loss_p_train,loss_ex_train,"
                    "loss_p_val,loss_ex_val,val_acc,test_acc,client_ms,server_ms")


class ConfigError(ValueError):
    """Raised for unparseable, unknown, or out-of-range configuration."""


@dataclass
class ExperimentConfig:
    algorithm: str
    num_clients: int = 20
    rounds: int = 50
    epochs: int = 2
    batch_size: int = 20
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    # synthetic data
    num_classes: int = 4
    dim: int = 16
    per_class_count: int = 375
    class_separation: float = 3.0
    noise_sigma: float = 1.5
    # partition
    alpha_label: float | None = 0.5  # None means IID
    alpha_size: float = 10.0
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    unlabeled_count: int = 100
    # model menu and initialization
    model_menu: tuple[tuple[int, ...], ...] = ((8,), (8, 8), (8, 8, 8),
                                               (8, 8, 8, 8))
    activation: str = "relu"
    init_policy: str = "best_local"
    model_index: int = 0
    probe_epochs: int = 10
    # clustering schedule
    cluster_thresholds: tuple[int, ...] = (25, 38, 46)
    k_max: int = 4
    kmeans_restarts: int = 8
    # technique switches
    tuning: bool = True
    dml: bool = True
    clustering: bool = True
    # baselines
    fedavg_weighting: str = "size"
    hypcluster_q: int = 2
    hypcluster_criterion: str = "loss"
    # protocol
    fine_tune_epochs: int = 5
    repeats: int = 5
    seed: int = 0
    sample_std: bool = False


_DEFAULTS = ExperimentConfig(algorithm="fedme")


def _parse_bool(key, raw):
    if raw.lower() in ("true", "on", "yes", "1"):
        return True
    if raw.lower() in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"key '{key}': expected a boolean, got {raw!r}")


def _parse_value(key: str, raw: str):
    default = getattr(_DEFAULTS, key)
    try:
        if key == "alpha_label":
            return None if raw.lower() == "iid" else float(raw)
        if key == "model_menu":
            return tuple(tuple(int(w) for w in cand.split(","))
                         for cand in raw.split("|"))
        if key == "cluster_thresholds":
            return tuple(int(v) for v in raw.split(",")) if raw.strip() else ()
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"key '{key}': cannot parse {raw!r}") from exc


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    c = config
    if c.algorithm not in ALGORITHMS:
        raise ConfigError(f"key 'algorithm': must be one of {ALGORITHMS}, "
                          f"got {c.algorithm!r}")
    if c.init_policy not in INIT_POLICIES:
        raise ConfigError(f"key 'init_policy': must be one of {INIT_POLICIES}")
    positive = ("num_clients", "rounds", "batch_size", "lr", "num_classes",
                "dim", "per_class_count", "noise_sigma", "alpha_size",
                "train_frac", "val_frac", "test_frac", "unlabeled_count",
                "k_max", "kmeans_restarts", "repeats")
    for key in positive:
        if getattr(c, key) <= 0:
            raise ConfigError(f"key '{key}': must be positive, got {getattr(c, key)}")
    nonnegative = ("epochs", "momentum", "weight_decay", "class_separation",
                   "probe_epochs", "fine_tune_epochs", "model_index")
    for key in nonnegative:
        if getattr(c, key) < 0:
            raise ConfigError(f"key '{key}': must be >= 0, got {getattr(c, key)}")
    if c.alpha_label is not None and c.alpha_label <= 0:
        raise ConfigError(f"key 'alpha_label': must be positive or 'iid'")
    if not c.model_menu:
        raise ConfigError("key 'model_menu': must list at least one candidate")
    if c.model_index >= len(c.model_menu):
        raise ConfigError(f"key 'model_index': {c.model_index} is outside the menu")
    if c.hypcluster_q < 2:
        raise ConfigError("key 'hypcluster_q': must be >= 2")
    return c


def parse_config(path) -> ExperimentConfig:
    """Flat `key = value` file with '#' comments; unknown keys rejected."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not hasattr(_DEFAULTS, key):
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = _parse_value(key, raw)
    if "algorithm" not in values:
        raise ConfigError(f"{path}: required key 'algorithm' is missing")
    return validate_config(ExperimentConfig(**values))


def menu_archs(config: ExperimentConfig) -> list[ArchitectureSpec]:
    return [ArchitectureSpec(config.dim, widths, config.num_classes,
                             config.activation)
            for widths in config.model_menu]


def best_local_init(shards: list[ClientShard], menu: list[ArchitectureSpec],
                    probe_epochs: int, params: TrainingParams,
                    seed: int) -> list[ArchitectureSpec]:
    """Each client briefly trains every candidate on its own train split and
    keeps the one with the best validation accuracy (ties prefer fewer
    parameters, then the lower menu index)."""
    choices = []
    for shard in shards:
        scored = []
        for idx, arch in enumerate(menu):
            model = nn.init_model(arch, derive_seed(seed, TAG_PROBE, shard.client_id, idx))
            rng = np.random.default_rng(
                derive_seed(seed, TAG_PROBE, shard.client_id, idx, 1))
            for _ in range(probe_epochs):
                perm = rng.permutation(shard.train.n)
                for start in range(0, shard.train.n, params.batch_size):
                    batch = perm[start:start + params.batch_size]
                    _, grad = nn.ce_loss_and_grad(model, shard.train.features[batch],
                                                  shard.train.labels[batch])
                    model = nn.sgd_step(model, grad, params.lr, params.momentum,
                                        params.weight_decay)
            _, acc = nn.evaluate(model, shard.validation.features,
                                 shard.validation.labels)
            scored.append((-acc, arch.parameter_count(), idx))
        scored.sort()
        choices.append(menu[scored[0][2]])
    return choices


def _client_archs(config: ExperimentConfig, shards, params, seed):
    menu = menu_archs(config)
    shared = config.algorithm in ("centralized", "fedavg", "hypcluster")
    if config.init_policy == "fixed_index":
        return [menu[config.model_index]] * len(shards)
    if config.init_policy == "round_robin":
        if shared:
            return [menu[config.model_index]] * len(shards)
        return [menu[i % len(menu)] for i in range(len(shards))]
    choices = best_local_init(shards, menu, config.probe_epochs, params, seed)
    if shared:
        # these algorithms average across clients, so settle on the
        # architecture most clients picked (ties toward the lower menu index)
        votes = [choices.count(arch) for arch in menu]
        return [menu[int(np.argmax(votes))]] * len(shards)
    return choices


@dataclass
class RunResult:
    """Outcome of one seeded run of one algorithm."""
    models: list          # final per-client models (before fine-tuning)
    tuned_models: list    # after fine-tuning (same as models when disabled)
    records: list[RoundRecord]
    archs: list[ArchitectureSpec]
    shards: list[ClientShard]
    test_acc_pre_ft: float
    test_acc_post_ft: float
    val_acc_uniform: float
    val_acc_weighted: float
    per_client_test_pre: list[float]
    per_client_test_post: list[float]


def build_federation(config: ExperimentConfig, seed: int):
    """Synthetic dataset -> unlabeled pool -> Dirichlet shards."""
    dataset = generate_synthetic(config.num_classes, config.dim,
                                 config.per_class_count,
                                 config.class_separation, config.noise_sigma,
                                 seed)
    pool, remainder = extract_unlabeled(dataset, config.unlabeled_count, seed)
    spec = PartitionSpec(config.num_clients,
                         alpha_label=config.alpha_label or 1.0,
                         alpha_size=config.alpha_size,
                         iid=config.alpha_label is None, seed=seed)
    parts = dirichlet_partition(remainder, spec)
    ratios = (config.train_frac, config.val_frac, config.test_frac)
    shards = [split_shard(remainder, idx, i, ratios,
                          derive_seed(seed, TAG_SPLIT, i))
              for i, idx in enumerate(parts)]
    return shards, pool


def run_single(config: ExperimentConfig, seed: int) -> RunResult:
    shards, pool = build_federation(config, seed)
    params = TrainingParams(config.rounds, config.epochs, config.lr,
                            config.momentum, config.weight_decay,
                            config.batch_size, seed)
    archs = _client_archs(config, shards, params, seed)

    if config.algorithm == "fedme":
        fedme_config = FedMeConfig(
            rounds=config.rounds, epochs=config.epochs, lr=config.lr,
            momentum=config.momentum, weight_decay=config.weight_decay,
            batch_size=config.batch_size,
            schedule=ClusterSchedule(config.cluster_thresholds, config.k_max),
            kmeans_restarts=config.kmeans_restarts, tuning=config.tuning,
            dml=config.dml, clustering=config.clustering, seed=seed)
        states, records = run_fedme(shards, archs, pool, fedme_config)
        models = [s.personalized for s in states]
    elif config.algorithm == "local_only":
        models, records = run_local_only(shards, archs, params)
    elif config.algorithm == "centralized":
        _require_shared_arch(config, archs)
        model, records = run_centralized(shards, archs[0], params)
        models = [model.copy() for _ in shards]
    elif config.algorithm == "fedavg":
        _require_shared_arch(config, archs)
        model, records = run_fedavg(shards, archs[0], params,
                                    config.fedavg_weighting)
        models = [model.copy() for _ in shards]
    else:  # hypcluster
        _require_shared_arch(config, archs)
        globals_, choices, records = run_hypcluster(
            shards, archs[0], params, config.hypcluster_q,
            config.hypcluster_criterion)
        models = [globals_[c].copy() for c in choices]

    if config.fine_tune_epochs > 0:
        tuned = [fine_tune(m, s, config.fine_tune_epochs, config.lr,
                           config.momentum, config.weight_decay,
                           config.batch_size, seed)
                 for m, s in zip(models, shards)]
    else:
        tuned = models

    pre = [nn.evaluate(m, s.test.features, s.test.labels)[1]
           for m, s in zip(models, shards)]
    post = [nn.evaluate(m, s.test.features, s.test.labels)[1]
            for m, s in zip(tuned, shards)]
    val = [nn.evaluate(m, s.validation.features, s.validation.labels)[1]
           for m, s in zip(models, shards)]
    weights = np.array([float(s.n) for s in shards])
    return RunResult(
        models=models, tuned_models=tuned, records=records, archs=archs,
        shards=shards,
        test_acc_pre_ft=float(np.mean(pre)),
        test_acc_post_ft=float(np.mean(post)),
        val_acc_uniform=float(np.mean(val)),
        val_acc_weighted=float(np.average(val, weights=weights)),
        per_client_test_pre=pre, per_client_test_post=post)


def _require_shared_arch(config: ExperimentConfig, archs):
    if any(a != archs[0] for a in archs):
        raise ConfigError(
            f"algorithm '{config.algorithm}' needs one shared architecture; "
            f"use init_policy = fixed_index")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_round_log(records: list[RoundRecord], path) -> None:
    """RoundLog CSV. Timing columns are written as 0 so identical runs produce
    byte-identical files; measured timings go to the sidecar timings file."""
    lines = [ROUND_LOG_HEADER]
    for r in records:
        lines.append(",".join([
            str(r.round), str(r.client), str(r.k), _fmt(r.cluster),
            _fmt(r.donor), _fmt(r.a), _fmt(r.loss_p_train),
            _fmt(r.loss_ex_train), _fmt(r.loss_p_val), _fmt(r.loss_ex_val),
            _fmt(r.val_acc), _fmt(r.test_acc), "0", "0"]))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_timings(records: list[RoundRecord], path) -> None:
    lines = ["round,client,client_ms,server_ms"]
    for r in records:
        lines.append(f"{r.round},{r.client},{r.client_ms:.3f},{r.server_ms:.3f}")
    _atomic_write(path, "\n".join(lines) + "\n")


@dataclass
class SummaryReport:
    algorithm: str
    per_repeat: list[float]          # headline final test accuracy per repeat
    per_repeat_pre_ft: list[float]
    mean: float
    std: float
    mean_pre_ft: float
    std_pre_ft: float
    val_acc_uniform: float
    val_acc_weighted: float
    runtime_s: float

    def __str__(self):
        return (f"{self.algorithm}: test accuracy {self.mean:.4f} ± "
                f"{self.std:.4f} over {len(self.per_repeat)} repeats "
                f"(pre-fine-tuning {self.mean_pre_ft:.4f} ± "
                f"{self.std_pre_ft:.4f}, {self.runtime_s:.1f}s)")


def _std(values, sample: bool) -> float:
    return float(np.std(values, ddof=1 if sample and len(values) > 1 else 0))


def run_experiment(config: ExperimentConfig, out_dir=None) -> SummaryReport:
    """`repeats` independent runs seeded (master seed + repeat index), with
    CSV logs, checkpoints, and a summary written under out_dir when given."""
    start = time.perf_counter()
    results = []
    for r in range(config.repeats):
        result = run_single(config, config.seed + r)
        results.append(result)
        if out_dir is not None:
            run_dir = os.path.join(out_dir, f"run_{r}")
            os.makedirs(run_dir, exist_ok=True)
            write_round_log(result.records, os.path.join(run_dir, "rounds.csv"))
            write_timings(result.records, os.path.join(run_dir, "timings.csv"))
            for i, model in enumerate(result.tuned_models):
                with open(os.path.join(run_dir, f"client_{i}.model"), "wb") as fh:
                    fh.write(nn.serialize_model(model))

    finals = [res.test_acc_post_ft for res in results]
    pre = [res.test_acc_pre_ft for res in results]
    report = SummaryReport(
        algorithm=config.algorithm,
        per_repeat=finals, per_repeat_pre_ft=pre,
        mean=float(np.mean(finals)), std=_std(finals, config.sample_std),
        mean_pre_ft=float(np.mean(pre)), std_pre_ft=_std(pre, config.sample_std),
        val_acc_uniform=float(np.mean([res.val_acc_uniform for res in results])),
        val_acc_weighted=float(np.mean([res.val_acc_weighted for res in results])),
        runtime_s=time.perf_counter() - start)
    if out_dir is not None:
        lines = ["repeat,test_acc,test_acc_pre_ft"]
        for r, res in enumerate(results):
            lines.append(f"{r},{res.test_acc_post_ft:.12g},{res.test_acc_pre_ft:.12g}")
        lines.append(f"mean,{report.mean:.12g},{report.mean_pre_ft:.12g}")
        lines.append(f"std,{report.std:.12g},{report.std_pre_ft:.12g}")
        lines.append(f"runtime_s,{report.runtime_s:.3f},")
        _atomic_write(os.path.join(out_dir, "summary.csv"), "\n".join(lines) + "\n")
    return report


def default_lr_grid() -> list[float]:
    """The eight-point grid 10^-3, 10^-2.5, ..., 10^0.5."""
    return [float(10.0 ** e) for e in np.arange(-3.0, 0.51, 0.5)]


def grid_search_lr(config: ExperimentConfig, grid=None):
    """One run per grid point; best by mean final validation accuracy, ties
    toward the smaller learning rate."""
    grid = sorted(grid if grid is not None else default_lr_grid())
    if not grid:
        raise ConfigError("learning-rate grid must be nonempty")
    table = []
    for lr in grid:
        result = run_single(replace(config, lr=lr), config.seed)
        table.append((lr, result.val_acc_uniform))
    best_lr = max(table, key=lambda row: (row[1], -row[0]))[0]
    return best_lr, table


SWEEP_AXES = ("alpha_label", "ablation", "architecture")

_ABLATION_FLAGS = {"mt": "tuning", "dml": "dml", "mc": "clustering"}


def _sweep_config(config: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    if axis == "alpha_label":
        alpha = None if value.lower() == "iid" else float(value)
        return replace(config, alpha_label=alpha)
    if axis == "ablation":
        flags = [] if value.lower() in ("none", "") else value.lower().split("+")
        unknown = [f for f in flags if f not in _ABLATION_FLAGS]
        if unknown:
            raise ConfigError(f"unknown ablation flags {unknown}; "
                              f"use combinations of mt, dml, mc")
        switches = {name: (flag in flags) for flag, name in _ABLATION_FLAGS.items()}
        return replace(config, **switches)
    if axis == "architecture":
        if value.lower() == "auto":
            return replace(config, init_policy="best_local")
        return replace(config, init_policy="fixed_index",
                       model_index=int(value) - 1)
    raise ConfigError(f"unknown sweep axis {value!r}; use one of {SWEEP_AXES}")


def sweep(config: ExperimentConfig, axis: str, values: list[str],
          algorithms: list[str] | None = None, out_dir=None):
    """run_experiment per axis value (and algorithm), returning a table of
    {(value, algorithm): SummaryReport}."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; use one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    algorithms = algorithms or [config.algorithm]
    table = {}
    for value in values:
        for alg in algorithms:
            cfg = replace(_sweep_config(config, axis, value), algorithm=alg)
            sub_dir = None
            if out_dir is not None:
                sub_dir = os.path.join(out_dir, f"{axis}_{value}_{alg}".replace("+", "_"))
                os.makedirs(sub_dir, exist_ok=True)
            table[(value, alg)] = run_experiment(validate_config(cfg), sub_dir)
    if out_dir is not None:
        lines = [f"{axis},algorithm,mean,std,mean_pre_ft,std_pre_ft"]
        for (value, alg), report in table.items():
            lines.append(f"{value},{alg},{report.mean:.12g},{report.std:.12g},"
                         f"{report.mean_pre_ft:.12g},{report.std_pre_ft:.12g}")
        _atomic_write(os.path.join(out_dir, "sweep.csv"), "\n".join(lines) + "\n")
    return table
