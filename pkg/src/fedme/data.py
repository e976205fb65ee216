"""Datasets, synthetic non-IID generation, Dirichlet partitioning, and splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray  # (N, d)
    labels: np.ndarray    # (N,) ints in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("feature and label row counts differ")
        if len(self.labels) < 1:
            raise ValueError("dataset must contain at least one row")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class ClientShard:
    client_id: int
    train: Dataset
    validation: Dataset
    test: Dataset

    @property
    def n(self) -> int:
        return self.train.n + self.validation.n + self.test.n


@dataclass
class UnlabeledPool:
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    alpha_label: float = 0.5
    alpha_size: float = 10.0
    iid: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 2:
            raise ValueError(f"need at least 2 clients, got {self.num_clients}")
        if not self.iid and (self.alpha_label <= 0 or self.alpha_size <= 0):
            raise ValueError("Dirichlet alphas must be strictly positive")


def generate_synthetic(num_classes: int, dim: int, per_class_count: int,
                       class_separation: float, noise_sigma: float,
                       seed: int) -> Dataset:
    """Gaussian class blobs with seeded random mean directions."""
    if num_classes < 2 or dim < 2:
        raise ValueError("need num_classes >= 2 and dim >= 2")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = class_separation * directions
    features = np.concatenate([
        means[c] + noise_sigma * rng.normal(size=(per_class_count, dim))
        for c in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), per_class_count)
    return Dataset(features, labels, num_classes)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas proportional to weights, summing exactly to total."""
    raw = weights / weights.sum() * total
    quotas = np.floor(raw).astype(np.int64)
    remainder = total - quotas.sum()
    # hand the leftover units to the largest fractional parts, ties by index
    order = np.lexsort((np.arange(len(raw)), -(raw - quotas)))
    quotas[order[:remainder]] += 1
    return quotas


def dirichlet_partition(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Row-index sets per client, controlled by size and label Dirichlet draws.

    Client sizes come from Dirichlet(alpha_size); per-class proportions from
    Dirichlet(alpha_label). Label assignments are then repaired against the
    size quotas so the result is an exact partition with every client holding
    at least num_classes rows.
    """
    n, m, k = dataset.n, dataset.num_classes, spec.num_clients
    if n < k * m:
        raise ValueError(f"infeasible partition: {n} rows < {k} clients x {m} classes")
    rng = np.random.default_rng(spec.seed)

    if spec.iid:
        perm = rng.permutation(n)
        quotas = _largest_remainder(np.ones(k), n)
        bounds = np.cumsum(quotas)[:-1]
        return [np.sort(part) for part in np.split(perm, bounds)]

    quotas = _largest_remainder(rng.dirichlet(np.full(k, spec.alpha_size)), n)
    # every client must end with at least m rows
    while quotas.min() < m:
        quotas[int(np.argmin(quotas))] += 1
        quotas[int(np.argmax(quotas))] -= 1

    # per class, spread rows across clients by a label-skew Dirichlet draw
    buckets = [[[] for _ in range(m)] for _ in range(k)]
    for c in range(m):
        idx_c = np.flatnonzero(dataset.labels == c)
        idx_c = idx_c[rng.permutation(len(idx_c))]
        counts = _largest_remainder(rng.dirichlet(np.full(k, spec.alpha_label)),
                                    len(idx_c))
        bounds = np.cumsum(counts)[:-1]
        for i, part in enumerate(np.split(idx_c, bounds)):
            buckets[i][c] = list(part)

    # repair: most-overfull client donates from its most-represented class
    sizes = np.array([sum(len(b) for b in bucket) for bucket in buckets])
    while True:
        excess = sizes - quotas
        donor = int(np.argmax(excess))
        if excess[donor] <= 0:
            break
        receiver = int(np.argmin(excess))
        cls = int(np.argmax([len(b) for b in buckets[donor]]))
        move = int(min(excess[donor], -excess[receiver], len(buckets[donor][cls])))
        for _ in range(move):
            buckets[receiver][cls].append(buckets[donor][cls].pop())
        sizes[donor] -= move
        sizes[receiver] += move

    return [np.sort(np.array([i for b in bucket for i in b], dtype=np.int64))
            for bucket in buckets]


def split_shard(dataset: Dataset, indices, client_id: int,
                ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
                seed: int = 0) -> ClientShard:
    """Seeded shuffle then contiguous train/validation/test cut."""
    idx = np.asarray(indices, dtype=np.int64)
    rng = np.random.default_rng(seed)
    idx = idx[rng.permutation(len(idx))]
    sizes = _largest_remainder(np.asarray(ratios, dtype=np.float64), len(idx))
    if sizes.min() < 1:
        raise ValueError(
            f"client {client_id}: split of {len(idx)} rows at ratios {ratios} "
            f"leaves an empty partition")
    bounds = np.cumsum(sizes)[:-1]
    tr, va, te = np.split(idx, bounds)
    return ClientShard(client_id, dataset.subset(tr), dataset.subset(va),
                       dataset.subset(te))


def extract_unlabeled(dataset: Dataset, count: int, seed: int):
    """Seeded sample without replacement; labels discarded. Returns (pool, rest)."""
    if count >= dataset.n:
        raise ValueError(f"cannot extract {count} unlabeled rows from {dataset.n}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(dataset.n, size=count, replace=False)
    mask = np.ones(dataset.n, dtype=bool)
    mask[chosen] = False
    pool = UnlabeledPool(dataset.features[chosen].copy())
    return pool, dataset.subset(np.flatnonzero(mask))


def label_skew(shards_labels: list[np.ndarray], num_classes: int) -> float:
    """Mean per-client total-variation distance from the global label histogram."""
    all_labels = np.concatenate(shards_labels)
    global_hist = np.bincount(all_labels, minlength=num_classes) / len(all_labels)
    tvs = []
    for labels in shards_labels:
        hist = np.bincount(labels, minlength=num_classes) / len(labels)
        tvs.append(0.5 * np.abs(hist - global_hist).sum())
    return float(np.mean(tvs))


def load_csv(path) -> Dataset:
    """Read the `# M=<int> d=<int>` header format; errors name the line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing '# M=<int> d=<int>' header line")
    try:
        fields = dict(part.split("=") for part in lines[0].lstrip("# ").split())
        m, d = int(fields["M"]), int(fields["d"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed header {lines[0]!r}") from exc
    features, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(cells)}")
        try:
            row = [float(c) for c in cells[:-1]]
            label = int(cells[-1])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: unparseable value") from exc
        if not 0 <= label < m:
            raise ValueError(f"{path}:{lineno}: label {label} outside [0, {m})")
        features.append(row)
        labels.append(label)
    if not features:
        raise ValueError(f"{path}: no data rows")
    return Dataset(np.array(features), np.array(labels), m)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# M={dataset.num_classes} d={dataset.dim}\n")
        for row, label in zip(dataset.features, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
