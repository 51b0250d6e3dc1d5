"""Synthetic Gaussian data, shard-based non-IID partition and reference sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, InvalidInputError
from .model import Dataset


@dataclass(frozen=True)
class DataConfig:
    num_clients: int = 10
    num_classes: int = 10
    num_features: int = 20
    samples_per_class: int = 300
    shards_per_client: int = 2
    removed_classes_per_shard: int = 1
    reference_fraction: float = 0.2
    reference_size_per_client: int = 50
    train_test_ratio: float = 0.7
    class_sep: float = 3.0
    seed: int = 0

    @property
    def pool_size(self) -> int:
        return self.num_classes * self.samples_per_class

    @property
    def repository_size(self) -> int:
        return int(round(self.reference_fraction * self.pool_size))

    def validate(self) -> None:
        for name in ("num_clients", "num_classes", "num_features", "samples_per_class", "shards_per_client"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if not 0 <= self.removed_classes_per_shard < self.num_classes:
            raise ConfigError("removed_classes_per_shard must lie in [0, num_classes)")
        if not 0.0 < self.reference_fraction < 1.0:
            raise ConfigError("reference_fraction must lie in (0, 1)")
        if not 0.0 < self.train_test_ratio < 1.0:
            raise ConfigError("train_test_ratio must lie in (0, 1)")
        if self.reference_size_per_client < 1:
            raise ConfigError("reference_size_per_client must be >= 1")
        if self.reference_size_per_client * self.num_clients > self.repository_size:
            raise ConfigError(
                f"repository holds {self.repository_size} samples but "
                f"{self.num_clients} x {self.reference_size_per_client} are requested"
            )
        if self.class_sep <= 0:
            raise ConfigError("class_sep must be positive")
        n_shards = self.num_clients * self.shards_per_client
        if self.pool_size - self.repository_size < n_shards:
            raise ConfigError(f"{self.pool_size - self.repository_size} local samples cannot fill {n_shards} shards")


@dataclass(frozen=True)
class ClientData:
    local_train: Dataset
    local_test: Dataset
    reference: Dataset
    # Pool row indices of each split; None for imported partitions.
    train_idx: Optional[np.ndarray] = field(default=None, compare=False)
    test_idx: Optional[np.ndarray] = field(default=None, compare=False)
    ref_idx: Optional[np.ndarray] = field(default=None, compare=False)


def class_means(config: DataConfig, rng: np.random.Generator) -> np.ndarray:
    """Class centres at pairwise distance ``class_sep`` (a randomly rotated simplex).

    Falls back to Gaussian centres with the same expected pairwise distance when
    there are more classes than feature dimensions.
    """
    c, f = config.num_classes, config.num_features
    if c <= f:
        q, _ = np.linalg.qr(rng.standard_normal((f, c)))
        return (config.class_sep / np.sqrt(2.0)) * q.T
    return rng.standard_normal((c, f)) * (config.class_sep / np.sqrt(2.0 * f))


def generate_synthetic(config: DataConfig) -> Dataset:
    """Unit-variance Gaussian clusters, ``samples_per_class`` rows per class, class-sorted."""
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    means = class_means(config, rng)
    labels = np.repeat(np.arange(config.num_classes), config.samples_per_class)
    features = means[labels] + rng.standard_normal((labels.size, config.num_features))
    return Dataset(features, labels)


def partition_non_iid(pool: Dataset, config: DataConfig) -> list[ClientData]:
    """Split ``pool`` into per-client local train/test sets and disjoint reference sets.

    The repository of reference samples is withheld first; the rest is cut into
    ``num_clients * shards_per_client`` shards, each shard drops every sample of
    ``removed_classes_per_shard`` random classes, and each client gets
    ``shards_per_client`` shards before its own train/test split.
    """
    config.validate()
    pool.check_classes(config.num_classes)
    if len(pool) != config.pool_size:
        raise ConfigError(f"pool has {len(pool)} rows, config describes {config.pool_size}")
    rng = np.random.default_rng([config.seed, 1])

    order = rng.permutation(len(pool))
    n_repo = config.repository_size
    repository, local = order[:n_repo], order[n_repo:]

    n_shards = config.num_clients * config.shards_per_client
    shards = []
    for s, shard in enumerate(np.array_split(local, n_shards)):
        if config.removed_classes_per_shard:
            removed = rng.choice(config.num_classes, size=config.removed_classes_per_shard, replace=False)
            shard = shard[~np.isin(pool.labels[shard], removed)]
        if shard.size == 0:
            raise ConfigError(f"shard {s} is empty after class removal")
        shards.append(shard)
    shard_order = rng.permutation(n_shards)

    ref_order = rng.permutation(repository)
    k = config.reference_size_per_client
    clients = []
    for c in range(config.num_clients):
        mine = shard_order[c * config.shards_per_client:(c + 1) * config.shards_per_client]
        idx = rng.permutation(np.concatenate([shards[s] for s in mine]))
        n_train = int(round(config.train_test_ratio * idx.size))
        if n_train == 0 or n_train == idx.size:
            raise ConfigError(f"client {c} has {idx.size} samples, too few for a train/test split")
        train_idx, test_idx = np.sort(idx[:n_train]), np.sort(idx[n_train:])
        ref_idx = np.sort(ref_order[c * k:(c + 1) * k])
        clients.append(ClientData(pool.subset(train_idx), pool.subset(test_idx), pool.subset(ref_idx),
                                  train_idx, test_idx, ref_idx))
    return clients


def build_clients(config: DataConfig) -> list[ClientData]:
    return partition_non_iid(generate_synthetic(config), config)


# line format: client,split,label,f0,f1,...
_SPLITS = ("train", "test", "ref")


def export_partition(clients: Iterable[ClientData], path: str | Path) -> None:
    lines = []
    for cid, cd in enumerate(clients):
        for tag, ds in zip(_SPLITS, (cd.local_train, cd.local_test, cd.reference)):
            for x, y in zip(ds.features, ds.labels):
                lines.append(",".join([str(cid), tag, str(int(y))] + [repr(float(v)) for v in x]))
    Path(path).write_text("\n".join(lines) + "\n")


def import_partition(path: str | Path) -> list[ClientData]:
    rows: dict[int, dict[str, list]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 4 or parts[1] not in _SPLITS:
            raise InvalidInputError(f"line {lineno}: malformed partition record")
        per = rows.setdefault(int(parts[0]), {t: [] for t in _SPLITS})
        per[parts[1]].append((int(parts[2]), [float(v) for v in parts[3:]]))
    if sorted(rows) != list(range(len(rows))):
        raise InvalidInputError("client ids must be contiguous from 0")

    def to_ds(items):
        if not items:
            raise InvalidInputError("a client split is empty")
        return Dataset(np.array([f for _, f in items]), np.array([y for y, _ in items], dtype=np.int64))

    return [ClientData(*(to_ds(rows[c][t]) for t in _SPLITS)) for c in range(len(rows))]
