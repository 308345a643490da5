"""Synthetic planted-cluster populations and CSV ingestion.

Each task cluster gets its own set of class-conditional gaussian feature
centers (isotropic, unit within-cluster sd), rescaled so the minimum
pairwise distance between class centers equals the configured separation.
Drawing centers independently per cluster makes the decision boundaries
differ across clusters, so locally trained models cluster by task.

Per-agent label proportions come from a Dirichlet(delta) draw: small
delta gives heavy label skew, large delta approaches uniform labels.
"""

import csv
import json
import pathlib
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .models import DatasetShard


@dataclass(frozen=True)
class PopulationConfig:
    num_agents: int = 20
    num_task_clusters: int = 2
    num_features: int = 5
    num_classes: int = 3
    samples_min: int = 100
    samples_max: int = 300
    separation: float = 6.0
    label_skew: float = 0.3
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.num_agents < 1:
            raise ConfigurationError("num_agents must be >= 1")
        if self.num_task_clusters < 1:
            raise ConfigurationError("num_task_clusters must be >= 1")
        if self.num_agents < self.num_task_clusters:
            raise ConfigurationError("need at least one agent per task cluster")
        if self.separation <= 0:
            raise ConfigurationError("separation must be > 0")
        if self.label_skew <= 0:
            raise ConfigurationError("label_skew must be > 0")
        if not (0 < self.test_fraction < 1):
            raise ConfigurationError("test_fraction must lie in (0,1)")
        if not (1 <= self.samples_min <= self.samples_max):
            raise ConfigurationError("need 1 <= samples_min <= samples_max")


def _class_centers(rng, cfg):
    """Per-cluster class centers with min pairwise distance == separation."""
    centers = np.empty((cfg.num_task_clusters, cfg.num_classes, cfg.num_features))
    for t in range(cfg.num_task_clusters):
        raw = rng.normal(size=(cfg.num_classes, cfg.num_features))
        dmin = min(
            np.linalg.norm(raw[i] - raw[j])
            for i in range(cfg.num_classes)
            for j in range(i + 1, cfg.num_classes)
        )
        centers[t] = raw * (cfg.separation / dmin)
    return centers


def generate_population(cfg):
    """Return ([(train_shard, test_shard)] per agent, agent -> planted cluster id)."""
    rng = np.random.default_rng(cfg.seed)
    centers = _class_centers(rng, cfg)
    # round-robin assignment keeps every cluster populated
    planted = {a: a % cfg.num_task_clusters for a in range(cfg.num_agents)}
    shards = []
    for a in range(cfg.num_agents):
        n = int(rng.integers(cfg.samples_min, cfg.samples_max + 1))
        props = rng.dirichlet(np.full(cfg.num_classes, cfg.label_skew))
        labels = rng.choice(cfg.num_classes, size=n, p=props)
        feats = centers[planted[a]][labels] + rng.normal(size=(n, cfg.num_features))
        n_test = max(1, int(round(n * cfg.test_fraction)))
        n_test = min(n_test, n - 1) if n > 1 else n_test
        train = DatasetShard(feats[n_test:], labels[n_test:], owner=a)
        test = DatasetShard(feats[:n_test], labels[:n_test], owner=a)
        shards.append((train, test))
    return shards, planted


def write_shard_csv(path, shard):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [f"f{i}" for i in range(shard.features.shape[1])] + ["label"]
        w.writerow(cols)
        for x, y in zip(shard.features, shard.labels):
            w.writerow([f"{v:.17g}" for v in x] + [int(y)])


def load_csv(path, feature_columns=None, label_column="label"):
    """Load a shard from a headed CSV, preserving row order."""
    path = pathlib.Path(path)
    if not path.exists():
        raise DataFormatError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: no examples") from None
        if label_column not in header:
            raise DataFormatError(f"{path}: missing label column {label_column!r}")
        if feature_columns is None:
            feature_columns = [c for c in header if c != label_column]
        try:
            fidx = [header.index(c) for c in feature_columns]
        except ValueError as e:
            raise DataFormatError(f"{path}: {e}") from None
        lidx = header.index(label_column)
        feats, labels = [], []
        for rownum, row in enumerate(reader, start=2):
            try:
                feats.append([float(row[i]) for i in fidx])
                lab = float(row[lidx])
                if lab != int(lab):
                    raise ValueError(f"non-integer label {row[lidx]!r}")
                labels.append(int(lab))
            except (ValueError, IndexError) as e:
                raise DataFormatError(f"{path}: row {rownum}: {e}") from None
    if not feats:
        raise DataFormatError(f"{path}: no examples")
    return DatasetShard(np.array(feats), np.array(labels))


def save_population(out_dir, cfg, shards, planted):
    """Persist one train/test CSV pair per agent plus a JSON manifest."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agents = []
    for a, (train, test) in enumerate(shards):
        tr, te = f"agent_{a:04d}_train.csv", f"agent_{a:04d}_test.csv"
        write_shard_csv(out / tr, train)
        write_shard_csv(out / te, test)
        agents.append({"agent": a, "train": tr, "test": te, "cluster": planted[a]})
    manifest = {"config": asdict(cfg), "seed": cfg.seed, "agents": agents}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out / "manifest.json"


def load_population(data_dir):
    """Inverse of save_population: ([(train, test)], planted assignment)."""
    data = pathlib.Path(data_dir)
    try:
        with open(data / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"no manifest.json under {data}") from None
    shards, planted = [], {}
    for entry in manifest["agents"]:
        a = entry["agent"]
        train = load_csv(data / entry["train"])
        test = load_csv(data / entry["test"])
        train.owner = test.owner = a
        shards.append((train, test))
        planted[a] = entry.get("cluster", 0)
    return shards, planted
