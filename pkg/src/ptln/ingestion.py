"""Loading rating/trust files, train/test splitting and synthetic data."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ptln.data import Dataset, load_dataset, save_dataset, validate

log = logging.getLogger(__name__)

SPLIT_SCHEMA = "ptln.split/1"


class IngestionError(ValueError):
    pass


def _id_key(raw: str):
    # numeric IDs sort numerically, the rest lexicographically after them
    try:
        return (0, int(raw), "")
    except ValueError:
        return (1, 0, raw)


def _dense(ids) -> dict[str, int]:
    return {raw: i for i, raw in enumerate(sorted(set(ids), key=_id_key))}


def _rows(path, min_fields: int, skip_header: bool):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if skip_header and lineno == 1:
                continue
            parts = [p.strip() for p in line.split("\t" if "\t" in line else ",")]
            if len(parts) < min_fields or not all(parts[:min_fields]):
                raise IngestionError(f"{path}:{lineno}: expected at least {min_fields} fields, got {line!r}")
            yield lineno, parts


@dataclass
class Interactions:
    """Positive user-item pairs; ``user_ids[i]`` is the raw ID of dense user ``i``."""

    user_ids: list[str]
    item_ids: list[str]
    pairs: list[tuple[int, int]]
    discarded: int = 0


@dataclass
class SocialEdges:
    user_ids: list[str]
    edges: list[tuple[int, int]]
    self_loops: int = 0


def load_interactions(path, rating_threshold: float = 4.0, skip_header: bool = False) -> Interactions:
    """Read ``user, item, rating`` rows and keep those rated at least ``rating_threshold``."""
    kept, discarded = [], 0
    for lineno, parts in _rows(path, 3, skip_header):
        try:
            rating = float(parts[2])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: rating {parts[2]!r} is not a number") from None
        if rating >= rating_threshold:
            kept.append((parts[0], parts[1]))
        else:
            discarded += 1
    if not kept:
        raise IngestionError(f"{path}: no interactions rated >= {rating_threshold}")
    users = _dense(u for u, _ in kept)
    items = _dense(v for _, v in kept)
    pairs = sorted({(users[u], items[v]) for u, v in kept})
    return Interactions(list(users), list(items), pairs, discarded)


def load_social(path, symmetrize: bool = False, skip_header: bool = False) -> SocialEdges:
    """Read ``user, trusted_user`` rows as directed trust edges."""
    raw, self_loops = [], 0
    for _, parts in _rows(path, 2, skip_header):
        a, b = parts[0], parts[1]
        if a == b:
            self_loops += 1
            continue
        raw.append((a, b))
        if symmetrize:
            raw.append((b, a))
    if self_loops:
        log.warning("dropped %d self-loop(s) from %s", self_loops, path)
    users = _dense([a for a, _ in raw] + [b for _, b in raw])
    edges = sorted({(users[a], users[b]) for a, b in raw})
    return SocialEdges(list(users), edges, self_loops)


def build_dataset(interactions: Interactions, social: SocialEdges | None = None) -> tuple[Dataset, dict]:
    """Merge interactions and trust edges into one dense index space.

    Users that only appear in the trust file are kept with no interactions.
    Returns the dataset and the ``{"users": [...], "items": [...]}`` raw-ID maps.
    """
    social = social or SocialEdges([], [])
    users = _dense(interactions.user_ids + social.user_ids)
    user_list = list(users)
    m, n = len(user_list), len(interactions.item_ids)
    positives = [set() for _ in range(m)]
    for u, v in interactions.pairs:
        positives[users[interactions.user_ids[u]]].add(v)
    trust = [set() for _ in range(m)]
    for a, b in social.edges:
        trust[users[social.user_ids[a]]].add(users[social.user_ids[b]])
    dataset = Dataset(m, n, [sorted(p) for p in positives], [sorted(t) for t in trust])
    return dataset, {"users": user_list, "items": list(interactions.item_ids)}


def symmetrized(dataset: Dataset) -> Dataset:
    trust = [set(row) for row in dataset.social_out]
    for u, row in enumerate(dataset.social_out):
        for t in row:
            trust[t].add(u)
    return Dataset(dataset.num_users, dataset.num_items, dataset.positives, [sorted(t) for t in trust])


@dataclass
class SplitSpec:
    holdout_fraction: float = 0.2
    seed: int = 0
    min_train: int = 1

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.min_train < 1:
            raise ValueError("min_train must be >= 1")


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, tuple[tuple[int, ...], ...]]:
    """Hold out a seeded random fraction of each user's positives.

    Each user is shuffled with its own generator seeded by ``(seed, user)``,
    so a user's split does not depend on anyone else's. Trust edges all stay
    in the train dataset.
    """
    train, test = [], []
    for u, row in enumerate(dataset.positives):
        n = len(row)
        n_test = math.ceil(spec.holdout_fraction * n - 1e-9)
        n_test = max(0, min(n_test, n - spec.min_train))
        order = np.random.default_rng([spec.seed, u]).permutation(n)
        held = {row[j] for j in order[:n_test]}
        train.append([v for v in row if v not in held])
        test.append(tuple(sorted(held)))
    return Dataset(dataset.num_users, dataset.num_items, train, dataset.social_out), tuple(test)


@dataclass
class SyntheticSpec:
    """Planted-cluster social recommendation data.

    Users fall into ``num_clusters`` groups and items into as many contiguous
    blocks; a user's positives come from the block of their group, drawn with
    weights proportional to ``(rank + 1) ** -popularity_exponent`` where rank
    is the item's position inside its block.

    With ``hop2_signal`` a ``cold_fraction`` of users becomes cold. Each cold
    user trusts a single private relay user (no interactions of its own) who
    trusts ``relay_out_degree`` users of one cluster. The cold user's taste is
    the cluster dominating its 2-hop friends, and its ``cold_items_per_user``
    positives are drawn from those friends' positives inside that cluster's
    block, weighted by how many of them liked each item.
    """

    num_users: int = 40
    num_items: int = 80
    num_clusters: int = 2
    intra_cluster_edge_prob: float = 0.2
    inter_cluster_edge_prob: float = 0.01
    items_per_user: int = 10
    hop2_signal: bool = False
    seed: int = 0
    popularity_exponent: float = 0.0
    cold_fraction: float = 0.25
    cold_items_per_user: int = 3
    relay_out_degree: int = 3

    def problems(self) -> list[str]:
        out = []
        for name in ("intra_cluster_edge_prob", "inter_cluster_edge_prob", "cold_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                out.append(f"{name} must lie in [0, 1]")
        if self.num_users < 1 or self.num_items < 1:
            out.append("num_users and num_items must be >= 1")
        if not 1 <= self.num_clusters <= min(self.num_users, self.num_items):
            out.append("num_clusters must lie in [1, min(num_users, num_items)]")
        if self.items_per_user < 0 or self.cold_items_per_user < 0:
            out.append("items per user must be >= 0")
        if self.popularity_exponent < 0:
            out.append("popularity_exponent must be >= 0")
        if self.hop2_signal:
            if self.relay_out_degree < 1:
                out.append("relay_out_degree must be >= 1")
            if self.num_users - 2 * round(self.cold_fraction * self.num_users) < self.num_clusters:
                out.append("cold_fraction leaves too few ordinary users for every cluster")
        return out

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid synthetic spec: " + "; ".join(problems))


@dataclass
class SyntheticTruth:
    """Ground truth behind a synthetic dataset."""

    user_cluster: list[int]
    taste_cluster: list[int]
    item_block: list[int]
    cold_users: list[int] = field(default_factory=list)
    relay_users: list[int] = field(default_factory=list)


def _block_items(num_items: int, num_clusters: int) -> list[np.ndarray]:
    block = np.arange(num_items) * num_clusters // num_items
    return [np.flatnonzero(block == c) for c in range(num_clusters)]


def _draw_items(rng, items: np.ndarray, count: int, exponent: float) -> list[int]:
    count = min(count, len(items))
    weights = (np.arange(len(items)) + 1.0) ** -exponent
    picked = rng.choice(items, size=count, replace=False, p=weights / weights.sum())
    return sorted(int(v) for v in picked)


def generate_synthetic_with_truth(spec: SyntheticSpec) -> tuple[Dataset, SyntheticTruth]:
    rng = np.random.default_rng(spec.seed)
    m, c = spec.num_users, spec.num_clusters
    blocks = _block_items(spec.num_items, c)

    cold, relays = [], []
    if spec.hop2_signal:
        n_cold = int(round(spec.cold_fraction * m))
        order = [int(u) for u in rng.permutation(m)]
        cold, relays = order[:n_cold], order[n_cold : 2 * n_cold]
    special = set(cold) | set(relays)
    ordinary = np.array([u for u in range(m) if u not in special], dtype=np.int64)
    cluster = np.zeros(m, dtype=np.int64)
    cluster[ordinary] = rng.permutation(np.arange(len(ordinary)) % c)

    trust = [set() for _ in range(m)]
    for u in ordinary:
        same = cluster[ordinary] == cluster[u]
        prob = np.where(same, spec.intra_cluster_edge_prob, spec.inter_cluster_edge_prob)
        draws = rng.random(len(ordinary)) < prob
        trust[u] = {int(t) for t in ordinary[draws] if t != u}

    taste = [int(k) for k in cluster]
    positives = [[] for _ in range(m)]
    for u in ordinary:
        positives[u] = _draw_items(rng, blocks[taste[u]], spec.items_per_user, spec.popularity_exponent)

    for u, relay in zip(cold, relays):
        target = int(rng.integers(c))
        pool = ordinary[cluster[ordinary] == target]
        trust[u] = {relay}
        trust[relay] = {int(t) for t in rng.choice(pool, size=min(spec.relay_out_degree, len(pool)), replace=False)}
        cluster[u] = cluster[relay] = target
        second = sorted(trust[relay] - {u})
        votes = Counter(int(cluster[t]) for t in second)
        taste[u] = taste[relay] = max(sorted(votes), key=lambda k: votes[k])
        liked = Counter(v for t in second if cluster[t] == taste[u] for v in positives[t])
        if not liked:
            positives[u] = _draw_items(rng, blocks[taste[u]], spec.cold_items_per_user, 0.0)
            continue
        items = np.array(sorted(liked), dtype=np.int64)
        weights = np.array([liked[v] for v in items], dtype=np.float64)
        size = min(spec.cold_items_per_user, len(items))
        positives[u] = sorted(int(v) for v in rng.choice(items, size=size, replace=False, p=weights / weights.sum()))

    dataset = Dataset(m, spec.num_items, positives, [sorted(t) for t in trust])
    item_block = [0] * spec.num_items
    for k, items in enumerate(blocks):
        for v in items:
            item_block[int(v)] = k
    truth = SyntheticTruth([int(k) for k in cluster], taste, item_block, sorted(cold), sorted(relays))
    return dataset, truth


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    return generate_synthetic_with_truth(spec)[0]


# Processed-dataset directory layout:
#   dataset.json   full Dataset (ptln.dataset/1)
#   train.json     train Dataset (test positives removed)
#   test.json      {"schema": "ptln.split/1", "test": [[items...] per user], "split": SplitSpec}
#   id_maps.json   {"users": [raw ids by dense index], "items": [...]}
#   manifest.json  provenance and fingerprint
def write_processed(out_dir, dataset: Dataset, train: Dataset, test, spec: SplitSpec, id_maps: dict | None = None) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problems = validate(dataset)
    if problems:
        raise IngestionError("invalid dataset: " + "; ".join(problems[:5]))
    if id_maps is None:
        id_maps = {"users": [str(u) for u in range(dataset.num_users)], "items": [str(v) for v in range(dataset.num_items)]}
    save_dataset(out / "dataset.json", dataset)
    save_dataset(out / "train.json", train)
    split_payload = {"schema": SPLIT_SCHEMA, "split": asdict(spec), "test": [list(t) for t in test]}
    (out / "test.json").write_text(json.dumps(split_payload, separators=(",", ":")) + "\n")
    (out / "id_maps.json").write_text(json.dumps(id_maps, separators=(",", ":")) + "\n")
    return fingerprint(out)


def fingerprint(data_dir) -> str:
    digest = hashlib.sha256()
    for name in ("dataset.json", "train.json", "test.json", "id_maps.json"):
        digest.update(name.encode())
        digest.update((Path(data_dir) / name).read_bytes())
    return digest.hexdigest()


@dataclass
class Processed:
    dataset: Dataset
    train: Dataset
    test: tuple
    id_maps: dict
    split: SplitSpec


def read_processed(data_dir) -> Processed:
    data_dir = Path(data_dir)
    payload = json.loads((data_dir / "test.json").read_text())
    if payload.get("schema") != SPLIT_SCHEMA:
        raise IngestionError(f"unsupported split schema {payload.get('schema')!r}")
    return Processed(
        dataset=load_dataset(data_dir / "dataset.json"),
        train=load_dataset(data_dir / "train.json"),
        test=tuple(tuple(t) for t in payload["test"]),
        id_maps=json.loads((data_dir / "id_maps.json").read_text()),
        split=SplitSpec(**payload["split"]),
    )
