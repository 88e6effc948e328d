"""Core domain types: datasets, model parameters, configuration, snapshots."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from functools import cached_property
from pathlib import Path

import numpy as np

# Row order of the per-aspect tensors (attention vectors, order biases).
ASPECTS = ("C", "S", "I")

PARAMS_SCHEMA = "ptln.params/1"
DATASET_SCHEMA = "ptln.dataset/1"


@dataclass(frozen=True)
class Dataset:
    """Users, items, positive interactions and directed trust edges.

    ``positives[u]`` holds the items user ``u`` liked; ``social_out[u]`` the
    users that ``u`` trusts. Both are expected sorted and deduplicated, which
    :func:`validate` checks rather than the constructor.
    """

    num_users: int
    num_items: int
    positives: tuple = ()
    social_out: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "positives", tuple(tuple(int(v) for v in row) for row in self.positives))
        object.__setattr__(self, "social_out", tuple(tuple(int(t) for t in row) for row in self.social_out))

    @cached_property
    def item_csr(self) -> tuple[np.ndarray, np.ndarray]:
        return _to_csr(self.positives, self.num_users)

    @cached_property
    def social_csr(self) -> tuple[np.ndarray, np.ndarray]:
        return _to_csr(self.social_out, self.num_users)

    @property
    def num_positives(self) -> int:
        return sum(len(row) for row in self.positives)

    @property
    def num_edges(self) -> int:
        return sum(len(row) for row in self.social_out)

    def to_dict(self) -> dict:
        return {
            "schema": DATASET_SCHEMA,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "positives": [list(row) for row in self.positives],
            "social_out": [list(row) for row in self.social_out],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Dataset":
        if payload.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"unsupported dataset schema {payload.get('schema')!r}")
        return cls(payload["num_users"], payload["num_items"], payload["positives"], payload["social_out"])


def _to_csr(rows, n_rows):
    rows = list(rows) + [()] * (n_rows - len(rows))
    counts = np.fromiter((len(r) for r in rows), dtype=np.int64, count=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.fromiter((x for r in rows for x in r), dtype=np.int64, count=int(indptr[-1]))
    return indptr, indices


def csr_rows(indptr: np.ndarray, indices: np.ndarray, rows: np.ndarray):
    """Gather CSR rows; returns ``(counts, row_of_entry, entries)`` with entries grouped by row."""
    starts, counts = indptr[rows], indptr[rows + 1] - indptr[rows]
    owner = np.repeat(np.arange(len(rows)), counts)
    offsets = np.arange(len(owner)) - np.repeat(np.cumsum(counts) - counts, counts)
    return counts, owner, indices[np.repeat(starts, counts) + offsets]


def validate(dataset: Dataset) -> list[str]:
    """Return every invariant violation found in ``dataset``; empty means valid."""
    problems = []
    m, n = dataset.num_users, dataset.num_items
    if m < 0 or n < 0:
        problems.append(f"negative size: num_users={m}, num_items={n}")
    for name, rows, bound in (("positives", dataset.positives, n), ("social_out", dataset.social_out, m)):
        if len(rows) != m:
            problems.append(f"{name}: expected {m} rows, found {len(rows)}")
        for u, row in enumerate(rows):
            for x in row:
                if not 0 <= x < bound:
                    problems.append(f"{name}[{u}]: index {x} out of range [0, {bound})")
            if len(set(row)) != len(row):
                problems.append(f"{name}[{u}]: duplicate entries")
            if list(row) != sorted(row):
                problems.append(f"{name}[{u}]: not sorted ascending")
            if name == "social_out" and u in row:
                problems.append(f"social_out[{u}]: self-loop")
    return problems


@dataclass
class Config:
    """Model and training hyperparameters.

    ``dropout_keep`` is the probability of keeping a unit.
    """

    d1: int = 64
    d2: int = 32
    k: int = 2
    neg_weight_item: float = 0.1
    neg_weight_social: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.01
    lambda3: float = 1e-4
    learning_rate: float = 0.01
    dropout_keep: float = 0.7
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    optimizer: str = "adam"
    order_bias_on: bool = True
    friend_attention_on: bool = True
    regularizer_on: bool = True
    include_initial_once: bool = False
    init_std: float = 0.01
    patience: int | None = None

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.k < 1:
            out.append("k must be >= 1")
        if self.d1 < 1 or self.d2 < 1:
            out.append("d1 and d2 must be >= 1")
        for name in ("neg_weight_item", "neg_weight_social"):
            if not 0.0 < getattr(self, name) <= 1.0:
                out.append(f"{name} must lie in (0, 1]")
        for name in ("lambda1", "lambda2", "lambda3", "learning_rate"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if not 0.0 < self.dropout_keep <= 1.0:
            out.append("dropout_keep must lie in (0, 1]")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.epochs < 0:
            out.append("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            out.append(f"unknown optimizer {self.optimizer!r}")
        return out

    def replace(self, **overrides) -> "Config":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return Config(**{**asdict(self), **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "Config":
        return cls(**payload)


# Field order of ModelParams; also the order tensors are written to snapshots.
PARAM_NAMES = (
    "user_common",
    "user_social",
    "user_item",
    "item_emb",
    "friend_emb",
    "attn_w",
    "order_bias",
    "gate_item_w",
    "gate_item_b",
    "gate_item_h",
    "gate_social_w",
    "gate_social_b",
    "gate_social_h",
    "head_item",
    "head_social",
    "theta_item",
    "theta_social",
)


@dataclass
class ModelParams:
    """All trainable tensors.

    Per-aspect tensors are indexed in :data:`ASPECTS` order: ``attn_w`` is
    ``(3, D1)`` and ``order_bias`` is ``(3, K, D1)``. ``theta_item`` and
    ``theta_social`` weight the common embedding when reconstructing the
    item- and social-domain embeddings at each order.
    """

    user_common: np.ndarray
    user_social: np.ndarray
    user_item: np.ndarray
    item_emb: np.ndarray
    friend_emb: np.ndarray
    attn_w: np.ndarray
    order_bias: np.ndarray
    gate_item_w: np.ndarray
    gate_item_b: np.ndarray
    gate_item_h: np.ndarray
    gate_social_w: np.ndarray
    gate_social_b: np.ndarray
    gate_social_h: np.ndarray
    head_item: np.ndarray
    head_social: np.ndarray
    theta_item: np.ndarray
    theta_social: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def user_table(self, aspect: str) -> np.ndarray:
        return {"C": self.user_common, "S": self.user_social, "I": self.user_item}[aspect]

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        """(num_users, num_items, D1, D2, K)."""
        m, d1 = self.user_common.shape
        return m, self.item_emb.shape[0], d1, self.gate_item_w.shape[0], self.order_bias.shape[1]

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.as_dict().values())


def expected_shapes(num_users: int, num_items: int, config: Config) -> dict[str, tuple]:
    m, n, d1, d2, k = num_users, num_items, config.d1, config.d2, config.k
    return {
        "user_common": (m, d1),
        "user_social": (m, d1),
        "user_item": (m, d1),
        "item_emb": (n, d1),
        "friend_emb": (m, d1),
        "attn_w": (3, d1),
        "order_bias": (3, k, d1),
        "gate_item_w": (d2, d1),
        "gate_item_b": (d2,),
        "gate_item_h": (d2,),
        "gate_social_w": (d2, d1),
        "gate_social_b": (d2,),
        "gate_social_h": (d2,),
        "head_item": (d1,),
        "head_social": (d1,),
        "theta_item": (k,),
        "theta_social": (k,),
    }


def check_shapes(params: ModelParams, num_users: int, num_items: int, config: Config) -> None:
    """Raise ValueError naming every tensor whose shape disagrees with the dims."""
    want = expected_shapes(num_users, num_items, config)
    bad = [
        f"{name}: expected {want[name]}, found {getattr(params, name).shape}"
        for name in PARAM_NAMES
        if getattr(params, name).shape != want[name]
    ]
    if bad:
        raise ValueError("parameter shape mismatch: " + "; ".join(bad))


def save_params(path, params: ModelParams, config: Config | None = None) -> None:
    """Write a snapshot: an ``.npz`` holding every tensor in :data:`PARAM_NAMES` order.

    Besides the tensors the archive carries ``__schema__`` (the schema tag),
    ``__order__`` (tensor names in write order) and, optionally,
    ``__config__`` (the JSON-encoded :class:`Config`).
    """
    path = Path(path)
    payload = {
        "__schema__": np.array(PARAMS_SCHEMA),
        "__order__": np.array(PARAM_NAMES),
    }
    if config is not None:
        payload["__config__"] = np.array(json.dumps(config.to_dict(), sort_keys=True))
    payload.update(params.as_dict())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    tmp.replace(path)


def load_params(path) -> tuple[ModelParams, Config | None]:
    with np.load(Path(path), allow_pickle=False) as archive:
        schema = str(archive["__schema__"]) if "__schema__" in archive else None
        if schema != PARAMS_SCHEMA:
            raise ValueError(f"unsupported parameter snapshot schema {schema!r}")
        missing = [n for n in PARAM_NAMES if n not in archive]
        if missing:
            raise ValueError(f"snapshot is missing tensors: {missing}")
        params = ModelParams(**{n: np.array(archive[n], dtype=np.float64) for n in PARAM_NAMES})
        config = None
        if "__config__" in archive:
            config = Config.from_dict(json.loads(str(archive["__config__"])))
    return params, config


def save_dataset(path, dataset: Dataset) -> None:
    Path(path).write_text(json.dumps(dataset.to_dict(), separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    return Dataset.from_dict(json.loads(Path(path).read_text()))
