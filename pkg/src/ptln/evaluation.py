"""Top-N ranking metrics over full item rankings, with cold-start slices."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ptln.data import Config, Dataset, ModelParams
from ptln.propagation import OrderNeighborhoods, propagate_batch
from ptln.transfer import gated_fuse_batch

DEFAULT_CUTOFFS = (5, 10, 15)
DEFAULT_SLICES = ((0, 4), (5, 16), (17, None))
METRICS = ("precision", "recall", "ndcg", "mrr")
REPORT_SCHEMA = "ptln.report/1"


def item_scores(params: ModelParams, neighborhoods: OrderNeighborhoods, users, config: Config, chunk: int = 1024):
    """Predicted item scores ``(len(users), N)`` with dropout off."""
    users = np.asarray(users, dtype=np.int64)
    out = np.empty((len(users), params.item_emb.shape[0]))
    weighted_items = params.item_emb * params.head_item
    for start in range(0, len(users), chunk):
        batch = users[start : start + chunk]
        common, _, _ = propagate_batch(params.user_common, params.attn_w[0], params.order_bias[0], neighborhoods, batch, config)
        item, _, _ = propagate_batch(params.user_item, params.attn_w[2], params.order_bias[2], neighborhoods, batch, config)
        p_item, _, _ = gated_fuse_batch(common, item, params.gate_item_w, params.gate_item_b, params.gate_item_h)
        out[start : start + len(batch)] = p_item @ weighted_items.T
    return out


def rank_items(scores, exclude=()) -> np.ndarray:
    """Item indices by descending score, ties by ascending index, ``exclude`` removed."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[~np.isin(order, np.asarray(list(exclude), dtype=np.int64))]
    return order


def metrics_at(ranked, relevant, n: int) -> tuple[float, float, float, float]:
    """(precision, recall, ndcg, mrr) of the top ``n`` of ``ranked``."""
    if n < 1:
        raise ValueError("cutoff must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be nonempty")
    hits = [r for r, item in enumerate(list(ranked)[:n], start=1) if item in relevant]
    dcg = sum(1.0 / math.log2(r + 1) for r in hits)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(n, len(relevant)) + 1))
    mrr = 1.0 / hits[0] if hits else 0.0
    return len(hits) / n, len(hits) / len(relevant), dcg / idcg, mrr


def _slice_label(lo, hi):
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


@dataclass
class MetricsReport:
    cutoffs: tuple
    metrics: dict
    num_users: int
    slices: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "cutoffs": list(self.cutoffs),
            "num_users": self.num_users,
            "metrics": {str(n): self.metrics[n] for n in self.cutoffs},
            "slices": {
                label: {"num_users": s["num_users"], "metrics": {str(n): m for n, m in s["metrics"].items()}}
                for label, s in self.slices.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        """Metric x cutoff table; slices follow as extra rows."""
        header = ["group", "users"] + [f"{m[:4].capitalize()}@{n}" for m in METRICS for n in self.cutoffs]
        rows = [_table_row("all", self.num_users, self.metrics, self.cutoffs)]
        for label, s in self.slices.items():
            rows.append(_table_row(f"train {label}", s["num_users"], s["metrics"], self.cutoffs))
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
        fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
        return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"


def _table_row(label, users, metrics, cutoffs):
    cells = [label, str(users)]
    for m in METRICS:
        for n in cutoffs:
            cells.append("-" if n not in metrics else f"{metrics[n][m]:.4f}")
    return cells


def _mean_metrics(per_user: list[dict], cutoffs) -> dict:
    return {n: {m: float(np.mean([u[n][m] for u in per_user])) for m in METRICS} for n in cutoffs}


def evaluate_scores(scores, train: Dataset, test, cutoffs=DEFAULT_CUTOFFS, slices=None) -> MetricsReport:
    """Evaluate a full ``(M, N)`` score matrix against held-out items."""
    cutoffs = tuple(sorted(int(n) for n in cutoffs))
    evaluated, per_user = [], []
    for u, held in enumerate(test):
        if not held:
            continue
        ranked = rank_items(scores[u], train.positives[u])[: cutoffs[-1]]
        per_user.append({n: dict(zip(METRICS, metrics_at(ranked, held, n))) for n in cutoffs})
        evaluated.append(u)
    if not evaluated:
        raise ValueError("no users with held-out items to evaluate")
    report = MetricsReport(cutoffs, _mean_metrics(per_user, cutoffs), len(evaluated))
    for lo, hi in slices or ():
        members = [
            row for u, row in zip(evaluated, per_user)
            if len(train.positives[u]) >= lo and (hi is None or len(train.positives[u]) <= hi)
        ]
        report.slices[_slice_label(lo, hi)] = {
            "num_users": len(members),
            "metrics": _mean_metrics(members, cutoffs) if members else {},
        }
    return report


def evaluate(params, train: Dataset, test, neighborhoods, config: Config, cutoffs=DEFAULT_CUTOFFS, slices=None):
    users = [u for u, held in enumerate(test) if held]
    scores = np.zeros((train.num_users, train.num_items))
    if users:
        scores[users] = item_scores(params, neighborhoods, users, config)
    return evaluate_scores(scores, train, test, cutoffs, slices)
