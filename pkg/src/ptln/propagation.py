"""K-hop friend layering and attention-weighted social propagation.

For every user ``u``, aspect table ``E`` and order ``k`` with friend set
``F``::

    score_t  = w . (E[u] * E[t])              t in F
    weight_t = softmax(score)_t
    f        = sum_t weight_t * E[t]
    e_k      = E[u] + f + bias_k              (e_k = E[u] when F is empty)

and the propagated embedding is ``sum_k e_k``. Friends always contribute
their initial table rows, never the output of an earlier order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ptln.data import ASPECTS, Config, Dataset, ModelParams, csr_rows


@dataclass(frozen=True)
class OrderNeighborhoods:
    """Friends of each user grouped by trust-path distance 1..K, stored as CSR per order."""

    num_users: int
    indptr: tuple
    indices: tuple

    @property
    def k(self) -> int:
        return len(self.indptr)

    def friends(self, u: int, order: int) -> np.ndarray:
        ptr, idx = self.indptr[order - 1], self.indices[order - 1]
        return idx[ptr[u] : ptr[u + 1]]

    def layers(self, u: int) -> list[list[int]]:
        return [self.friends(u, k).tolist() for k in range(1, self.k + 1)]


def khop_friends(dataset: Dataset, k: int) -> OrderNeighborhoods:
    """Breadth-first layering of the trust graph out to depth ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    m = dataset.num_users
    layers = [[] for _ in range(k)]
    for u in range(m):
        depth = {u: 0}
        queue = deque([u])
        found = [[] for _ in range(k)]
        while queue:
            x = queue.popleft()
            if depth[x] == k:
                continue
            for t in dataset.social_out[x]:
                if t not in depth:
                    depth[t] = depth[x] + 1
                    found[depth[t] - 1].append(t)
                    queue.append(t)
        for order in range(k):
            layers[order].append(sorted(found[order]))
    indptr, indices = [], []
    for rows in layers:
        ptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum([len(r) for r in rows], out=ptr[1:])
        indptr.append(ptr)
        indices.append(np.array([t for r in rows for t in r], dtype=np.int64))
    return OrderNeighborhoods(m, tuple(indptr), tuple(indices))


def order_attention(u_emb, friend_embs, w) -> np.ndarray:
    friend_embs = np.atleast_2d(np.asarray(friend_embs, dtype=np.float64))
    if friend_embs.shape[0] == 0:
        raise ValueError("order_attention needs at least one friend")
    scores = (friend_embs * np.asarray(u_emb)) @ np.asarray(w)
    scores = np.exp(scores - scores.max())
    return scores / scores.sum()


def aggregate_influence(weights, friend_embs) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    friend_embs = np.atleast_2d(np.asarray(friend_embs, dtype=np.float64))
    if len(weights) != len(friend_embs):
        raise ValueError("one weight per friend required")
    return weights @ friend_embs


def update_user(u0, f, order_bias, order_bias_on: bool = True, has_friends: bool = True) -> np.ndarray:
    u0 = np.asarray(u0, dtype=np.float64)
    if not has_friends:
        return u0.copy()
    out = u0 + np.asarray(f)
    if order_bias_on:
        out = out + np.asarray(order_bias)
    return out


def propagate_aspect(params: ModelParams, neighborhoods: OrderNeighborhoods, aspect: str, u: int, config: Config):
    """Propagated embedding of a single user for one aspect."""
    a = ASPECTS.index(aspect)
    table = params.user_table(aspect)
    u0 = table[u]
    total = u0.copy() if config.include_initial_once else np.zeros_like(u0)
    for k in range(1, neighborhoods.k + 1):
        friends = neighborhoods.friends(u, k)
        if len(friends) == 0:
            total += update_user(u0, None, None, has_friends=False)
            continue
        embs = table[friends]
        if config.friend_attention_on:
            weights = order_attention(u0, embs, params.attn_w[a])
        else:
            weights = np.full(len(friends), 1.0 / len(friends))
        f = aggregate_influence(weights, embs)
        total += update_user(u0, f, params.order_bias[a, k - 1], config.order_bias_on)
    return total


def _segment_sum(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Sum consecutive runs of ``values`` of the given lengths; empty runs give 0."""
    out = np.zeros((len(counts),) + values.shape[1:])
    nonempty = counts > 0
    if values.shape[0]:
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))[nonempty]
        out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


@dataclass
class _OrderCache:
    counts: np.ndarray
    rows: np.ndarray
    friends: np.ndarray
    weights: np.ndarray


@dataclass
class PropagationCache:
    users: np.ndarray
    table: np.ndarray
    attn_w: np.ndarray
    per_order: list
    attention: bool
    bias: bool
    include_initial: bool


def propagate_batch(table, attn_w, order_bias, neighborhoods: OrderNeighborhoods, users, config: Config):
    """Vectorised propagation of ``users`` for one aspect.

    Returns ``(final, per_order, cache)`` where ``final`` is ``(B, D1)`` and
    ``per_order`` stacks the order embeddings as ``(K, B, D1)``.
    """
    users = np.asarray(users, dtype=np.int64)
    base = table[users]
    final = base.copy() if config.include_initial_once else np.zeros_like(base)
    per_order, caches = [], []
    for k in range(1, neighborhoods.k + 1):
        counts, rows, friends = csr_rows(neighborhoods.indptr[k - 1], neighborhoods.indices[k - 1], users)
        femb = table[friends]
        if config.friend_attention_on:
            scores = (base[rows] * femb) @ attn_w
            peak = np.full(len(users), -np.inf)
            np.maximum.at(peak, rows, scores)
            ex = np.exp(scores - peak[rows])
            weights = ex / _segment_sum(ex, counts)[rows]
        else:
            weights = 1.0 / counts[rows]
        f = _segment_sum(weights[:, None] * femb, counts)
        e_k = base + f
        if config.order_bias_on:
            e_k = e_k + (counts > 0)[:, None] * order_bias[k - 1]
        per_order.append(e_k)
        final += e_k
        caches.append(_OrderCache(counts, rows, friends, weights))
    cache = PropagationCache(
        users, table, attn_w, caches, config.friend_attention_on, config.order_bias_on, config.include_initial_once
    )
    return final, np.stack(per_order), cache


def propagate_batch_backward(cache: PropagationCache, d_final, d_orders=None):
    """Gradients of a scalar loss w.r.t. the table, attention vector and order biases.

    ``d_final`` is the gradient w.r.t. the propagated embedding and
    ``d_orders`` (optional, ``(K, B, D1)``) w.r.t. the per-order embeddings.
    """
    table, w, users = cache.table, cache.attn_w, cache.users
    base = table[users]
    d_table = np.zeros_like(table)
    d_w = np.zeros_like(w)
    d_bias = np.zeros((len(cache.per_order), table.shape[1]))
    d_base = d_final.copy() if cache.include_initial else np.zeros_like(d_final)
    for k, oc in enumerate(cache.per_order):
        g = d_final if d_orders is None else d_final + d_orders[k]
        d_base += g
        if cache.bias:
            d_bias[k] = g[oc.counts > 0].sum(axis=0)
        if len(oc.rows) == 0:
            continue
        femb = table[oc.friends]
        g_rows = g[oc.rows]
        d_femb = oc.weights[:, None] * g_rows
        if cache.attention:
            d_weight = np.einsum("nd,nd->n", g_rows, femb)
            centred = d_weight - _segment_sum(oc.weights * d_weight, oc.counts)[oc.rows]
            d_score = oc.weights * centred
            base_rows = base[oc.rows]
            d_w += (d_score[:, None] * base_rows * femb).sum(axis=0)
            d_base += _segment_sum(d_score[:, None] * w * femb, oc.counts)
            d_femb += d_score[:, None] * w * base_rows
        np.add.at(d_table, oc.friends, d_femb)
    np.add.at(d_table, users, d_base)
    return d_table, d_w, d_bias
