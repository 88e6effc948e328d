"""Whole-data squared losses, the cross-domain reconstruction regularizer and the total objective.

The whole-data loss over a batch ``B`` with fused user rows ``P``, target
embeddings ``T`` (items or friend-role users), head ``h`` and a uniform
negative weight ``c`` is::

    sum_{d,d'} h_d h_d' (P^T P)_{dd'} (c T^T T)_{dd'}
        + sum_{(u,v) positive} ((1 - c) r_uv^2 - 2 r_uv)

with ``r_uv = sum_d h_d P[u,d] T[v,d]``. It equals the naive weighted loss
``sum_pos (r - 1)^2 + sum_neg c r^2`` minus the number of positives, at a
cost independent of ``|B| * |T|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ptln.data import Config, ModelParams


class EvalCounter:
    """Counts per-pair score evaluations made by the efficient losses."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


pair_scores = EvalCounter()


@dataclass
class BatchContext:
    """Everything the losses need for one batch of users.

    ``*_orders`` arrays are ``(K, B, D1)``; positive pairs are given as
    ``(batch_row, target_index)`` arrays.
    """

    users: np.ndarray
    p_item: np.ndarray
    p_social: np.ndarray
    item_emb: np.ndarray
    head_item: np.ndarray
    friend_emb: np.ndarray
    head_social: np.ndarray
    item_pos: tuple
    social_pos: tuple
    common_orders: np.ndarray
    item_orders: np.ndarray
    social_orders: np.ndarray
    params: ModelParams | None = None
    trainable: tuple = ()


def _scores(p, targets, head, rows, cols):
    pair_scores.count += len(rows)
    return np.einsum("nd,nd,d->n", p[rows], targets[cols], head)


def whole_data_loss(p, targets, head, rows, cols, c_neg) -> float:
    quad = head @ ((p.T @ p) * (c_neg * (targets.T @ targets))) @ head
    r = _scores(p, targets, head, rows, cols)
    return float(quad + np.sum((1.0 - c_neg) * r * r - 2.0 * r))


def whole_data_loss_grad(p, targets, head, rows, cols, c_neg):
    """Returns ``(loss, d_p, d_targets, d_head)``."""
    gram_p = p.T @ p
    gram_t = c_neg * (targets.T @ targets)
    hh = np.outer(head, head)
    mixed = gram_p * gram_t
    loss = head @ mixed @ head
    d_p = 2.0 * p @ (hh * gram_t)
    d_t = 2.0 * c_neg * targets @ (hh * gram_p)
    d_head = 2.0 * mixed @ head
    r = _scores(p, targets, head, rows, cols)
    loss += np.sum((1.0 - c_neg) * r * r - 2.0 * r)
    d_r = (2.0 * (1.0 - c_neg) * r - 2.0)[:, None]
    pr, tc = p[rows], targets[cols]
    np.add.at(d_p, rows, d_r * head * tc)
    np.add.at(d_t, cols, d_r * head * pr)
    d_head += (d_r * pr * tc).sum(axis=0)
    return float(loss), d_p, d_t, d_head


def whole_data_loss_naive(p, targets, head, rows, cols, c_neg) -> float:
    """Weighted squared loss evaluated pair by pair over the full batch x targets grid."""
    scores = (p * head) @ targets.T
    observed = np.zeros_like(scores)
    observed[rows, cols] = 1.0
    return float(np.sum(observed * (scores - 1.0) ** 2 + (1.0 - observed) * c_neg * scores**2))


def loss_item_efficient(ctx: BatchContext, c_neg: float) -> float:
    return whole_data_loss(ctx.p_item, ctx.item_emb, ctx.head_item, *ctx.item_pos, c_neg)


def loss_item_naive(ctx: BatchContext, c_neg: float) -> float:
    return whole_data_loss_naive(ctx.p_item, ctx.item_emb, ctx.head_item, *ctx.item_pos, c_neg)


def loss_social_efficient(ctx: BatchContext, c_neg: float) -> float:
    return whole_data_loss(ctx.p_social, ctx.friend_emb, ctx.head_social, *ctx.social_pos, c_neg)


def loss_social_naive(ctx: BatchContext, c_neg: float) -> float:
    return whole_data_loss_naive(ctx.p_social, ctx.friend_emb, ctx.head_social, *ctx.social_pos, c_neg)


def loss_regularization(ctx: BatchContext, theta_item, theta_social) -> float:
    theta_item = np.asarray(theta_item, dtype=np.float64)[:, None, None]
    theta_social = np.asarray(theta_social, dtype=np.float64)[:, None, None]
    r_item = ctx.item_orders - theta_item * ctx.common_orders
    r_social = ctx.social_orders - theta_social * ctx.common_orders
    return float(np.sum(r_item**2) + np.sum(r_social**2))


def loss_regularization_grad(common, item, social, theta_item, theta_social):
    """Returns ``(loss, d_common, d_item, d_social, d_theta_item, d_theta_social)``."""
    ti, ts = theta_item[:, None, None], theta_social[:, None, None]
    r_item = item - ti * common
    r_social = social - ts * common
    loss = np.sum(r_item**2) + np.sum(r_social**2)
    d_common = -2.0 * (ti * r_item + ts * r_social)
    d_theta_item = -2.0 * np.einsum("kbd,kbd->k", r_item, common)
    d_theta_social = -2.0 * np.einsum("kbd,kbd->k", r_social, common)
    return float(loss), d_common, 2.0 * r_item, 2.0 * r_social, d_theta_item, d_theta_social


def l2_penalty(params: ModelParams, names) -> float:
    return float(sum(np.sum(getattr(params, n) ** 2) for n in names))


def loss_parts(ctx: BatchContext, config: Config) -> dict[str, float]:
    parts = {
        "item": loss_item_efficient(ctx, config.neg_weight_item),
        "social": loss_social_efficient(ctx, config.neg_weight_social),
        "reg": 0.0,
        "l2": l2_penalty(ctx.params, ctx.trainable) if ctx.params is not None else 0.0,
    }
    if config.regularizer_on:
        parts["reg"] = loss_regularization(ctx, ctx.params.theta_item, ctx.params.theta_social)
    parts["total"] = combine(parts, config)
    return parts


def combine(parts: dict, config: Config) -> float:
    total = parts["item"] + config.lambda1 * parts["social"] + config.lambda3 * parts["l2"]
    if config.regularizer_on:
        total += config.lambda2 * parts["reg"]
    return float(total)


def loss_total(ctx: BatchContext, config: Config) -> float:
    return loss_parts(ctx, config)["total"]
