"""Attention gates that mix common and domain-specific user knowledge, and the score heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gate_scores(x, w, b, h):
    """Two-layer attention score ``h . relu(W x + b)``; ``x`` may be a batch of rows."""
    return np.maximum(np.asarray(x) @ np.asarray(w).T + b, 0.0) @ h


@dataclass(frozen=True)
class GateOutput:
    """Share of common knowledge in the item (alpha) and social (beta) domains."""

    alpha_common: float
    alpha_item: float
    beta_common: float
    beta_social: float


def _two_way(common_score, other_score):
    a = float(sigmoid(np.array(common_score - other_score)))
    return a, 1.0 - a


def gates_for_user(common, item, social, params) -> GateOutput:
    ac, ai = _two_way(
        gate_scores(common, params.gate_item_w, params.gate_item_b, params.gate_item_h),
        gate_scores(item, params.gate_item_w, params.gate_item_b, params.gate_item_h),
    )
    bc, bs = _two_way(
        gate_scores(common, params.gate_social_w, params.gate_social_b, params.gate_social_h),
        gate_scores(social, params.gate_social_w, params.gate_social_b, params.gate_social_h),
    )
    return GateOutput(ac, ai, bc, bs)


def fuse(common, item, social, gates: GateOutput):
    common, item, social = (np.asarray(v, dtype=np.float64) for v in (common, item, social))
    p_item = gates.alpha_item * item + gates.alpha_common * common
    p_social = gates.beta_social * social + gates.beta_common * common
    return p_item, p_social


def predict_item(p_item, q, head):
    return float(np.sum(np.asarray(head) * np.asarray(p_item) * np.asarray(q)))


def predict_social(p_social, g, head):
    return float(np.sum(np.asarray(head) * np.asarray(p_social) * np.asarray(g)))


# Batched forward/backward used during training.

@dataclass
class GateCache:
    common: np.ndarray
    other: np.ndarray
    pre_common: np.ndarray
    pre_other: np.ndarray
    weight: np.ndarray
    w: np.ndarray
    h: np.ndarray


def gated_fuse_batch(common, other, w, b, h):
    """Fuse ``(B, D1)`` common and domain rows; returns ``(fused, common_weight, cache)``."""
    pre_c = common @ w.T + b
    pre_o = other @ w.T + b
    score_c = np.maximum(pre_c, 0.0) @ h
    score_o = np.maximum(pre_o, 0.0) @ h
    weight = sigmoid(score_c - score_o)
    fused = other + weight[:, None] * (common - other)
    return fused, weight, GateCache(common, other, pre_c, pre_o, weight, w, h)


def gated_fuse_backward(cache: GateCache, d_fused):
    """Returns ``(d_common, d_other, d_w, d_b, d_h)``."""
    wt = cache.weight[:, None]
    d_common = wt * d_fused
    d_other = (1.0 - wt) * d_fused
    d_weight = np.einsum("bd,bd->b", d_fused, cache.common - cache.other)
    d_diff = d_weight * cache.weight * (1.0 - cache.weight)
    d_w = np.zeros_like(cache.w)
    d_b = np.zeros(cache.w.shape[0])
    d_h = np.zeros_like(cache.h)
    for x, pre, d_score, dx in (
        (cache.common, cache.pre_common, d_diff, d_common),
        (cache.other, cache.pre_other, -d_diff, d_other),
    ):
        act = np.maximum(pre, 0.0)
        d_h += act.T @ d_score
        d_pre = d_score[:, None] * cache.h * (pre > 0)
        d_w += d_pre.T @ x
        d_b += d_pre.sum(axis=0)
        dx += d_pre @ cache.w
    return d_common, d_other, d_w, d_b, d_h
