"""Initialisation, exact reverse-mode gradients, optimisers and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ptln.data import ASPECTS, PARAM_NAMES, Config, Dataset, ModelParams, csr_rows, expected_shapes
from ptln.objective import BatchContext, combine, l2_penalty, loss_regularization_grad, whole_data_loss_grad
from ptln.propagation import OrderNeighborhoods, khop_friends, propagate_batch, propagate_batch_backward
from ptln.transfer import gated_fuse_backward, gated_fuse_batch

log = logging.getLogger(__name__)


def trainable_names(config: Config) -> tuple[str, ...]:
    """Tensors that receive gradients; ablated components stay frozen."""
    frozen = set()
    if not config.order_bias_on:
        frozen.add("order_bias")
    if not config.friend_attention_on:
        frozen.add("attn_w")
    if not config.regularizer_on:
        frozen.update(("theta_item", "theta_social"))
    return tuple(n for n in PARAM_NAMES if n not in frozen)


def init_params(num_users: int, num_items: int, config: Config, seed: int | None = None) -> ModelParams:
    """Gaussian(0, init_std) weights, zero gate biases and order biases, thetas at 1."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    tensors = {}
    for name, shape in expected_shapes(num_users, num_items, config).items():
        if name in ("order_bias", "gate_item_b", "gate_social_b"):
            tensors[name] = np.zeros(shape)
        elif name in ("theta_item", "theta_social"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = rng.normal(0.0, config.init_std, size=shape)
    return ModelParams(**tensors)


def draw_dropout_masks(rng: np.random.Generator, batch: int, config: Config) -> dict[str, np.ndarray] | None:
    """Inverted-dropout masks (kept units scaled by ``1/keep``) for the three aspects."""
    if config.dropout_keep >= 1.0:
        return None
    keep = config.dropout_keep
    return {a: (rng.random((batch, config.d1)) < keep) / keep for a in ASPECTS}


@dataclass
class ForwardCache:
    prop: dict
    gate_item: object
    gate_social: object
    masks: dict | None


def forward(params: ModelParams, dataset: Dataset, neighborhoods: OrderNeighborhoods, users, config: Config, masks=None):
    """Build the :class:`BatchContext` for ``users``; returns ``(ctx, cache)``."""
    users = np.asarray(users, dtype=np.int64)
    final, orders, prop = {}, {}, {}
    for a, aspect in enumerate(ASPECTS):
        final[aspect], orders[aspect], prop[aspect] = propagate_batch(
            params.user_table(aspect), params.attn_w[a], params.order_bias[a], neighborhoods, users, config
        )
    x = {a: final[a] * masks[a] if masks is not None else final[a] for a in ASPECTS}
    p_item, _, gate_item = gated_fuse_batch(
        x["C"], x["I"], params.gate_item_w, params.gate_item_b, params.gate_item_h
    )
    p_social, _, gate_social = gated_fuse_batch(
        x["C"], x["S"], params.gate_social_w, params.gate_social_b, params.gate_social_h
    )
    _, item_rows, item_cols = csr_rows(*dataset.item_csr, users)
    _, soc_rows, soc_cols = csr_rows(*dataset.social_csr, users)
    ctx = BatchContext(
        users=users,
        p_item=p_item,
        p_social=p_social,
        item_emb=params.item_emb,
        head_item=params.head_item,
        friend_emb=params.friend_emb,
        head_social=params.head_social,
        item_pos=(item_rows, item_cols),
        social_pos=(soc_rows, soc_cols),
        common_orders=orders["C"],
        item_orders=orders["I"],
        social_orders=orders["S"],
        params=params,
        trainable=trainable_names(config),
    )
    return ctx, ForwardCache(prop, gate_item, gate_social, masks)


@dataclass
class GradientSet:
    """Gradients of the total loss for every trainable tensor, plus the loss terms."""

    grads: dict[str, np.ndarray]
    losses: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.grads[name]


def compute_gradients(
    params: ModelParams,
    batch,
    dataset: Dataset,
    neighborhoods: OrderNeighborhoods,
    config: Config,
    masks: dict | None = None,
) -> GradientSet:
    """Exact gradients of the total objective on ``batch``.

    ``masks`` fixes the dropout pattern (see :func:`draw_dropout_masks`);
    ``None`` disables dropout.
    """
    ctx, cache = forward(params, dataset, neighborhoods, batch, config, masks)
    trainable = ctx.trainable
    grads = {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES}

    loss_i, d_pi, d_q, d_hi = whole_data_loss_grad(
        ctx.p_item, ctx.item_emb, ctx.head_item, *ctx.item_pos, config.neg_weight_item
    )
    loss_s, d_ps, d_g, d_hs = whole_data_loss_grad(
        ctx.p_social, ctx.friend_emb, ctx.head_social, *ctx.social_pos, config.neg_weight_social
    )
    lam1 = config.lambda1
    grads["item_emb"] += d_q
    grads["head_item"] += d_hi
    grads["friend_emb"] += lam1 * d_g
    grads["head_social"] += lam1 * d_hs

    dc_i, d_xi, grads["gate_item_w"], grads["gate_item_b"], grads["gate_item_h"] = gated_fuse_backward(
        cache.gate_item, d_pi
    )
    dc_s, d_xs, dw, db, dh = gated_fuse_backward(cache.gate_social, lam1 * d_ps)
    grads["gate_social_w"], grads["gate_social_b"], grads["gate_social_h"] = dw, db, dh
    d_final = {"C": dc_i + dc_s, "I": d_xi, "S": d_xs}
    if cache.masks is not None:
        d_final = {a: d_final[a] * cache.masks[a] for a in ASPECTS}

    loss_r = 0.0
    d_orders = {a: None for a in ASPECTS}
    if config.regularizer_on:
        loss_r, d_co, d_io, d_so, d_ti, d_ts = loss_regularization_grad(
            ctx.common_orders, ctx.item_orders, ctx.social_orders, params.theta_item, params.theta_social
        )
        lam2 = config.lambda2
        d_orders = {"C": lam2 * d_co, "I": lam2 * d_io, "S": lam2 * d_so}
        grads["theta_item"] += lam2 * d_ti
        grads["theta_social"] += lam2 * d_ts

    for a, aspect in enumerate(ASPECTS):
        d_table, d_w, d_bias = propagate_batch_backward(cache.prop[aspect], d_final[aspect], d_orders[aspect])
        grads[{"C": "user_common", "S": "user_social", "I": "user_item"}[aspect]] += d_table
        grads["attn_w"][a] += d_w
        grads["order_bias"][a] += d_bias

    loss_l2 = l2_penalty(params, trainable)
    for name in trainable:
        grads[name] += 2.0 * config.lambda3 * getattr(params, name)

    out = {n: grads[n] for n in trainable}
    for name, g in out.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
    losses = {"item": loss_i, "social": loss_s, "reg": float(loss_r), "l2": loss_l2}
    losses["total"] = combine(losses, config)
    return GradientSet(out, losses)


class SGD:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        for name, g in grads.items():
            getattr(params, name)[...] -= self.learning_rate * g


class Adam:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            getattr(params, name)[...] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: Config):
    return Adam(config.learning_rate) if config.optimizer == "adam" else SGD(config.learning_rate)


def train_epoch(params, optimizer, dataset, neighborhoods, config: Config, rng: np.random.Generator) -> dict:
    """One pass over all users in shuffled batches; returns the mean of each loss term."""
    order = rng.permutation(dataset.num_users)
    sums: dict[str, float] = {}
    batches = 0
    for start in range(0, len(order), config.batch_size):
        batch = np.sort(order[start : start + config.batch_size])
        masks = draw_dropout_masks(rng, len(batch), config)
        gs = compute_gradients(params, batch, dataset, neighborhoods, config, masks)
        optimizer.step(params, gs.grads)
        for key, value in gs.losses.items():
            sums[key] = sums.get(key, 0.0) + value
        batches += 1
    if not params.all_finite():
        raise FloatingPointError("parameters became non-finite")
    return {key: value / max(batches, 1) for key, value in sums.items()}


def fit(dataset: Dataset, config: Config, validation=None, on_epoch=None):
    """Train from scratch; returns ``(params, log)``.

    ``validation`` is an optional per-user list of held-out items. With
    ``config.patience`` set, training stops once NDCG@10 on it has not
    improved for that many epochs, and the best parameters are returned.
    """
    from ptln.evaluation import evaluate

    init_seq, train_seq = np.random.SeedSequence(config.seed).spawn(2)
    neighborhoods = khop_friends(dataset, config.k)
    params = init_params(dataset.num_users, dataset.num_items, config, seed=int(init_seq.generate_state(1)[0]))
    optimizer = make_optimizer(config)
    rng = np.random.default_rng(train_seq)
    history = []
    best, best_score, stale = None, -np.inf, 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        stats = train_epoch(params, optimizer, dataset, neighborhoods, config, rng)
        record = {"epoch": epoch, **stats}
        if validation is not None:
            report = evaluate(params, dataset, validation, neighborhoods, config, cutoffs=(10,))
            record["val_ndcg@10"] = report.metrics[10]["ndcg"]
        record["seconds"] = time.perf_counter() - started
        history.append(record)
        log.info("epoch %d total %.6g", epoch, stats["total"])
        if on_epoch is not None:
            on_epoch(record)
        if validation is not None and config.patience is not None:
            if record["val_ndcg@10"] > best_score:
                best, best_score, stale = params.copy(), record["val_ndcg@10"], 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best is not None:
        params = best
    return params, history
