import numpy as np
import pytest

from ptln.data import Config, Dataset


def random_dataset(rng, m, n, max_pos=4, max_friends=3):
    positives = [sorted(rng.choice(n, size=rng.integers(0, min(max_pos, n) + 1), replace=False).tolist()) for _ in range(m)]
    social = []
    for u in range(m):
        others = [t for t in range(m) if t != u]
        size = rng.integers(0, min(max_friends, len(others)) + 1)
        social.append(sorted(rng.choice(others, size=size, replace=False).tolist()) if others else [])
    return Dataset(m, n, positives, social)


def random_graph(rng, m, p):
    out = []
    for u in range(m):
        out.append([t for t in range(m) if t != u and rng.random() < p])
    return Dataset(m, 0, [[] for _ in range(m)], out)


def perturbed_params(params, rng, scale=0.5):
    """Move every tensor off its init so no gradient is trivially zero."""
    for name, arr in params.as_dict().items():
        if name in ("theta_item", "theta_social"):
            arr[...] = rng.normal(1.0, 0.3, arr.shape)
        else:
            arr[...] = rng.normal(0.0, scale, arr.shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return Config(d1=3, d2=2, k=2, init_std=0.5, lambda1=0.7, lambda2=0.3, lambda3=0.05,
                  neg_weight_item=0.3, neg_weight_social=0.6, dropout_keep=1.0, batch_size=4, epochs=3)


def random_instance(rng, max_m=8, max_n=10, max_d1=4, max_k=2, scale=0.5, **config_overrides):
    """A random tiny (dataset, neighborhoods, params, batch, config) for oracle checks."""
    from ptln.propagation import khop_friends
    from ptln.training import init_params

    m, n = int(rng.integers(2, max_m + 1)), int(rng.integers(1, max_n + 1))
    settings_ = dict(
        d1=int(rng.integers(1, max_d1 + 1)), d2=int(rng.integers(1, 4)), k=int(rng.integers(1, max_k + 1)),
        lambda1=float(rng.uniform(0.1, 1.0)), lambda2=float(rng.uniform(0.1, 1.0)), lambda3=float(rng.uniform(0.01, 0.1)),
        neg_weight_item=float(rng.uniform(0.05, 1.0)), neg_weight_social=float(rng.uniform(0.05, 1.0)),
        dropout_keep=1.0,
    )
    settings_.update(config_overrides)
    cfg = Config(**settings_)
    ds = random_dataset(rng, m, n, max_pos=min(4, n), max_friends=min(3, m - 1))
    hoods = khop_friends(ds, cfg.k)
    params = perturbed_params(init_params(m, n, cfg, seed=int(rng.integers(2**31))), rng, scale=scale)
    batch = np.sort(rng.choice(m, size=int(rng.integers(1, m + 1)), replace=False))
    return ds, hoods, params, batch, cfg


def finite_difference_errors(params, batch, ds, hoods, cfg, masks=None, step=1e-6):
    """Max relative error per trainable tensor between analytic and central-difference gradients."""
    from ptln.objective import loss_total
    from ptln.training import compute_gradients, forward, trainable_names

    analytic = compute_gradients(params, batch, ds, hoods, cfg, masks)

    def loss():
        return loss_total(forward(params, ds, hoods, batch, cfg, masks)[0], cfg)

    errors = {}
    for name in trainable_names(cfg):
        arr = getattr(params, name)
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = loss()
            arr[idx] = old - step
            down = loss()
            arr[idx] = old
            numeric[idx] = (up - down) / (2 * step)
        scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic[name])), 1e-8)
        errors[name] = float(np.max(np.abs(numeric - analytic[name])) / scale)
    return errors
