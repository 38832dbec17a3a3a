"""Shared fixtures and the flatten/unflatten harness for gradient checks."""

import numpy as np
import pytest

from conet.data import CrossDomainDataset, InteractionDataset, loo_split
from conet.models import DomainSizes, ModelConfig, build_model
from conet.numerics import derive_rng, finite_difference_gradient
from conet.training import cross_entropy_from_logits

TINY_SIZES = DomainSizes(num_users=7, num_items_target=5, num_items_source=6)


def tiny_model_config(arch):
    widths = (8, 8, 8) if arch == "csn" else (8, 4, 2)
    return ModelConfig(architecture=arch, embedding_dim=4, hidden_widths=widths,
                       lasso_lambda=0.0)


def tiny_scaled_model(arch, seed, unshared=False):
    cfg = tiny_model_config(arch)
    if unshared:
        cfg = ModelConfig(architecture="mlp++", embedding_dim=4, hidden_widths=(8, 4, 2),
                          lasso_lambda=0.0, share_user_embedding=False)
    model = build_model(cfg, TINY_SIZES, seed)
    # Embeddings start at 0.01; scale them to O(1) so activations are varied
    # and ReLU kinks sit far from the finite-difference probe.
    for name in ("P", "P_src", "Q", "Q_t", "Q_s"):
        if name in model.params:
            model.params[name] = model.params[name] * 100.0
    return model


def joint_loss_of(model, users, items_t, items_s, labels_t, labels_s):
    if model.dual:
        trace = model.forward_batch(users, items_t, items_s)
        return (cross_entropy_from_logits(trace.logits_t, labels_t)
                + cross_entropy_from_logits(trace.logits_s, labels_s))
    trace = model.forward_batch(users, items_t)
    return cross_entropy_from_logits(trace.logits, labels_t)


def gradient_check(arch, seed, batch=8, rtol=1e-5, atol=1e-8, unshared=False):
    """Max deviation of analytic gradients vs central differences.

    Returns the worst ratio |analytic - numeric| / (atol + rtol * scale)
    over every parameter coordinate of the smooth joint loss; values <= 1
    mean every coordinate is within tolerance.
    """
    model = tiny_scaled_model(arch, seed, unshared=unshared)
    # Move to a generic point: with zero-initialized biases an all-dead
    # layer puts the next pre-activation exactly on the ReLU kink, where a
    # two-sided difference measures a one-sided slope.
    jitter = np.random.default_rng(seed + 2000)
    for name in model.params:
        model.params[name] = model.params[name] + jitter.normal(
            scale=0.05, size=model.params[name].shape)
    rng = np.random.default_rng(seed + 1000)
    users = rng.integers(0, TINY_SIZES.num_users, size=batch)
    items_t = rng.integers(0, TINY_SIZES.num_items_target, size=batch)
    items_s = rng.integers(0, TINY_SIZES.num_items_source, size=batch)
    labels_t = rng.integers(0, 2, size=batch).astype(float)
    labels_s = rng.integers(0, 2, size=batch).astype(float)

    names = sorted(model.params)
    shapes = {n: model.params[n].shape for n in names}
    theta0 = flatten_params(model.params, names)

    def loss_at(theta):
        saved = model.params
        model.params = unflatten_params(theta, shapes, names)
        value = joint_loss_of(model, users, items_t, items_s, labels_t, labels_s)
        model.params = saved
        return value

    if model.dual:
        trace = model.forward_batch(users, items_t, items_s)
        grads = model.backward_batch(trace, labels_target=labels_t, labels_source=labels_s)
    else:
        trace = model.forward_batch(users, items_t)
        grads = model.backward_batch(trace, labels_t)
    analytic = flatten_params(grads, names)
    numeric = finite_difference_gradient(loss_at, theta0, 1e-6)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / (atol + rtol * scale)))


def flatten_params(params, names=None):
    names = sorted(params) if names is None else names
    return np.concatenate([np.asarray(params[n], dtype=np.float64).ravel() for n in names])


def unflatten_params(vec, shapes, names=None):
    names = sorted(shapes) if names is None else names
    out = {}
    pos = 0
    for n in names:
        size = int(np.prod(shapes[n])) if shapes[n] else 1
        out[n] = np.asarray(vec[pos : pos + size]).reshape(shapes[n])
        pos += size
    return out


def make_cross_domain(num_users=12, per_user_target=6, per_user_source=5,
                      n_target=120, n_source=110, seed=0):
    rng = np.random.default_rng(seed)
    t_adj = [sorted(rng.choice(n_target, per_user_target, replace=False))
             for _ in range(num_users)]
    s_adj = [sorted(rng.choice(n_source, per_user_source, replace=False))
             for _ in range(num_users)]
    def ids(prefix, n):
        return [f"{prefix}{k}" for k in range(n)]
    return CrossDomainDataset(
        target=InteractionDataset(num_users, n_target, t_adj,
                                  user_ids=ids("u", num_users), item_ids=ids("t", n_target)),
        source=InteractionDataset(num_users, n_source, s_adj,
                                  user_ids=ids("u", num_users), item_ids=ids("s", n_source)),
    )


@pytest.fixture
def small_split():
    data = make_cross_domain()
    return loo_split(data, derive_rng(0, "split"))
