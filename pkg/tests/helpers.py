"""Shared fixtures: random bipartite graphs and a finite-difference oracle."""

import numpy as np

from mbrec.graph import BehaviorGraph
from mbrec.model import ModelConfig, compute_factors, forward, init_params
from mbrec.sparse import SparseAdjacency


def tiny_forward(seed=0, num_users=6, num_items=5, num_behaviors=2, dim=4,
                 layers=2, rank=2):
    """A complete eval-mode forward pass on a small random instance."""
    rng = np.random.default_rng(seed)
    graph = random_graph(rng, num_users, num_items, num_behaviors)
    config = ModelConfig(embed_dim=dim, num_layers=layers, rank=rank,
                         seed=seed)
    factors = compute_factors(graph, config, oversampling=2)
    params = init_params(config, num_users, num_items, num_behaviors)
    cache = forward(graph, factors, params, config)
    return graph, config, factors, params, cache


def random_graph(rng, num_users, num_items, num_behaviors, density=0.35):
    """Random multi-behavior graph with symmetric degree normalization."""
    adjacency = []
    user_counts = np.zeros((num_users, num_behaviors), dtype=np.int64)
    item_counts = np.zeros((num_items, num_behaviors), dtype=np.int64)
    for k in range(num_behaviors):
        mask = rng.random((num_users, num_items)) < density
        mask[rng.integers(num_users), rng.integers(num_items)] = True
        rows, cols = np.nonzero(mask)
        deg_u = np.bincount(rows, minlength=num_users)
        deg_v = np.bincount(cols, minlength=num_items)
        vals = 1.0 / np.sqrt(deg_u[rows] * deg_v[cols])
        adjacency.append(SparseAdjacency.from_coo(
            rows, cols, vals, num_users, num_items))
        user_counts[:, k] = deg_u
        item_counts[:, k] = deg_v
    return BehaviorGraph(adjacency=adjacency, user_counts=user_counts,
                         item_counts=item_counts)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. every tensor.

    Perturbs params in place (restoring each entry), so loss_fn must read
    the same params object on every call.
    """
    numeric = params.zeros_like()
    out_tensors = numeric.tensors()
    for name, tensor in params.tensors().items():
        flat = tensor.ravel()
        out = out_tensors[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = loss_fn()
            flat[idx] = orig - h
            minus = loss_fn()
            flat[idx] = orig
            out[idx] = (plus - minus) / (2.0 * h)
    return numeric


def max_relative_error(analytic, numeric, floor=1e-4):
    """Worst per-component relative error across all tensors.

    The floor keeps structurally-zero components (dead relu paths) from
    turning finite-difference noise into spurious relative error.
    """
    worst = 0.0
    num_tensors = numeric.tensors()
    for name, a in analytic.tensors().items():
        n = num_tensors[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
