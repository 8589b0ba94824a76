"""Trainable parameters and the full forward pass.

Per behavior k the original branch runs a residual graph convolution:

    act_u(l) = relu(drop(adj_k) @ item_state(l-1))
    act_v(l) = relu(drop(adj_k).T @ user_state(l-1))
    state(l) = state(l-1) + act(l)

States are accumulated over layers 0..L and fused across behaviors with
softmax behavior weights and a shared linear+relu transform.

The augmented branch replays the same recursion through the rank-q
reconstruction of adj_k (no edge dropout), consuming the ORIGINAL branch's
previous-layer states. Its layer-0 state is the shared embedding table, so
when the truncation is lossless and dropout is off the two branches are
identical layer by layer and the fused outputs coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import BehaviorGraph
from .linalg import SvdFactors, low_rank_propagate, rsvd
from .sparse import SparseAdjacency


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    num_layers: int = 2
    rank: int = 5
    edge_dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_layers < 1 or self.rank < 1:
            raise ConfigError("embed_dim, num_layers, rank must be >= 1")
        if not 0.0 <= self.edge_dropout_rate < 1.0:
            raise ConfigError("edge_dropout_rate must be in [0, 1)")


@dataclass
class ModelParams:
    """All trainables: per-behavior embedding tables, behavior weight
    logits, and the shared fusion transforms."""

    user_embeds: list[np.ndarray]  # K tables, M x d
    item_embeds: list[np.ndarray]  # K tables, N x d
    behavior_w: np.ndarray  # K
    fuse_user_weight: np.ndarray  # d x d
    fuse_item_weight: np.ndarray  # d x d
    fuse_user_bias: np.ndarray  # d
    fuse_item_bias: np.ndarray  # d

    @property
    def num_behaviors(self) -> int:
        return len(self.user_embeds)

    def tensors(self) -> dict[str, np.ndarray]:
        """Named view of every tensor, in a stable order."""
        out = {}
        for k, t in enumerate(self.user_embeds):
            out[f"user_embeds_{k}"] = t
        for k, t in enumerate(self.item_embeds):
            out[f"item_embeds_{k}"] = t
        out["behavior_w"] = self.behavior_w
        out["fuse_user_weight"] = self.fuse_user_weight
        out["fuse_item_weight"] = self.fuse_item_weight
        out["fuse_user_bias"] = self.fuse_user_bias
        out["fuse_item_bias"] = self.fuse_item_bias
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "ModelParams":
        num_k = sum(1 for name in tensors if name.startswith("user_embeds_"))
        return cls(
            user_embeds=[tensors[f"user_embeds_{k}"] for k in range(num_k)],
            item_embeds=[tensors[f"item_embeds_{k}"] for k in range(num_k)],
            behavior_w=tensors["behavior_w"],
            fuse_user_weight=tensors["fuse_user_weight"],
            fuse_item_weight=tensors["fuse_item_weight"],
            fuse_user_bias=tensors["fuse_user_bias"],
            fuse_item_bias=tensors["fuse_item_bias"])

    def copy(self) -> "ModelParams":
        return ModelParams.from_tensors(
            {k: v.copy() for k, v in self.tensors().items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams.from_tensors(
            {k: np.zeros_like(v) for k, v in self.tensors().items()})


def init_params(config: ModelConfig, num_users: int, num_items: int,
                num_behaviors: int) -> ModelParams:
    """Xavier-uniform tables and fusion weights, zero biases, unit
    behavior logits. Deterministic for a fixed config seed."""
    if min(num_users, num_items, num_behaviors) < 1:
        raise ConfigError("dimensions must be positive")
    rng = np.random.default_rng(config.seed)
    d = config.embed_dim

    def xavier(rows, cols):
        s = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-s, s, size=(rows, cols))

    return ModelParams(
        user_embeds=[xavier(num_users, d) for _ in range(num_behaviors)],
        item_embeds=[xavier(num_items, d) for _ in range(num_behaviors)],
        behavior_w=np.ones(num_behaviors),
        fuse_user_weight=xavier(d, d),
        fuse_item_weight=xavier(d, d),
        fuse_user_bias=np.zeros(d),
        fuse_item_bias=np.zeros(d))


def compute_factors(graph: BehaviorGraph, config: ModelConfig,
                    oversampling: int = 5,
                    power_iters: int = 2) -> list[SvdFactors]:
    """Rank-q factors of every behavior's normalized adjacency.

    The graph is static, so these are computed once per run; they are
    constants under differentiation.
    """
    return [rsvd(adj, config.rank, oversampling=oversampling,
                 power_iters=power_iters,
                 seed=np.random.SeedSequence((config.seed, k)))
            for k, adj in enumerate(graph.adjacency)]


def behavior_weights(graph: BehaviorGraph, params: ModelParams,
                     side: str) -> np.ndarray:
    """Row-wise softmax of w_k * count_k, overflow-safe. Rows sum to 1."""
    counts = {"user": graph.user_counts, "item": graph.item_counts}[side]
    logits = counts.astype(np.float64) * params.behavior_w[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def forward_layer(adjacency: SparseAdjacency, user_state: np.ndarray,
                  item_state: np.ndarray):
    """One residual convolution layer on an (already dropped) adjacency.

    Returns (next user state, next item state, user activation, item
    activation); activations are the pre-residual relu outputs.
    """
    user_act = np.maximum(adjacency.matmul(item_state), 0.0)
    item_act = np.maximum(adjacency.matmul_t(user_state), 0.0)
    return user_state + user_act, item_state + item_act, user_act, item_act


def accumulate_layers(states: list[np.ndarray]) -> np.ndarray:
    """Sum of the layer states 0..L for one behavior and one side."""
    return np.sum(states, axis=0)


def fuse(states: list[np.ndarray], weights: np.ndarray, w: np.ndarray,
         b: np.ndarray):
    """relu(W @ (sum_k a_k * state_k) + b) row-wise.

    Returns (weighted input sum, fused output); the input sum is cached
    for the backward pass.
    """
    if len(states) != weights.shape[1]:
        raise ValueError("one state matrix per behavior column expected")
    mixed = np.zeros_like(states[0])
    for k, state in enumerate(states):
        mixed += weights[:, k:k + 1] * state
    return mixed, np.maximum(mixed @ w.T + b, 0.0)


def svd_view(factors: SvdFactors, user_states: list[np.ndarray],
             item_states: list[np.ndarray]):
    """Replay the residual recursion through the rank-q reconstruction.

    Consumes the original branch's previous-layer states; layer 0 reuses
    the embedding table. No edge dropout on this branch. Returns
    (user states, item states, user activations, item activations).
    """
    if factors is None:
        raise ValueError("svd factors missing for this behavior")
    num_layers = len(user_states) - 1
    g_user_states = [user_states[0]]
    g_item_states = [item_states[0]]
    g_user_acts, g_item_acts = [], []
    for layer in range(1, num_layers + 1):
        ua = np.maximum(
            low_rank_propagate(factors, item_states[layer - 1]), 0.0)
        va = np.maximum(
            low_rank_propagate(factors, user_states[layer - 1],
                               transpose=True), 0.0)
        g_user_acts.append(ua)
        g_item_acts.append(va)
        g_user_states.append(g_user_states[-1] + ua)
        g_item_states.append(g_item_states[-1] + va)
    return g_user_states, g_item_states, g_user_acts, g_item_acts


@dataclass
class ForwardCache:
    """Every activation needed for gradients and contrastive pairing.

    Indexing: *_states[k][l] for l in 0..L (layer states), *_acts[k][l-1]
    for l in 1..L (pre-residual activations). ``svd_*`` mirrors the same
    structure for the augmented branch. ``dropped`` holds the adjacency
    actually used per behavior and layer (with dropout applied in train
    mode), and layer/final fusions cache (weighted input, output) pairs.
    """

    mode: str
    user_states: list[list[np.ndarray]]
    item_states: list[list[np.ndarray]]
    user_acts: list[list[np.ndarray]]
    item_acts: list[list[np.ndarray]]
    svd_user_states: list[list[np.ndarray]]
    svd_item_states: list[list[np.ndarray]]
    svd_user_acts: list[list[np.ndarray]]
    svd_item_acts: list[list[np.ndarray]]
    user_accum: list[np.ndarray]
    item_accum: list[np.ndarray]
    svd_user_accum: list[np.ndarray]
    svd_item_accum: list[np.ndarray]
    weights_user: np.ndarray  # M x K behavior weights
    weights_item: np.ndarray  # N x K
    dropped: list[list[SparseAdjacency]]
    # fusion results: (weighted input, relu output)
    user_layer_fused: list[tuple]
    item_layer_fused: list[tuple]
    svd_user_layer_fused: list[tuple]
    svd_item_layer_fused: list[tuple]
    user_fused: tuple = None
    item_fused: tuple = None
    svd_user_fused: tuple = None
    svd_item_fused: tuple = None

    @property
    def num_layers(self) -> int:
        return len(self.user_states[0]) - 1

    @property
    def num_behaviors(self) -> int:
        return len(self.user_states)

    def user_vectors(self, view: str) -> np.ndarray:
        """Final fused user embeddings; view is 'svd' or 'orig'."""
        return (self.svd_user_fused if view == "svd" else self.user_fused)[1]

    def item_vectors(self, view: str) -> np.ndarray:
        return (self.svd_item_fused if view == "svd" else self.item_fused)[1]


def sample_edge_masks(graph: BehaviorGraph, config: ModelConfig,
                      rng: np.random.Generator) -> list[list[np.ndarray]]:
    """Per-(behavior, layer) boolean keep masks over adjacency nonzeros."""
    rate = config.edge_dropout_rate
    return [[rng.random(adj.nnz) >= rate for _ in range(config.num_layers)]
            for adj in graph.adjacency]


def forward(graph: BehaviorGraph, factors: list[SvdFactors],
            params: ModelParams, config: ModelConfig, mode: str = "eval",
            rng: np.random.Generator | None = None,
            edge_masks: list[list[np.ndarray]] | None = None) -> ForwardCache:
    """Full forward pass; deterministic in eval mode.

    Train mode applies inverted edge dropout (survivors rescaled by
    1/(1-rate)) using ``edge_masks`` if given, else masks sampled from
    ``rng``. Eval mode uses the raw adjacency.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    num_k, num_l = graph.num_behaviors, config.num_layers
    if len(factors) != num_k:
        raise ValueError("one factor set per behavior required")
    rate = config.edge_dropout_rate
    use_dropout = mode == "train" and rate > 0.0
    if use_dropout and edge_masks is None:
        if rng is None:
            raise ValueError("train-mode dropout needs rng or edge_masks")
        edge_masks = sample_edge_masks(graph, config, rng)

    cache = ForwardCache(
        mode=mode, user_states=[], item_states=[], user_acts=[],
        item_acts=[], svd_user_states=[], svd_item_states=[],
        svd_user_acts=[], svd_item_acts=[], user_accum=[], item_accum=[],
        svd_user_accum=[], svd_item_accum=[],
        weights_user=behavior_weights(graph, params, "user"),
        weights_item=behavior_weights(graph, params, "item"),
        dropped=[], user_layer_fused=[], item_layer_fused=[],
        svd_user_layer_fused=[], svd_item_layer_fused=[])

    for k in range(num_k):
        adj = graph.adjacency[k]
        user_states = [params.user_embeds[k]]
        item_states = [params.item_embeds[k]]
        user_acts, item_acts, dropped_k = [], [], []
        for layer in range(num_l):
            if use_dropout:
                eff = adj.with_data(
                    adj.data * edge_masks[k][layer] / (1.0 - rate))
            else:
                eff = adj
            dropped_k.append(eff)
            u_next, v_next, u_act, v_act = forward_layer(
                eff, user_states[-1], item_states[-1])
            user_states.append(u_next)
            item_states.append(v_next)
            user_acts.append(u_act)
            item_acts.append(v_act)
        g_us, g_vs, g_ua, g_va = svd_view(factors[k], user_states,
                                          item_states)
        cache.user_states.append(user_states)
        cache.item_states.append(item_states)
        cache.user_acts.append(user_acts)
        cache.item_acts.append(item_acts)
        cache.svd_user_states.append(g_us)
        cache.svd_item_states.append(g_vs)
        cache.svd_user_acts.append(g_ua)
        cache.svd_item_acts.append(g_va)
        cache.user_accum.append(accumulate_layers(user_states))
        cache.item_accum.append(accumulate_layers(item_states))
        cache.svd_user_accum.append(accumulate_layers(g_us))
        cache.svd_item_accum.append(accumulate_layers(g_vs))
        cache.dropped.append(dropped_k)

    w_u, b_u = params.fuse_user_weight, params.fuse_user_bias
    w_v, b_v = params.fuse_item_weight, params.fuse_item_bias
    a_u, a_v = cache.weights_user, cache.weights_item
    for layer in range(num_l + 1):
        cache.user_layer_fused.append(fuse(
            [cache.user_states[k][layer] for k in range(num_k)], a_u, w_u, b_u))
        cache.item_layer_fused.append(fuse(
            [cache.item_states[k][layer] for k in range(num_k)], a_v, w_v, b_v))
        cache.svd_user_layer_fused.append(fuse(
            [cache.svd_user_states[k][layer] for k in range(num_k)],
            a_u, w_u, b_u))
        cache.svd_item_layer_fused.append(fuse(
            [cache.svd_item_states[k][layer] for k in range(num_k)],
            a_v, w_v, b_v))
    cache.user_fused = fuse(cache.user_accum, a_u, w_u, b_u)
    cache.item_fused = fuse(cache.item_accum, a_v, w_v, b_v)
    cache.svd_user_fused = fuse(cache.svd_user_accum, a_u, w_u, b_u)
    cache.svd_item_fused = fuse(cache.svd_item_accum, a_v, w_v, b_v)
    return cache


def save_params(path, params: ModelParams) -> None:
    np.savez(path, **params.tensors())


def load_params(path) -> ModelParams:
    with np.load(path) as z:
        return ModelParams.from_tensors({k: z[k] for k in z.files})
