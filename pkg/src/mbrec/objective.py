"""Joint objective (pairwise ranking + two-view contrastive + L2) with
exact reverse-mode gradients for every trainable tensor.

The forward cache produced by :func:`mbrec.model.forward` retains all
activations, so the backward pass here differentiates through fusion,
layer accumulation, the residual convolution stack (with frozen dropout
masks), and the low-rank propagation (whose factors are constants: they
are a deterministic function of the fixed graph).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .linalg import SvdFactors, low_rank_propagate
from .model import ForwardCache, ModelConfig, ModelParams, forward

COSINE_NORM_FLOOR = 1e-12


@dataclass
class TripletBatch:
    """(user, positive item, negative item) triples; positives are observed
    target-behavior train edges, negatives unobserved in any split."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class LossReport:
    l_r: float
    l_us: float
    l_vs: float
    l_reg: float
    total: float
    lambda_: float
    beta: float
    tau: float
    cosine_floor_hits: int = 0

    def step_line(self, step: int) -> dict:
        return {"step": step, "l_r": self.l_r, "l_us": self.l_us,
                "l_vs": self.l_vs, "l_reg": self.l_reg, "total": self.total}


def _softplus(x):
    return np.logaddexp(0.0, x)


def bpr(cache: ForwardCache, batch: TripletBatch):
    """Pairwise ranking loss on the final augmented-view embeddings.

    loss = sum over triples of -log sigmoid(score(u,i) - score(u,j)),
    computed in softplus form. Returns (loss, d_user, d_item) with dense
    gradient matrices for the augmented fused embeddings.
    """
    f_u = cache.user_vectors("svd")
    f_v = cache.item_vectors("svd")
    d_user = np.zeros_like(f_u)
    d_item = np.zeros_like(f_v)
    if len(batch) == 0:
        return 0.0, d_user, d_item
    u = f_u[batch.users]
    i = f_v[batch.pos_items]
    j = f_v[batch.neg_items]
    gap = np.einsum("bd,bd->b", u, i) - np.einsum("bd,bd->b", u, j)
    loss = float(_softplus(-gap).sum())
    t = np.exp(-np.abs(gap))  # d softplus(-gap)/d gap = -sigmoid(-gap), stably
    dgap = -np.where(gap >= 0, t / (1.0 + t), 1.0 / (1.0 + t))
    np.add.at(d_user, batch.users, dgap[:, None] * (i - j))
    np.add.at(d_item, batch.pos_items, dgap[:, None] * u)
    np.add.at(d_item, batch.neg_items, -dgap[:, None] * u)
    return loss, d_user, d_item


def _normalize_rows(mat):
    norms = np.linalg.norm(mat, axis=1)
    floored = int((norms < COSINE_NORM_FLOOR).sum())
    clamped = np.maximum(norms, COSINE_NORM_FLOOR)
    return mat / clamped[:, None], norms, clamped, floored


def _infonce_pair(f_mat, e_mat, tau, nodes, df_mat, de_mat, grad_scale):
    """One contrastive term: anchors f vs candidates e over ``nodes``.

    Cosine similarities over the node batch, temperature-scaled softmax
    with the matching node as the positive; log-sum-exp stabilized.
    Gradients (times grad_scale) are scattered into df_mat/de_mat when
    grad_scale is nonzero. Returns (loss, floor hits).
    """
    f = f_mat[nodes]
    e = e_mat[nodes]
    fh, _, nf, hits_f = _normalize_rows(f)
    eh, _, ne, hits_e = _normalize_rows(e)
    s = (fh @ eh.T) / tau
    smax = s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s - smax).sum(axis=1, keepdims=True)) + smax
    loss = float((logz[:, 0] - np.diag(s)).sum())
    if grad_scale != 0.0:
        p = np.exp(s - logz)
        p[np.diag_indices_from(p)] -= 1.0
        p *= grad_scale / tau
        dfh = p @ eh
        deh = p.T @ fh
        df = dfh / nf[:, None]
        df -= (((dfh * fh).sum(axis=1) / nf) * (nf > COSINE_NORM_FLOOR))[:, None] * fh
        de = deh / ne[:, None]
        de -= (((deh * eh).sum(axis=1) / ne) * (ne > COSINE_NORM_FLOOR))[:, None] * eh
        np.add.at(df_mat, nodes, df)
        np.add.at(de_mat, nodes, de)
    return loss, hits_f + hits_e


def infonce(cache: ForwardCache, tau: float, side: str,
            batch_node_ids: np.ndarray | None = None):
    """Layer-summed contrastive loss between the augmented and original
    fused views for one side.

    ``batch_node_ids=None`` uses every node (full-denominator mode, for
    small graphs and oracle tests). Returns (loss, d_svd per layer,
    d_orig per layer, floor hits); gradient lists hold full-size matrices
    indexed by layer 0..L.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    svd_fused, orig_fused = {
        "user": (cache.svd_user_layer_fused, cache.user_layer_fused),
        "item": (cache.svd_item_layer_fused, cache.item_layer_fused),
    }[side]
    num_nodes = svd_fused[0][1].shape[0]
    nodes = (np.arange(num_nodes) if batch_node_ids is None
             else np.asarray(batch_node_ids))
    d_svd = [np.zeros_like(svd_fused[l][1]) for l in range(len(svd_fused))]
    d_orig = [np.zeros_like(orig_fused[l][1]) for l in range(len(orig_fused))]
    loss, hits = 0.0, 0
    for layer in range(len(svd_fused)):
        term, h = _infonce_pair(svd_fused[layer][1], orig_fused[layer][1],
                                tau, nodes, d_svd[layer], d_orig[layer], 1.0)
        loss += term
        hits += h
    return loss, d_svd, d_orig, hits


def l2_penalty(params: ModelParams, beta: float):
    """beta * sum of squares over every tensor; gradient 2*beta*theta."""
    value = beta * sum(float((t ** 2).sum()) for t in params.tensors().values())
    grads = ModelParams.from_tensors(
        {name: 2.0 * beta * t for name, t in params.tensors().items()})
    return value, grads


def _fuse_backward(dout, fused, states, a, w, dw_acc, db_acc, da_acc,
                   dstate_targets):
    """Backprop one fusion relu(W (sum_k a_k*state_k) + b).

    Accumulates into dw_acc/db_acc/da_acc and adds each behavior's state
    gradient into dstate_targets[k] in place.
    """
    mixed, out = fused
    dz = dout * (out > 0)
    dw_acc += dz.T @ mixed
    db_acc += dz.sum(axis=0)
    dmixed = dz @ w
    for k, state in enumerate(states):
        da_acc[:, k] += (dmixed * state).sum(axis=1)
        dstate_targets[k] += a[:, k:k + 1] * dmixed


def total_loss_and_grads(graph, factors: list[SvdFactors],
                         params: ModelParams, config: ModelConfig,
                         batch: TripletBatch,
                         contrast_users: np.ndarray | None,
                         contrast_items: np.ndarray | None, *,
                         lam: float, beta: float, tau: float,
                         infonce_mode: str = "layerwise",
                         mode: str = "train",
                         rng: np.random.Generator | None = None,
                         edge_masks=None,
                         disable_cl: bool = False,
                         disable_sl: bool = False):
    """Full objective and its gradient with respect to every parameter.

    total = l_r + lam * (l_us + l_vs) + beta * ||params||^2, with the
    ranking term scored on the final augmented view and the contrastive
    terms pairing the two views (per layer, or final-only when
    infonce_mode="final"). Ablation flags zero a term and its gradients.
    Returns (LossReport, ModelParams-shaped gradients).
    """
    if infonce_mode not in ("layerwise", "final"):
        raise ValueError(f"unknown infonce_mode {infonce_mode!r}")
    cache = forward(graph, factors, params, config, mode=mode, rng=rng,
                    edge_masks=edge_masks)
    num_k, num_l = cache.num_behaviors, cache.num_layers
    num_users, dim = cache.user_fused[1].shape
    num_items = cache.item_fused[1].shape[0]

    d_user_fused = np.zeros((num_users, dim))
    d_item_fused = np.zeros((num_items, dim))
    d_svd_user_fused = np.zeros((num_users, dim))
    d_svd_item_fused = np.zeros((num_items, dim))
    d_user_layer = [np.zeros((num_users, dim)) for _ in range(num_l + 1)]
    d_item_layer = [np.zeros((num_items, dim)) for _ in range(num_l + 1)]
    d_svd_user_layer = [np.zeros((num_users, dim)) for _ in range(num_l + 1)]
    d_svd_item_layer = [np.zeros((num_items, dim)) for _ in range(num_l + 1)]

    if disable_sl:
        l_r = 0.0
    else:
        l_r, d_bpr_user, d_bpr_item = bpr(cache, batch)
        d_svd_user_fused += d_bpr_user
        d_svd_item_fused += d_bpr_item

    l_us = l_vs = 0.0
    floor_hits = 0
    if not disable_cl:
        users = (np.arange(num_users) if contrast_users is None
                 else np.asarray(contrast_users))
        items = (np.arange(num_items) if contrast_items is None
                 else np.asarray(contrast_items))
        if infonce_mode == "layerwise":
            for layer in range(num_l + 1):
                term, h = _infonce_pair(
                    cache.svd_user_layer_fused[layer][1],
                    cache.user_layer_fused[layer][1], tau, users,
                    d_svd_user_layer[layer], d_user_layer[layer], lam)
                l_us += term
                floor_hits += h
                term, h = _infonce_pair(
                    cache.svd_item_layer_fused[layer][1],
                    cache.item_layer_fused[layer][1], tau, items,
                    d_svd_item_layer[layer], d_item_layer[layer], lam)
                l_vs += term
                floor_hits += h
        else:
            l_us, h_u = _infonce_pair(
                cache.svd_user_fused[1], cache.user_fused[1], tau, users,
                d_svd_user_fused, d_user_fused, lam)
            l_vs, h_v = _infonce_pair(
                cache.svd_item_fused[1], cache.item_fused[1], tau, items,
                d_svd_item_fused, d_item_fused, lam)
            floor_hits += h_u + h_v

    l_reg, grads = l2_penalty(params, beta)
    for name, value in (("l_r", l_r), ("l_us", l_us), ("l_vs", l_vs),
                        ("l_reg", l_reg)):
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss term {name}")
    total = l_r + lam * (l_us + l_vs) + l_reg
    report = LossReport(l_r=l_r, l_us=l_us, l_vs=l_vs, l_reg=l_reg,
                        total=total, lambda_=lam, beta=beta, tau=tau,
                        cosine_floor_hits=floor_hits)

    # --- backward through fusion, accumulation, and the two branches ---
    d_user_states = [[np.zeros((num_users, dim)) for _ in range(num_l + 1)]
                     for _ in range(num_k)]
    d_item_states = [[np.zeros((num_items, dim)) for _ in range(num_l + 1)]
                     for _ in range(num_k)]
    d_svd_user_states = [[np.zeros((num_users, dim)) for _ in range(num_l + 1)]
                         for _ in range(num_k)]
    d_svd_item_states = [[np.zeros((num_items, dim)) for _ in range(num_l + 1)]
                         for _ in range(num_k)]
    dw_u = np.zeros_like(params.fuse_user_weight)
    dw_v = np.zeros_like(params.fuse_item_weight)
    db_u = np.zeros_like(params.fuse_user_bias)
    db_v = np.zeros_like(params.fuse_item_bias)
    da_u = np.zeros_like(cache.weights_user)
    da_v = np.zeros_like(cache.weights_item)
    a_u, a_v = cache.weights_user, cache.weights_item
    w_u, w_v = params.fuse_user_weight, params.fuse_item_weight

    def spread(temps, targets_per_k):
        for k in range(num_k):
            for lvl in targets_per_k[k]:
                lvl += temps[k]

    tmp = [np.zeros((num_users, dim)) for _ in range(num_k)]
    _fuse_backward(d_user_fused, cache.user_fused, cache.user_accum,
                   a_u, w_u, dw_u, db_u, da_u, tmp)
    spread(tmp, d_user_states)
    tmp = [np.zeros((num_users, dim)) for _ in range(num_k)]
    _fuse_backward(d_svd_user_fused, cache.svd_user_fused,
                   cache.svd_user_accum, a_u, w_u, dw_u, db_u, da_u, tmp)
    spread(tmp, d_svd_user_states)
    tmp = [np.zeros((num_items, dim)) for _ in range(num_k)]
    _fuse_backward(d_item_fused, cache.item_fused, cache.item_accum,
                   a_v, w_v, dw_v, db_v, da_v, tmp)
    spread(tmp, d_item_states)
    tmp = [np.zeros((num_items, dim)) for _ in range(num_k)]
    _fuse_backward(d_svd_item_fused, cache.svd_item_fused,
                   cache.svd_item_accum, a_v, w_v, dw_v, db_v, da_v, tmp)
    spread(tmp, d_svd_item_states)

    for layer in range(num_l + 1):
        _fuse_backward(d_user_layer[layer], cache.user_layer_fused[layer],
                       [cache.user_states[k][layer] for k in range(num_k)],
                       a_u, w_u, dw_u, db_u, da_u,
                       [d_user_states[k][layer] for k in range(num_k)])
        _fuse_backward(d_item_layer[layer], cache.item_layer_fused[layer],
                       [cache.item_states[k][layer] for k in range(num_k)],
                       a_v, w_v, dw_v, db_v, da_v,
                       [d_item_states[k][layer] for k in range(num_k)])
        _fuse_backward(d_svd_user_layer[layer],
                       cache.svd_user_layer_fused[layer],
                       [cache.svd_user_states[k][layer] for k in range(num_k)],
                       a_u, w_u, dw_u, db_u, da_u,
                       [d_svd_user_states[k][layer] for k in range(num_k)])
        _fuse_backward(d_svd_item_layer[layer],
                       cache.svd_item_layer_fused[layer],
                       [cache.svd_item_states[k][layer] for k in range(num_k)],
                       a_v, w_v, dw_v, db_v, da_v,
                       [d_svd_item_states[k][layer] for k in range(num_k)])

    for k in range(num_k):
        dx, dy = d_user_states[k], d_item_states[k]
        dgu, dgv = d_svd_user_states[k], d_svd_item_states[k]
        for layer in range(num_l, 0, -1):
            # augmented branch: states are previous state + relu activation
            dgu[layer - 1] += dgu[layer]
            dpre = dgu[layer] * (cache.svd_user_acts[k][layer - 1] > 0)
            dy[layer - 1] += low_rank_propagate(factors[k], dpre,
                                                transpose=True)
            dgv[layer - 1] += dgv[layer]
            dpre = dgv[layer] * (cache.svd_item_acts[k][layer - 1] > 0)
            dx[layer - 1] += low_rank_propagate(factors[k], dpre)
            # original branch through the (possibly dropped) adjacency
            adj = cache.dropped[k][layer - 1]
            dx[layer - 1] += dx[layer]
            dpre = dx[layer] * (cache.user_acts[k][layer - 1] > 0)
            dy[layer - 1] += adj.matmul_t(dpre)
            dy[layer - 1] += dy[layer]
            dpre = dy[layer] * (cache.item_acts[k][layer - 1] > 0)
            dx[layer - 1] += adj.matmul(dpre)
        # both branches share the layer-0 embedding table
        grads.user_embeds[k] += dx[0] + dgu[0]
        grads.item_embeds[k] += dy[0] + dgv[0]

    # softmax behavior weights: z[:, k] = w_k * count[:, k]
    for da, a, counts in ((da_u, a_u, graph.user_counts),
                          (da_v, a_v, graph.item_counts)):
        dz = a * (da - (da * a).sum(axis=1, keepdims=True))
        grads.behavior_w += (dz * counts).sum(axis=0)
    grads.fuse_user_weight += dw_u
    grads.fuse_item_weight += dw_v
    grads.fuse_user_bias += db_u
    grads.fuse_item_bias += db_v
    return report, grads
