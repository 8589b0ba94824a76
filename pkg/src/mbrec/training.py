"""Triplet sampling, Adam optimization, and the epoch loop.

The loop trains on uniformly sampled (user, positive, negative) triples,
evaluates validation Recall@10 after every epoch, keeps the best
checkpoint, and stops once the metric fails to improve for `patience`
consecutive epochs. All randomness flows from one seeded generator, so a
fixed (config, seed) pair reproduces runs bit for bit.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import InteractionDataset, Role
from .errors import ConfigError, NumericalError
from .evaluation import evaluate_split
from .graph import BehaviorGraph
from .linalg import SvdFactors
from .model import ModelConfig, ModelParams, forward, init_params
from .objective import TripletBatch, total_loss_and_grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2048
    lambda_: float = 0.2
    beta: float = 0.1
    tau: float = 0.2
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    infonce_batch_nodes: int = 2048
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    infonce_mode: str = "layerwise"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.tau <= 0 or self.adam_eps <= 0:
            raise ConfigError("learning_rate, tau, adam_eps must be positive")
        if self.patience < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, epochs, batch_size must be >= 1")
        if self.infonce_batch_nodes < 1:
            raise ConfigError("infonce_batch_nodes must be >= 1")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.infonce_mode not in ("layerwise", "final"):
            raise ConfigError("infonce_mode must be 'layerwise' or 'final'")
        if self.lambda_ < 0 or self.beta < 0:
            raise ConfigError("lambda and beta must be nonnegative")


@dataclass
class OptimizerState:
    first_moment: ModelParams
    second_moment: ModelParams
    step_count: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptimizerState":
        return cls(first_moment=params.zeros_like(),
                   second_moment=params.zeros_like(), step_count=0)


class TripletSampler:
    """Uniform positive sampling with rejection-resampled negatives.

    Negatives are redrawn until (u, j) is not a target-behavior edge in
    any split; after num_items rounds the still-colliding triples are
    dropped and counted (covers users interacting with everything).
    """

    def __init__(self, dataset: InteractionDataset):
        if dataset.target_behavior < 0:
            raise ConfigError("dataset has no target behavior set")
        target = dataset.behaviors == dataset.target_behavior
        train = dataset.roles == int(Role.TRAIN)
        pos = target & train
        if not pos.any():
            raise ConfigError("no target-behavior training edges to sample")
        self.users = dataset.users[pos]
        self.items = dataset.items[pos]
        self.num_items = dataset.num_items
        self._observed = np.unique(
            dataset.users[target].astype(np.int64) * self.num_items
            + dataset.items[target])
        self.dropped = 0

    def __len__(self) -> int:
        return len(self.users)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TripletBatch:
        idx = rng.integers(len(self.users), size=batch_size)
        users = self.users[idx]
        pos_items = self.items[idx]
        neg_items = rng.integers(self.num_items, size=batch_size)
        keys = users.astype(np.int64) * self.num_items
        bad = np.isin(keys + neg_items, self._observed)
        rounds = 0
        while bad.any() and rounds < self.num_items:
            neg_items[bad] = rng.integers(self.num_items, size=int(bad.sum()))
            bad = np.isin(keys + neg_items, self._observed)
            rounds += 1
        if bad.any():
            self.dropped += int(bad.sum())
            users, pos_items, neg_items = (users[~bad], pos_items[~bad],
                                           neg_items[~bad])
        return TripletBatch(users=users, pos_items=pos_items,
                            neg_items=neg_items)


def sample_triplets(dataset: InteractionDataset, batch_size: int,
                    rng: np.random.Generator) -> TripletBatch:
    return TripletSampler(dataset).sample(batch_size, rng)


def adam_step(params: ModelParams, grads: ModelParams,
              state: OptimizerState, config: TrainConfig):
    """One bias-corrected Adam update, in place. Aborts on non-finite
    gradients, naming the offending tensor."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = config.adam_beta1, config.adam_beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    param_t = params.tensors()
    grad_t = grads.tensors()
    m_t = state.first_moment.tensors()
    v_t = state.second_moment.tensors()
    for name, g in grad_t.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in {name}")
        m, v = m_t[name], v_t[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        param_t[name] -= (config.learning_rate * (m / corr1)
                          / (np.sqrt(v / corr2) + config.adam_eps))
    return params, state


@dataclass
class TrainResult:
    best_params: ModelParams
    optimizer_state: OptimizerState
    history: list
    best_epoch: int
    best_metric: float
    epochs_run: int
    stopped_early: bool
    diverged: bool
    divergence_error: str = ""
    dropped_negatives: int = 0
    rng_state: dict = field(default_factory=dict)


def _contrast_nodes(batch: TripletBatch, cap: int, rng: np.random.Generator):
    users = np.unique(batch.users)
    items = np.unique(np.concatenate([batch.pos_items, batch.neg_items]))
    if len(users) > cap:
        users = rng.choice(users, size=cap, replace=False)
    if len(items) > cap:
        items = rng.choice(items, size=cap, replace=False)
    return users, items


def train_loop(dataset: InteractionDataset, graph: BehaviorGraph,
               factors: list[SvdFactors], config: TrainConfig,
               model_config: ModelConfig, *, disable_cl: bool = False,
               disable_sl: bool = False, history_sink=None, step_sink=None,
               objective_fn=total_loss_and_grads) -> TrainResult:
    """Run the full optimization and return the best-validation state.

    On divergence (non-finite loss or gradient) the loop stops and the
    result carries the last good checkpoint with ``diverged`` set; sinks
    receive each history/step record as a dict as it is produced.
    """
    params = init_params(model_config, graph.num_users, graph.num_items,
                         graph.num_behaviors)
    state = OptimizerState.zeros(params)
    sampler = TripletSampler(dataset)
    rng = np.random.default_rng(config.seed)
    num_batches = max(1, -(-len(sampler) // config.batch_size))

    best_params = params.copy()
    best_metric = -np.inf
    best_epoch = 0
    bad_epochs = 0
    history: list = []
    stopped_early = diverged = False
    divergence_error = ""
    step = epoch = 0
    for epoch in range(1, config.epochs + 1):
        tick = time.perf_counter()
        sums = {"total": 0.0, "l_r": 0.0, "l_us": 0.0, "l_vs": 0.0}
        try:
            for _ in range(num_batches):
                batch = sampler.sample(config.batch_size, rng)
                users, items = _contrast_nodes(
                    batch, config.infonce_batch_nodes, rng)
                report, grads = objective_fn(
                    graph, factors, params, model_config, batch, users,
                    items, lam=config.lambda_, beta=config.beta,
                    tau=config.tau, infonce_mode=config.infonce_mode,
                    mode="train", rng=rng, disable_cl=disable_cl,
                    disable_sl=disable_sl)
                adam_step(params, grads, state, config)
                step += 1
                if step_sink is not None:
                    step_sink(report.step_line(step))
                sums["total"] += report.total
                sums["l_r"] += report.l_r
                sums["l_us"] += report.l_us
                sums["l_vs"] += report.l_vs
        except NumericalError as exc:
            diverged = True
            divergence_error = str(exc)
            break

        cache = forward(graph, factors, params, model_config, mode="eval")
        val = evaluate_split(cache, dataset, split="valid", k_values=(10,))
        entry = {
            "epoch": epoch,
            "mean_total": sums["total"] / num_batches,
            "mean_l_r": sums["l_r"] / num_batches,
            "mean_l_us": sums["l_us"] / num_batches,
            "mean_l_vs": sums["l_vs"] / num_batches,
            "val_recall@10": val.recall_at[10],
            "val_ndcg@10": val.ndcg_at[10],
            "elapsed_ms": (time.perf_counter() - tick) * 1000.0,
        }
        history.append(entry)
        if history_sink is not None:
            history_sink(entry)

        if val.recall_at[10] > best_metric:
            best_metric = val.recall_at[10]
            best_params = params.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped_early = True
                break

    return TrainResult(best_params=best_params, optimizer_state=state,
                       history=history, best_epoch=best_epoch,
                       best_metric=best_metric, epochs_run=epoch,
                       stopped_early=stopped_early, diverged=diverged,
                       divergence_error=divergence_error,
                       dropped_negatives=sampler.dropped,
                       rng_state=rng.bit_generator.state)


def train_config_to_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    out["lambda"] = out.pop("lambda_")
    return out


def train_config_from_dict(raw: dict) -> TrainConfig:
    data = dict(raw)
    if "lambda" in data:
        data["lambda_"] = data.pop("lambda")
    valid = set(TrainConfig.__dataclass_fields__)
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    return TrainConfig(**data)


def save_checkpoint(path, params: ModelParams, state: OptimizerState,
                    config: TrainConfig, model_config: ModelConfig,
                    rng_state: dict | None = None) -> None:
    """Parameters + optimizer moments + configs + rng state, written
    atomically (temp file then rename)."""
    arrays = {}
    for name, t in params.tensors().items():
        arrays[f"param_{name}"] = t
    for name, t in state.first_moment.tensors().items():
        arrays[f"m_{name}"] = t
    for name, t in state.second_moment.tensors().items():
        arrays[f"v_{name}"] = t
    meta = {
        "step_count": state.step_count,
        "train_config": train_config_to_dict(config),
        "model_config": asdict(model_config),
        "rng_state": rng_state or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (params, optimizer state, TrainConfig, ModelConfig,
    rng state dict). Raises ConfigError on malformed content."""
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            names = [key[len("param_"):] for key in z.files
                     if key.startswith("param_")]
            params = ModelParams.from_tensors(
                {n: z[f"param_{n}"] for n in names})
            state = OptimizerState(
                first_moment=ModelParams.from_tensors(
                    {n: z[f"m_{n}"] for n in names}),
                second_moment=ModelParams.from_tensors(
                    {n: z[f"v_{n}"] for n in names}),
                step_count=int(meta["step_count"]))
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable checkpoint {path}: {exc}") from exc
    config = train_config_from_dict(meta["train_config"])
    model_config = ModelConfig(**meta["model_config"])
    return params, state, config, model_config, meta.get("rng_state", {})
