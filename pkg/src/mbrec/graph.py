"""Per-behavior normalized adjacency matrices built from the train split.

Symmetric degree normalization: every edge (u, v) of behavior k carries
1/sqrt(d_u * d_v) with d_* the behavior-k train degrees. Held-out (user,
item) target pairs are excluded from every behavior's matrix, auxiliary
behaviors included, so no held-out preference signal leaks into training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataio import InteractionDataset, Role
from .sparse import SparseAdjacency


@dataclass
class BehaviorGraph:
    """K normalized adjacency matrices plus per-node behavior edge counts."""

    adjacency: list[SparseAdjacency]  # K matrices, each M x N
    user_counts: np.ndarray  # M x K, train edges per user per behavior
    item_counts: np.ndarray  # N x K

    @property
    def num_behaviors(self) -> int:
        return len(self.adjacency)

    @property
    def num_users(self) -> int:
        return self.adjacency[0].num_rows

    @property
    def num_items(self) -> int:
        return self.adjacency[0].num_cols

    def save(self, path) -> None:
        arrays = {"user_counts": self.user_counts,
                  "item_counts": self.item_counts,
                  "meta": np.frombuffer(json.dumps(
                      {"K": self.num_behaviors, "M": self.num_users,
                       "N": self.num_items}).encode(), dtype=np.uint8)}
        for k, adj in enumerate(self.adjacency):
            arrays[f"indptr_{k}"] = adj.indptr
            arrays[f"indices_{k}"] = adj.indices
            arrays[f"data_{k}"] = adj.data
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "BehaviorGraph":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            adjacency = [
                SparseAdjacency(meta["M"], meta["N"], z[f"indptr_{k}"],
                                z[f"indices_{k}"], z[f"data_{k}"])
                for k in range(meta["K"])]
            return cls(adjacency=adjacency, user_counts=z["user_counts"],
                       item_counts=z["item_counts"])


def build_graph(dataset: InteractionDataset) -> BehaviorGraph:
    """Build the K normalized matrices from role=train records.

    Zero-degree users/items get all-zero rows/columns, never NaN. Empty
    behaviors are permitted.
    """
    m, n, num_k = dataset.num_users, dataset.num_items, dataset.num_behaviors
    train = dataset.roles == int(Role.TRAIN)
    keep = train
    if not train.all():
        pair_keys = dataset.users * n + dataset.items
        heldout_keys = np.unique(pair_keys[~train])
        keep = train & ~np.isin(pair_keys, heldout_keys)

    adjacency = []
    user_counts = np.zeros((m, num_k), dtype=np.int64)
    item_counts = np.zeros((n, num_k), dtype=np.int64)
    for k in range(num_k):
        sel = keep & (dataset.behaviors == k)
        rows, cols = dataset.users[sel], dataset.items[sel]
        d_u = np.bincount(rows, minlength=m)
        d_v = np.bincount(cols, minlength=n)
        user_counts[:, k] = d_u
        item_counts[:, k] = d_v
        vals = 1.0 / np.sqrt(d_u[rows] * d_v[cols]) if len(rows) else \
            np.zeros(0)
        adjacency.append(SparseAdjacency.from_coo(rows, cols, vals, m, n))
    return BehaviorGraph(adjacency=adjacency, user_counts=user_counts,
                         item_counts=item_counts)


def normalized_row(graph: BehaviorGraph, behavior_id: int, user_id: int):
    """Row ``user_id`` of behavior ``behavior_id``'s normalized matrix,
    as (column ids, values) views into the CSR arrays."""
    if not 0 <= behavior_id < graph.num_behaviors:
        raise IndexError(f"behavior {behavior_id} out of range")
    return graph.adjacency[behavior_id].row(user_id)
