"""Interaction log parsing, id compaction, and train/valid/test splitting.

Input format: UTF-8 tab-separated lines "user<TAB>item<TAB>behavior" with
'#' comment lines. Duplicate (user, item, behavior) triples collapse to a
single record. Ids are compacted to dense 0-based ranges; the original ids
are retained so the mapping stays a bijection.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataFormatError

logger = logging.getLogger(__name__)


class Role(enum.IntEnum):
    TRAIN = 0
    VALID = 1
    TEST = 2


@dataclass(frozen=True)
class SplitSpec:
    """Per-user holdout of the target behavior: one valid + one test record."""

    min_target_interactions: int = 5
    holdout_per_user: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.holdout_per_user not in (0, 2):
            raise ConfigError("holdout_per_user must be 0 or 2")
        if self.min_target_interactions < self.holdout_per_user + 1:
            raise ConfigError(
                "min_target_interactions must be >= holdout_per_user + 1")


@dataclass
class InteractionDataset:
    """Columnar interaction records with compacted ids.

    users/items/behaviors/roles are parallel arrays, one entry per unique
    (user, item, behavior) triple. user_raw_ids/item_raw_ids map compacted
    ids back to the original ones.
    """

    users: np.ndarray
    items: np.ndarray
    behaviors: np.ndarray
    roles: np.ndarray
    num_users: int
    num_items: int
    num_behaviors: int
    behavior_names: list[str]
    target_behavior: int = -1
    user_raw_ids: np.ndarray = field(default=None, repr=False)
    item_raw_ids: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.users)

    def behavior_id(self, name: str) -> int:
        try:
            return self.behavior_names.index(name)
        except ValueError:
            raise ConfigError(
                f"unknown behavior {name!r}; present: {self.behavior_names}")

    def with_target(self, name: str) -> "InteractionDataset":
        return replace(self, target_behavior=self.behavior_id(name))

    def drop_behavior(self, name: str) -> "InteractionDataset":
        """Remove one behavior's records; remaining behavior ids are
        recompacted and the target id remapped. The user/item universe
        is unchanged so metrics stay comparable."""
        k = self.behavior_id(name)
        if self.num_behaviors == 1:
            raise ConfigError("cannot drop the only behavior")
        if k == self.target_behavior:
            raise ConfigError("cannot drop the target behavior")
        keep = self.behaviors != k
        behaviors = self.behaviors[keep]
        behaviors = behaviors - (behaviors > k)
        target = self.target_behavior
        if target > k:
            target -= 1
        return replace(
            self, users=self.users[keep], items=self.items[keep],
            behaviors=behaviors, roles=self.roles[keep],
            num_behaviors=self.num_behaviors - 1,
            behavior_names=[n for n in self.behavior_names if n != name],
            target_behavior=target)

    def mask(self, role: Role | None = None, behavior: int | None = None):
        m = np.ones(len(self), dtype=bool)
        if role is not None:
            m &= self.roles == int(role)
        if behavior is not None:
            m &= self.behaviors == behavior
        return m

    def counts_per_behavior(self) -> dict[str, int]:
        return {name: int((self.behaviors == k).sum())
                for k, name in enumerate(self.behavior_names)}

    def split_sizes(self) -> dict[str, int]:
        return {role.name.lower(): int((self.roles == int(role)).sum())
                for role in Role}

    def manifest_dict(self) -> dict:
        return {
            "M": self.num_users,
            "N": self.num_items,
            "K": self.num_behaviors,
            "target_behavior": (
                self.behavior_names[self.target_behavior]
                if self.target_behavior >= 0 else None),
            "counts_per_behavior": self.counts_per_behavior(),
            "split_sizes": self.split_sizes(),
        }

    def fingerprint(self) -> str:
        """Content hash over records and metadata (timestamps excluded)."""
        h = hashlib.sha256()
        for arr in (self.users, self.items, self.behaviors, self.roles,
                    self.user_raw_ids, self.item_raw_ids):
            h.update(np.ascontiguousarray(arr).tobytes())
        meta = [self.num_users, self.num_items, self.num_behaviors,
                self.target_behavior, self.behavior_names]
        h.update(json.dumps(meta).encode())
        return h.hexdigest()

    def save(self, path) -> None:
        meta = {"num_users": self.num_users, "num_items": self.num_items,
                "num_behaviors": self.num_behaviors,
                "behavior_names": self.behavior_names,
                "target_behavior": self.target_behavior}
        np.savez(path, users=self.users, items=self.items,
                 behaviors=self.behaviors, roles=self.roles,
                 user_raw_ids=self.user_raw_ids,
                 item_raw_ids=self.item_raw_ids,
                 meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "InteractionDataset":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            return cls(users=z["users"], items=z["items"],
                       behaviors=z["behaviors"], roles=z["roles"],
                       num_users=meta["num_users"],
                       num_items=meta["num_items"],
                       num_behaviors=meta["num_behaviors"],
                       behavior_names=meta["behavior_names"],
                       target_behavior=meta["target_behavior"],
                       user_raw_ids=z["user_raw_ids"],
                       item_raw_ids=z["item_raw_ids"])


def parse_interactions(lines, behavior_names,
                       target_behavior: str | None = None) -> InteractionDataset:
    """Parse "user<TAB>item<TAB>behavior" lines into a dataset.

    ``lines`` is any iterable of strings (file object included). Behavior
    ids follow the order of ``behavior_names``, restricted to the names
    actually present; names with no interactions are dropped with a warning
    so the behavior count matches the data. All roles start as train.
    """
    name_to_slot = {name: k for k, name in enumerate(behavior_names)}
    if len(name_to_slot) != len(behavior_names):
        raise ConfigError("behavior_names contains duplicates")
    raw_users, raw_items, slots = [], [], []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(
                f"line {lineno}: expected 3 tab-separated fields, "
                f"got {len(parts)}")
        u_str, i_str, b_str = parts
        try:
            u, i = int(u_str), int(i_str)
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-integer id")
        if u < 0 or i < 0:
            raise DataFormatError(f"line {lineno}: negative id")
        if b_str not in name_to_slot:
            raise DataFormatError(
                f"line {lineno}: unknown behavior {b_str!r} "
                f"(expected one of {behavior_names})")
        raw_users.append(u)
        raw_items.append(i)
        slots.append(name_to_slot[b_str])
    if not raw_users:
        raise DataFormatError("empty input: no interaction records")

    raw_users = np.asarray(raw_users, dtype=np.int64)
    raw_items = np.asarray(raw_items, dtype=np.int64)
    slots = np.asarray(slots, dtype=np.int64)

    user_raw_ids, users = np.unique(raw_users, return_inverse=True)
    item_raw_ids, items = np.unique(raw_items, return_inverse=True)

    present = sorted(set(slots.tolist()))
    names = [behavior_names[s] for s in present]
    if len(names) < len(behavior_names):
        missing = [n for n in behavior_names if n not in names]
        logger.warning("behaviors with no interactions dropped: %s", missing)
    slot_to_id = {s: k for k, s in enumerate(present)}
    behaviors = np.asarray([slot_to_id[s] for s in slots], dtype=np.int64)

    # collapse duplicate (u, i, k) triples, keeping a sorted, stable order
    triples = np.stack([users, items, behaviors], axis=1)
    triples = np.unique(triples, axis=0)
    users, items, behaviors = triples[:, 0], triples[:, 1], triples[:, 2]

    ds = InteractionDataset(
        users=users, items=items, behaviors=behaviors,
        roles=np.zeros(len(users), dtype=np.int64),
        num_users=len(user_raw_ids), num_items=len(item_raw_ids),
        num_behaviors=len(names), behavior_names=names,
        user_raw_ids=user_raw_ids, item_raw_ids=item_raw_ids)
    if target_behavior is not None:
        ds = ds.with_target(target_behavior)
    return ds


def split(dataset: InteractionDataset, spec: SplitSpec) -> InteractionDataset:
    """Hold out one valid + one test target-behavior record per
    qualifying user (chosen uniformly at random, seeded).

    Users below ``min_target_interactions`` keep all records in train.
    Returns a new dataset; the record multiset is preserved exactly.
    """
    if dataset.target_behavior < 0:
        raise ConfigError("split requires dataset.target_behavior to be set")
    roles = np.zeros(len(dataset), dtype=np.int64)
    if spec.holdout_per_user == 0:
        return replace(dataset, roles=roles)
    rng = np.random.default_rng(spec.seed)
    target_idx = np.nonzero(dataset.behaviors == dataset.target_behavior)[0]
    order = np.argsort(dataset.users[target_idx], kind="stable")
    target_idx = target_idx[order]
    bounds = np.searchsorted(dataset.users[target_idx],
                             np.arange(dataset.num_users + 1))
    qualified = 0
    for u in range(dataset.num_users):  # ascending user order: deterministic
        idx = target_idx[bounds[u]:bounds[u + 1]]
        if len(idx) < spec.min_target_interactions:
            continue
        chosen = rng.choice(idx, size=2, replace=False)
        roles[chosen[0]] = int(Role.VALID)
        roles[chosen[1]] = int(Role.TEST)
        qualified += 1
    if qualified == 0:
        logger.warning("no user meets min_target_interactions=%d; "
                       "split degenerates to all-train",
                       spec.min_target_interactions)
    return replace(dataset, roles=roles)
