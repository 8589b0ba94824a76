"""Planted-preference synthetic interaction generator.

Users come in groups with a matching block of preferred items. Target
interactions land inside the user's own block; auxiliary interactions
land there with probability ``aux_align`` (else anywhere), so the
auxiliary behavior carries tunable signal about target preferences. A
learner that exploits the auxiliary graph should rank the held-out
own-block items far above the random baseline.
"""

from __future__ import annotations

import numpy as np

from .dataio import InteractionDataset, parse_interactions

AUX_BEHAVIOR = "view"
TARGET_BEHAVIOR = "buy"


def planted_interactions(num_users: int = 60, num_items: int = 40,
                         num_groups: int = 4, target_degree: int = 6,
                         aux_degree: int = 12, aux_align: float = 0.8,
                         seed: int = 0):
    """Returns (users, items, behavior names) triples as parallel lists."""
    if num_users % num_groups or num_items % num_groups:
        raise ValueError("users and items must split evenly into groups")
    block = num_items // num_groups
    if target_degree > block:
        raise ValueError("target_degree cannot exceed the block size")
    rng = np.random.default_rng(seed)
    users, items, names = [], [], []

    def add(u, i, name):
        users.append(u)
        items.append(int(i))
        names.append(name)

    for u in range(num_users):
        group = u // (num_users // num_groups)
        own = np.arange(group * block, (group + 1) * block)
        for i in rng.choice(own, size=target_degree, replace=False):
            add(u, i, TARGET_BEHAVIOR)
        seen = set()
        for _ in range(aux_degree):
            if rng.random() < aux_align:
                i = int(rng.choice(own))
            else:
                i = int(rng.integers(num_items))
            if i not in seen:
                seen.add(i)
                add(u, i, AUX_BEHAVIOR)
    return users, items, names


def planted_lines(**kwargs) -> list[str]:
    """The same dataset as tab-separated ``user item behavior`` lines."""
    users, items, names = planted_interactions(**kwargs)
    return [f"{u}\t{i}\t{b}" for u, i, b in zip(users, items, names)]


def write_planted_tsv(path, **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write("# synthetic planted-preference interactions\n")
        for line in planted_lines(**kwargs):
            fh.write(line + "\n")


def planted_dataset(**kwargs) -> InteractionDataset:
    """Parsed (unsplit) dataset with the target behavior set."""
    return parse_interactions(planted_lines(**kwargs),
                              behavior_names=(AUX_BEHAVIOR, TARGET_BEHAVIOR),
                              target_behavior=TARGET_BEHAVIOR)
