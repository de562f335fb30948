"""Stratified train/test assignment over manifest records."""

from __future__ import annotations

import copy
import warnings
from collections import defaultdict

import numpy as np

from ..errors import ConfigError

# Per-structure (total, train, test) counts of the published hiPSC split.
PUBLISHED_SPLIT = {
    "alpha-actinin": (493, 462, 31),
    "alpha-tubulin": (1043, 1002, 41),
    "beta-actin": (542, 513, 29),
    "desmoplakin": (229, 219, 10),
    "fibrillarin": (988, 953, 35),
    "lamin B1": (785, 739, 46),
    "myosin IIB": (157, 149, 8),
    "Sec61 beta": (835, 784, 51),
    "TOM20": (771, 723, 48),
    "ZO1": (234, 229, 5),
}


def published_train_fractions() -> dict[str, float]:
    """Realized per-structure train fractions of the published split."""
    return {k: train / total for k, (total, train, _) in PUBLISHED_SPLIT.items()}


def split(records, train_fraction=0.95, seed: int = 0, key: str = "label"):
    """Assign ``split`` = "train" | "test" to a copy of every record.

    ``train_fraction`` is one fraction for all classes or a mapping from the
    class value (``record[key]``) to its own fraction.  Within each class
    ``round(fraction * n)`` items go to train, chosen by a seeded
    permutation, clamped so that a fraction strictly between 0 and 1 leaves
    at least one item on each side.  Classes with fewer than two items go
    entirely to train.
    """
    records = copy.deepcopy(list(records))
    by_class = defaultdict(list)
    for i, r in enumerate(records):
        if r.get(key) is None:
            raise ConfigError(f"record {r.get('id', i)} has no {key!r}")
        by_class[r[key]].append(i)

    rng = np.random.default_rng(seed)
    for cls in sorted(by_class, key=str):
        idx = by_class[cls]
        frac = train_fraction[cls] if isinstance(train_fraction, dict) else train_fraction
        if not 0 <= frac <= 1:
            raise ConfigError(f"train fraction {frac} outside [0, 1]")
        if len(idx) < 2:
            warnings.warn(f"class {cls!r} has {len(idx)} item(s); placing all in train")
            n_train = len(idx)
        else:
            n_train = int(round(frac * len(idx)))
            if 0 < frac < 1:
                # both sides keep at least one item
                n_train = min(max(n_train, 1), len(idx) - 1)
        order = rng.permutation(len(idx))
        for rank, j in enumerate(order):
            records[idx[j]]["split"] = "train" if rank < n_train else "test"
    return records
