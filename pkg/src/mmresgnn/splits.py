"""Vehicle-wise data partitioning and few-shot subsets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooFewVehicles

DEFAULT_RATIOS = (0.70, 0.15, 0.15)
FEW_SHOT_RATIOS = (0.05, 0.10, 0.20, 0.50, 1.00)


@dataclass(frozen=True)
class SplitSpec:
    train_vehicle_ids: tuple[int, ...]
    val_vehicle_ids: tuple[int, ...]
    test_vehicle_ids: tuple[int, ...]
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    seed: int = 0

    def ids(self, split: str) -> tuple[int, ...]:
        return {"train": self.train_vehicle_ids, "val": self.val_vehicle_ids, "test": self.test_vehicle_ids}[split]

    def split_of(self, vehicle_id: int) -> str:
        for name in ("train", "val", "test"):
            if vehicle_id in self.ids(name):
                return name
        raise KeyError(vehicle_id)

    def to_dict(self) -> dict:
        return {
            "train": list(self.train_vehicle_ids),
            "val": list(self.val_vehicle_ids),
            "test": list(self.test_vehicle_ids),
            "ratios": list(self.ratios),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), tuple(d["ratios"]), d["seed"])


def vehicle_wise_split(vehicle_ids, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitSpec:
    """Shuffle ids by seed; floor-allocate val/test, remainder goes to train."""
    ids = sorted(set(int(v) for v in vehicle_ids))
    n = len(ids)
    if n < 3:
        raise TooFewVehicles(f"need >= 3 distinct vehicle ids, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_val = max(1, math.floor(ratios[1] * n))
    n_test = max(1, math.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    return SplitSpec(
        train_vehicle_ids=tuple(shuffled[:n_train]),
        val_vehicle_ids=tuple(shuffled[n_train : n_train + n_val]),
        test_vehicle_ids=tuple(shuffled[n_train + n_val :]),
        ratios=tuple(ratios),
        seed=seed,
    )


def few_shot_count(n_train: int, ratio: float) -> int:
    # round before ceil so 0.1*20 is not pushed to 3 by float error
    return max(1, math.ceil(round(ratio * n_train, 9)))


def few_shot_subset(train_vehicle_ids, ratio: float, seed: int = 0) -> tuple[int, ...]:
    """Prefix of one seeded shuffle, so subsets nest as the ratio grows."""
    ids = sorted(train_vehicle_ids)
    order = np.random.default_rng([seed, 7]).permutation(len(ids))
    return tuple(ids[i] for i in order[: few_shot_count(len(ids), ratio)])
