import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmresgnn.errors import LengthMismatch, TooFewVehicles, ZeroReference
from mmresgnn.metrics import compute_metrics
from mmresgnn.splits import SplitSpec, few_shot_count, few_shot_subset, vehicle_wise_split


def test_split_sizes():
    s = vehicle_wise_split(range(20), seed=0)
    assert (len(s.train_vehicle_ids), len(s.val_vehicle_ids), len(s.test_vehicle_ids)) == (14, 3, 3)
    s = vehicle_wise_split(range(10), seed=0)
    assert (len(s.train_vehicle_ids), len(s.val_vehicle_ids), len(s.test_vehicle_ids)) == (8, 1, 1)
    with pytest.raises(TooFewVehicles):
        vehicle_wise_split([1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 60), st.integers(0, 10**6))
def test_split_disjoint_exhaustive(n, seed):
    s = vehicle_wise_split(range(n), seed=seed)
    tr, va, te = map(set, (s.train_vehicle_ids, s.val_vehicle_ids, s.test_vehicle_ids))
    assert not (tr & va or tr & te or va & te)
    assert tr | va | te == set(range(n))
    assert SplitSpec.from_dict(s.to_dict()) == s
    assert s.split_of(next(iter(te))) == "test"


def test_few_shot():
    ids = tuple(range(100, 120))
    counts = [len(few_shot_subset(ids, r, 3)) for r in (0.05, 0.1, 0.2, 0.5, 1.0)]
    assert counts == [1, 2, 4, 10, 20]
    subsets = [few_shot_subset(ids, r, 3) for r in (0.05, 0.1, 0.2, 0.5, 1.0)]
    for a, b in zip(subsets, subsets[1:]):
        assert b[: len(a)] == a
    assert few_shot_count(3, 0.05) == 1
    assert few_shot_subset(ids, 0.5, 3) != few_shot_subset(ids, 0.5, 4)


def test_metrics_examples():
    m = compute_metrics([100.0], [110.0])
    assert (m.mae, m.nmse, m.mape) == (10.0, 0.01, 10.0)
    m = compute_metrics([100.0, 100.0], [90.0, 110.0])
    assert (m.mae, m.nmse, m.mape) == (10.0, 0.01, 10.0)
    m = compute_metrics([80.0, 120.0], [80.0, 120.0])
    assert (m.mae, m.nmse, m.mape) == (0.0, 0.0, 0.0)
    with pytest.raises(LengthMismatch):
        compute_metrics([1.0, 2.0], [1.0])
    with pytest.raises(ZeroReference):
        compute_metrics([0.0, 2.0], [1.0, 1.0])


def test_metrics_against_loop():
    rng = np.random.default_rng(0)
    y, yh = rng.uniform(60, 140, 37), rng.uniform(60, 140, 37)
    m = compute_metrics(y, yh)
    assert m.mae == pytest.approx(sum(abs(a - b) for a, b in zip(y, yh)) / 37, abs=1e-12)
    assert m.nmse == pytest.approx(sum((a - b) ** 2 for a, b in zip(y, yh)) / sum(a * a for a in y), abs=1e-12)
