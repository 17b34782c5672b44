from dataclasses import replace

import numpy as np
import pytest
import torch

from mmresgnn.baselines import BaselineModel
from mmresgnn.errors import BaselineMismatch, EmptySplit, NonFiniteLoss
from mmresgnn.metrics import compute_metrics
from mmresgnn.model import build_model
from mmresgnn.train import Checkpoint, TrainConfig, evaluate, fit_model, predict_db, train

from conftest import small_config

FAST = TrainConfig(epochs=4, batch_size=8, learning_rate=2e-3)


@pytest.fixture(scope="module")
def trained(small_dataset):
    return train(small_dataset, small_config(small_dataset), FAST)


def test_history_and_best_epoch(trained):
    ckpt, history = trained
    assert [h["epoch"] for h in history] == list(range(4))
    assert sum(h["best"] for h in history) == 1
    best = next(h for h in history if h["best"])
    assert best["val_mae"] == min(h["val_mae"] for h in history)
    assert history[0]["train_loss"] > best["train_loss"]
    assert all(np.isfinite(h["train_loss"]) for h in history)


def test_training_is_deterministic(small_dataset, trained):
    ckpt, history = trained
    again, history2 = train(small_dataset, small_config(small_dataset), FAST)
    assert history == history2
    for k, v in ckpt.state_dict.items():
        assert torch.equal(v, again.state_dict[k])


def test_evaluate_matches_dumped_predictions(small_dataset, trained):
    ckpt, _ = trained
    rep = evaluate(ckpt, small_dataset, "test")
    graphs, images = small_dataset.subset("test")
    y_hat = predict_db(ckpt.build(), graphs, images, ckpt.baseline)
    y = np.concatenate([g.pl_raw for g in graphs])
    ref = compute_metrics(y, y_hat, "A0", "test")
    assert rep == ref
    assert rep.n == len(graphs) * 20


def test_checkpoint_roundtrip(small_dataset, trained, tmp_path):
    ckpt, _ = trained
    path = tmp_path / "a0.pt"
    ckpt.save(path)
    loaded = Checkpoint.load(path)
    assert loaded.model_config == ckpt.model_config and loaded.baseline_id == ckpt.baseline_id
    assert evaluate(loaded, small_dataset, "test") == evaluate(ckpt, small_dataset, "test")


def test_baseline_mismatch(small_dataset, trained):
    ckpt, _ = trained
    other = BaselineModel((1.0, 2.0, 3.0, 4.0, 5.0), 0.0, 1.0, 0.0, 1)
    with pytest.raises(BaselineMismatch):
        evaluate(ckpt, small_dataset.with_baseline(other), "test")


def test_empty_train_subset(small_dataset):
    with pytest.raises(EmptySplit):
        train(small_dataset, small_config(small_dataset), FAST, train_vehicle_ids=[10_000])


def test_non_finite_loss(small_dataset):
    model = build_model(small_config(small_dataset))
    graphs = [replace(g, y_target=np.full(g.K, np.nan)) for g in small_dataset.graphs[:4]]
    with pytest.raises(NonFiniteLoss):
        fit_model(model, graphs, small_dataset.images[:4], [], [], small_dataset.baseline, FAST)


def test_head_only_leaves_backbone_untouched(small_dataset, trained):
    ckpt, _ = trained
    tuned, _ = train(small_dataset, ckpt.model_config, replace(FAST, epochs=2), init=ckpt, head_only=True)
    model = build_model(ckpt.model_config)
    head = {n for n, p in model.named_parameters() if any(p is q for q in model.head_parameters())}
    assert head and all(n.startswith(("head.", "fusion.")) for n in head)
    changed = False
    for name, v in tuned.state_dict.items():
        if name in head:
            changed |= not torch.equal(v, ckpt.state_dict[name])
        else:
            assert torch.equal(v, ckpt.state_dict[name]), name
    assert changed


def test_direct_regression(small_dataset):
    cfg = small_config(small_dataset, direct_regression=True)
    ckpt, history = train(small_dataset, cfg, replace(FAST, epochs=2))
    assert ckpt.target_stats is not None
    rep = evaluate(ckpt, small_dataset, "test")
    assert np.isfinite(rep.mae)


def test_max_steps(small_dataset):
    _, history = train(small_dataset, small_config(small_dataset), replace(FAST, max_steps=3))
    assert history[-1]["step"] == 3
