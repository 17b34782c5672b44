"""Training loop, checkpoints and evaluation on reconstructed dB path loss."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .baselines import BaselineModel, reconstruct_pl
from .errors import BaselineMismatch, EmptySplit, NonFiniteLoss
from .metrics import MetricsReport, compute_metrics
from .model import ModelConfig, build_model, collate

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 5e-5
    epochs: int = 60
    batch_size: int = 32
    scheduler_factor: float = 0.5
    scheduler_patience: int = 10
    early_stop_patience: int = 20
    max_steps: Optional[int] = None
    eval_batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "scheduler_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state_dict: dict
    baseline: BaselineModel
    train_config: TrainConfig
    history: list = field(default_factory=list)
    target_stats: Optional[tuple[float, float]] = None
    variant_id: str = "A0"
    meta: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION

    @property
    def baseline_id(self) -> str:
        return self.baseline.model_id

    def build(self):
        model = build_model(self.model_config)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path) -> None:
        payload = {
            "format_version": self.format_version,
            "model_config": self.model_config.to_dict(),
            "state_dict": self.state_dict,
            "baseline": self.baseline.to_text(),
            "baseline_id": self.baseline_id,
            "train_config": self.train_config.to_dict(),
            "history": self.history,
            "target_stats": self.target_stats,
            "variant_id": self.variant_id,
            "meta": self.meta,
        }
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
        return cls(
            model_config=ModelConfig.from_dict(payload["model_config"]),
            state_dict=payload["state_dict"],
            baseline=BaselineModel.from_text(payload["baseline"]),
            train_config=TrainConfig.from_dict(payload["train_config"]),
            history=payload["history"],
            target_stats=tuple(payload["target_stats"]) if payload["target_stats"] else None,
            variant_id=payload["variant_id"],
            meta=payload.get("meta", {}),
        )


def _targets(graphs, direct_stats):
    if direct_stats is None:
        return [g.y_target for g in graphs]
    mean, std = direct_stats
    return [(g.pl_raw - mean) / std for g in graphs]


def _to_db(pred: np.ndarray, pl_base: np.ndarray, baseline: BaselineModel, direct_stats) -> np.ndarray:
    if direct_stats is not None:
        return pred * direct_stats[1] + direct_stats[0]
    return reconstruct_pl(pl_base, pred, baseline.mu_res, baseline.sigma_res)


@torch.no_grad()
def predict_residuals(model, graphs, images, batch_size: int = 64) -> np.ndarray:
    """Raw network outputs for every transmission edge, graph after graph."""
    model.eval()
    out = []
    for i in range(0, len(graphs), batch_size):
        batch = collate(graphs[i : i + batch_size], images[i : i + batch_size], model.config.use_correlation_edges)
        out.append(model(batch).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def predict_db(model, graphs, images, baseline, direct_stats=None, batch_size: int = 64) -> np.ndarray:
    pred = predict_residuals(model, graphs, images, batch_size)
    pl_base = np.concatenate([g.pl_base for g in graphs])
    return _to_db(pred, pl_base, baseline, direct_stats)


def fit_model(
    model,
    train_graphs,
    train_images,
    val_graphs,
    val_images,
    baseline: BaselineModel,
    train_config: TrainConfig,
    direct_stats=None,
    parameters=None,
):
    """Optimize ``model`` in place; returns (best state_dict, history).

    ``parameters`` restricts which tensors the optimizer may touch; all other
    parameters are left bit-identical.
    """
    if not train_graphs:
        raise EmptySplit("no training snapshots")
    cfg = train_config
    params = list(parameters) if parameters is not None else [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, mode="min", factor=cfg.scheduler_factor, patience=cfg.scheduler_patience)
    use_corr = model.config.use_correlation_edges
    train_images = np.asarray(train_images)
    targets = _targets(train_graphs, direct_stats)
    has_val = len(val_graphs) > 0
    y_val = np.concatenate([g.pl_raw for g in val_graphs]) if has_val else None

    history, best_state, best_score, best_epoch = [], None, np.inf, -1
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_graphs))
        losses, abs_err = [], []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            batch = collate([train_graphs[j] for j in idx], train_images[idx], use_corr, [targets[j] for j in idx])
            pred = model(batch)
            loss = torch.mean((pred - batch.target) ** 2)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item() * len(idx))
            with torch.no_grad():
                db = _to_db(pred.double().numpy(), batch.pl_base, baseline, direct_stats)
                abs_err.append(np.abs(db - batch.pl_raw))
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        train_loss = float(np.sum(losses) / sum(min(cfg.batch_size, len(order) - i) for i in range(0, len(order), cfg.batch_size)))
        train_mae = float(np.mean(np.concatenate(abs_err)))
        entry = {"epoch": epoch, "train_loss": train_loss, "train_mae": train_mae, "lr": opt.param_groups[0]["lr"], "step": step}
        if has_val:
            y_hat = predict_db(model, val_graphs, val_images, baseline, direct_stats, cfg.eval_batch_size)
            val_t = np.concatenate(_targets(val_graphs, direct_stats))
            val_pred = predict_residuals(model, val_graphs, val_images, cfg.eval_batch_size)
            entry["val_loss"] = float(np.mean((val_pred - val_t) ** 2))
            entry["val_mae"] = float(np.mean(np.abs(y_hat - y_val)))
            score = entry["val_mae"]
        else:
            score = train_mae
        sched.step(score)
        history.append(entry)
        log.info("epoch %d %s", epoch, {k: round(v, 5) if isinstance(v, float) else v for k, v in entry.items()})
        if score < best_score:
            best_score, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())
        if epoch - best_epoch >= cfg.early_stop_patience:
            break
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    model.load_state_dict(best_state)
    for h in history:
        h["best"] = h["epoch"] == best_epoch
    return best_state, history


def direct_target_stats(graphs) -> tuple[float, float]:
    y = np.concatenate([g.pl_raw for g in graphs])
    return float(y.mean()), float(max(y.std(), 1e-6))


def train(
    dataset,
    model_config: ModelConfig,
    train_config: TrainConfig = TrainConfig(),
    train_vehicle_ids=None,
    variant_id: str = "A0",
    init: Optional[Checkpoint] = None,
    head_only: bool = False,
):
    """Train on the dataset's train split (optionally a vehicle subset).

    Returns ``(checkpoint, history)``; the checkpoint holds the weights of the
    epoch with the best validation MAE.
    """
    if dataset.baseline is None:
        raise BaselineMismatch("dataset has no fitted baseline")
    train_graphs, train_images = dataset.subset("train", train_vehicle_ids)
    val_graphs, val_images = dataset.subset("val")
    if not train_graphs:
        raise EmptySplit("train split is empty")
    if not model_config.use_correlation_edges:
        train_graphs = [g.without_correlation_edges() for g in train_graphs]
        val_graphs = [g.without_correlation_edges() for g in val_graphs]
    model = build_model(model_config)
    if init is not None:
        model.load_state_dict(init.state_dict)
    parameters = None
    if head_only:
        head = set(id(p) for p in model.head_parameters())
        for p in model.parameters():
            p.requires_grad_(id(p) in head)
        parameters = [p for p in model.parameters() if id(p) in head]
    direct_stats = direct_target_stats(train_graphs) if model_config.direct_regression else None
    state, history = fit_model(
        model, train_graphs, train_images, val_graphs, val_images, dataset.baseline, train_config, direct_stats, parameters
    )
    ckpt = Checkpoint(
        model_config=model_config,
        state_dict=state,
        baseline=dataset.baseline,
        train_config=train_config,
        history=history,
        target_stats=direct_stats,
        variant_id=variant_id,
        meta={"scene_id": dataset.scene.scene_id, "train_vehicle_ids": sorted(set(g.tx_vehicle_id for g in train_graphs))},
    )
    return ckpt, history


def evaluate(checkpoint: Checkpoint, dataset, split: str = "test", vehicle_ids=None) -> MetricsReport:
    if dataset.baseline is None or checkpoint.baseline_id != dataset.baseline.model_id:
        raise BaselineMismatch(
            f"checkpoint baseline {checkpoint.baseline_id} does not match dataset baseline "
            f"{dataset.baseline.model_id if dataset.baseline else None}"
        )
    graphs, images = dataset.subset(split, vehicle_ids)
    if not graphs:
        raise EmptySplit(f"split {split!r} is empty")
    model = checkpoint.build()
    y_hat = predict_db(model, graphs, images, checkpoint.baseline, checkpoint.target_stats, checkpoint.train_config.eval_batch_size)
    y = np.concatenate([g.pl_raw for g in graphs])
    return compute_metrics(y, y_hat, checkpoint.variant_id, split)
