"""Closed registry of comparison, ablation and transfer experiments."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .baselines import ABGParams, abg, baseline_pl, fit_abg, fspl, umi_nlos
from .errors import EmptySplit, MissingCheckpoint, UnknownVariant
from .graph import baseline_regressors
from .metrics import MetricsReport, compute_metrics
from .model import ModelConfig
from .splits import FEW_SHOT_RATIOS, few_shot_subset
from .train import Checkpoint, TrainConfig, evaluate, train


@dataclass(frozen=True)
class Variant:
    variant_id: str
    description: str
    kind: str  # "baseline" | "empirical" | "neural"
    overrides: dict = field(default_factory=dict)


VARIANTS = {
    v.variant_id: v
    for v in [
        Variant("C0", "Geometry-driven physical baseline (least squares)", "baseline"),
        Variant("C1_fspl", "Free-space path loss", "empirical"),
        Variant("C1_abg", "Alpha-beta-gamma model", "empirical"),
        Variant("C1_umi", "3GPP TR 38.901 UMi street canyon (NLoS)", "empirical"),
        Variant("C2", "Geometry-driven MLP on edge features", "neural", {"architecture": "edge_mlp"}),
        Variant("C3", "Vision-only CNN with log-distance conditioning", "neural", {"architecture": "vision_only"}),
        Variant("C4", "Uni-modal geometric GNN (no visual branch)", "neural", {"use_visual": False}),
        Variant("A0", "Full model", "neural"),
        Variant("A1", "Direct regression (no baseline decoupling)", "neural", {"direct_regression": True}),
        Variant("A2", "w/o Rx-Rx correlation edges", "neural", {"use_correlation_edges": False}),
        Variant("A3", "w/o directional features", "neural", {"feature_mask": ("direction",)}),
        Variant("A4", "w/o Tx speed feature", "neural", {"feature_mask": ("speed",)}),
        Variant("A5", "w/o dynamic blocker features", "neural", {"feature_mask": ("dynamic_blockers",)}),
        Variant("A6", "w/o static obstacle features", "neural", {"feature_mask": ("static_blockage",)}),
        Variant("A7", "Flat edge encoder", "neural", {"flat_edge_encoder": True}),
        Variant("A8", "Concatenation fusion", "neural", {"fusion": "concat"}),
        Variant("A9", "Cross-attention fusion", "neural", {"fusion": "cross_attention"}),
        Variant("A10", "Deeper visual backbone", "neural", {"backbone": "deep_cnn"}),
        Variant("V1", "GCN operator", "neural", {"gnn_operator": "gcn"}),
        Variant("V2", "GAT operator", "neural", {"gnn_operator": "gat"}),
    ]
}


def list_variants() -> list[str]:
    return list(VARIANTS)


def get_variant(variant_id: str) -> Variant:
    try:
        return VARIANTS[variant_id]
    except KeyError:
        raise UnknownVariant(f"unknown variant {variant_id!r}; valid ids: {', '.join(VARIANTS)}") from None


def model_config_for(variant_id: str, dataset=None, base: Optional[ModelConfig] = None, **extra) -> ModelConfig:
    variant = get_variant(variant_id)
    if variant.kind != "neural":
        raise ValueError(f"variant {variant_id} has no network")
    cfg = base or ModelConfig()
    if dataset is not None:
        sc = dataset.scene.config
        cfg = replace(cfg, scene_extent=sc.extent, window=dataset.graph_config.window, image_size=dataset.images.shape[1])
    return replace(cfg, **{**variant.overrides, **extra})


def empirical_predictions(variant_id: str, dataset, graphs, abg_params: Optional[ABGParams] = None) -> np.ndarray:
    """dB predictions of the training-free variants for the given graphs."""
    sc = dataset.scene.config
    reg = np.vstack([baseline_regressors(g) for g in graphs])
    d = reg[:, 0]
    if variant_id == "C0":
        return baseline_pl(dataset.baseline, d, reg[:, 1], reg[:, 2], reg[:, 3])
    if variant_id == "C1_fspl":
        return fspl(d, sc.carrier_freq)
    if variant_id == "C1_abg":
        return abg(d, sc.carrier_freq, abg_params or ABGParams())
    if variant_id == "C1_umi":
        return umi_nlos(d, sc.carrier_freq, h_ut=sc.rx_height)
    raise UnknownVariant(variant_id)


def fit_abg_on(dataset, split: str = "train") -> ABGParams:
    graphs, _ = dataset.subset(split)
    d = np.concatenate([g.link_distances for g in graphs])
    pl = np.concatenate([g.pl_raw for g in graphs])
    return fit_abg(d, pl, dataset.scene.config.carrier_freq)


def run_variant(
    variant_id: str,
    dataset,
    split: str = "test",
    train_config: TrainConfig = TrainConfig(),
    base_config: Optional[ModelConfig] = None,
    fit_abg_params: bool = False,
):
    """Train (if needed) and evaluate one registry entry.

    Returns ``(report, checkpoint)``; the checkpoint is None for C0/C1.
    """
    variant = get_variant(variant_id)
    if variant.kind != "neural":
        graphs, _ = dataset.subset(split)
        if not graphs:
            raise EmptySplit(f"split {split!r} is empty")
        params = fit_abg_on(dataset) if (fit_abg_params and variant_id == "C1_abg") else None
        y_hat = empirical_predictions(variant_id, dataset, graphs, params)
        y = np.concatenate([g.pl_raw for g in graphs])
        return compute_metrics(y, y_hat, variant_id, split), None
    cfg = model_config_for(variant_id, dataset, base_config)
    data = dataset if cfg.use_correlation_edges else dataset.without_correlation_edges()
    ckpt, _ = train(data, cfg, train_config, variant_id=variant_id)
    return evaluate(ckpt, data, split), ckpt


class TransferStrategy(str, Enum):
    SCRATCH = "scratch"
    FULL_FINETUNE = "full_finetune"
    FROZEN_BACKBONE = "frozen_backbone"


STRATEGY_ALIASES = {"scratch": "scratch", "full": "full_finetune", "full_finetune": "full_finetune", "frozen": "frozen_backbone", "frozen_backbone": "frozen_backbone"}


@dataclass(frozen=True)
class TransferSpec:
    strategy: TransferStrategy
    source_checkpoint: Optional[Checkpoint] = None
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        s = self.strategy
        s = s.value if isinstance(s, TransferStrategy) else STRATEGY_ALIASES.get(s, s)
        object.__setattr__(self, "strategy", TransferStrategy(s))
        if self.target_ratio not in FEW_SHOT_RATIOS:
            raise ValueError(f"target_ratio must be one of {FEW_SHOT_RATIOS}")
        if self.strategy is TransferStrategy.SCRATCH and self.source_checkpoint is not None:
            raise ValueError("scratch training takes no source checkpoint")
        if self.strategy is not TransferStrategy.SCRATCH and self.source_checkpoint is None:
            raise MissingCheckpoint(f"strategy {self.strategy.value} needs a source checkpoint")


def run_transfer(spec: TransferSpec, target_dataset, train_config: TrainConfig = TrainConfig(), base_config: Optional[ModelConfig] = None):
    """Adapt to a target scenario with a fraction of its training vehicles.

    Returns ``(report, checkpoint)``; evaluation always uses the full target
    test split.
    """
    vehicles = few_shot_subset(target_dataset.split.train_vehicle_ids, spec.target_ratio, spec.seed)
    src = spec.source_checkpoint
    if src is None:
        cfg = model_config_for("A0", target_dataset, base_config)
    else:
        sc = target_dataset.scene.config
        cfg = replace(src.model_config, scene_extent=sc.extent)
    if spec.strategy is TransferStrategy.FULL_FINETUNE:
        cfg = replace(cfg, backbone_freeze_depth=0)
    data = target_dataset if cfg.use_correlation_edges else target_dataset.without_correlation_edges()
    ckpt, _ = train(
        data,
        cfg,
        train_config,
        train_vehicle_ids=vehicles,
        variant_id=f"transfer_{spec.strategy.value}_{spec.target_ratio:g}",
        init=src,
        head_only=spec.strategy is TransferStrategy.FROZEN_BACKBONE,
    )
    ckpt.meta["few_shot_vehicles"] = list(vehicles)
    ckpt.meta["strategy"] = spec.strategy.value
    ckpt.meta["target_ratio"] = spec.target_ratio
    return evaluate(ckpt, data, "test"), ckpt
