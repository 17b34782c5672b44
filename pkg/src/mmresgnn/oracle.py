"""Deterministic stand-in for ray-traced path-loss labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import fspl
from .errors import DegenerateLink, InvalidConfig
from .features import IDX_I_DYN, IDX_R_BUILDING, IDX_R_TREE, extract_link_features


@dataclass(frozen=True)
class OracleParams:
    building_penalty: float = 25.0
    tree_penalty: float = 10.0
    dynamic_penalty: float = 6.0
    shadow_weight: float = 1.0
    noise_sigma: float = 0.5
    noise_seed: int = 0

    def __post_init__(self):
        if min(self.building_penalty, self.tree_penalty, self.dynamic_penalty) < 0:
            raise InvalidConfig("penalties must be non-negative")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be non-negative")


def link_noise(params: OracleParams, snapshot_id: int, rx_index: int) -> float:
    if params.noise_sigma == 0:
        return 0.0
    rng = np.random.default_rng([params.noise_seed, snapshot_id, rx_index])
    return params.noise_sigma * float(rng.standard_normal())


def shadow_at(scene, rx) -> float:
    col, row = scene.cell_of(rx)
    h, w = scene.shadow_field.shape
    return float(scene.shadow_field[min(max(row, 0), h - 1), min(max(col, 0), w - 1)])


def _rx_index(scene, rx) -> int:
    hits = np.nonzero(np.all(np.isclose(scene.rx_positions, np.asarray(rx, float)), axis=1))[0]
    if len(hits) == 0:
        raise InvalidConfig("rx is not one of scene.rx_positions")
    return int(hits[0])


def oracle_path_loss(scene, snapshot, rx, params: OracleParams = OracleParams(), rx_index=None, features=None) -> float:
    """FSPL plus blockage penalties, the scene's shadowing and keyed noise.

    ``features`` may carry the precomputed transmission-link feature vector.
    """
    rx = np.asarray(rx, dtype=float)
    d = float(np.linalg.norm(rx - snapshot.tx_position))
    if d == 0.0:
        raise DegenerateLink("Tx and Rx coincide")
    if rx_index is None:
        rx_index = _rx_index(scene, rx)
    if features is None:
        features = extract_link_features(scene, snapshot, rx)
    pl = float(fspl(d, scene.config.carrier_freq))
    pl += params.building_penalty * features[IDX_R_BUILDING]
    pl += params.tree_penalty * features[IDX_R_TREE]
    pl += params.dynamic_penalty * features[IDX_I_DYN]
    pl += params.shadow_weight * shadow_at(scene, rx)
    pl += link_noise(params, snapshot.snapshot_id, rx_index)
    return pl
