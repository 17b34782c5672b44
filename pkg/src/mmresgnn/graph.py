"""Per-snapshot ESPL graphs: one Tx, its K nearest Rxs, two edge families."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .baselines import BaselineModel, baseline_pl, residual_target
from .errors import InsufficientRx, InvalidConfig
from .features import (
    DEFAULT_V_MAX,
    DEFAULT_WINDOW,
    IDX_I_DYN,
    IDX_R_BUILDING,
    IDX_R_TREE,
    LinkType,
    extract_link_features,
    link_distance,
)
from .oracle import OracleParams, oracle_path_loss

TX, RX = 0, 1
NODE_FEATURE_DIM = 7  # Tx-relative xyz, absolute xyz, is_tx flag


@dataclass(frozen=True)
class GraphConfig:
    K: int = 50
    k_corr: int = 4
    use_correlation_edges: bool = True
    window: float = DEFAULT_WINDOW
    v_max: float = DEFAULT_V_MAX

    def __post_init__(self):
        if self.K < 1:
            raise InvalidConfig("K must be >= 1")
        if not 1 <= self.k_corr < self.K:
            raise InvalidConfig("need 1 <= k_corr < K")


@dataclass
class ESPLGraph:
    """Node 0 is the Tx; nodes 1..K are the selected Rxs in distance order.

    ``tx_edges[i] = (0, i + 1)``. ``corr_edges`` holds directed Rx-Rx pairs,
    both orientations of every undirected KNN pair.
    """

    snapshot_id: int
    tx_vehicle_id: int
    node_positions: np.ndarray
    node_types: np.ndarray
    rx_indices: np.ndarray
    tx_edges: np.ndarray
    tx_features: np.ndarray
    pl_raw: np.ndarray
    pl_base: np.ndarray
    y_target: np.ndarray
    corr_edges: np.ndarray
    corr_features: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def K(self) -> int:
        return len(self.tx_edges)

    @property
    def num_correlation_pairs(self) -> int:
        return len(self.corr_edges) // 2

    @property
    def has_baseline(self) -> bool:
        return bool(np.all(np.isfinite(self.y_target)))

    @property
    def link_distances(self) -> np.ndarray:
        return link_distance(self.tx_features)

    def node_features(self) -> np.ndarray:
        tx = self.node_positions[0]
        flag = (self.node_types == TX).astype(float)[:, None]
        return np.hstack([self.node_positions - tx, self.node_positions, flag])

    def without_correlation_edges(self) -> "ESPLGraph":
        return replace(
            self,
            corr_edges=np.zeros((0, 2), dtype=np.int64),
            corr_features=np.zeros((0, self.tx_features.shape[1])),
        )

    def check(self) -> None:
        """Assert the structural invariants; raises AssertionError on violation."""
        K = self.K
        assert (self.node_types == TX).sum() == 1 and self.node_types[0] == TX
        assert (self.node_types == RX).sum() == K
        assert np.array_equal(self.tx_edges[:, 0], np.zeros(K, dtype=self.tx_edges.dtype))
        assert np.array_equal(np.sort(self.tx_edges[:, 1]), np.arange(1, K + 1))
        if len(self.corr_edges):
            assert (self.corr_edges >= 1).all(), "correlation edge touches the Tx"
            assert (self.corr_edges[:, 0] != self.corr_edges[:, 1]).all(), "self loop"
            assert len({tuple(e) for e in self.corr_edges.tolist()}) == len(self.corr_edges)
            assert np.all(self.corr_features[:, 12:14] == (0.0, 1.0))
        assert np.all(self.tx_features[:, 12:14] == (1.0, 0.0))


def select_k_nearest_rx(snapshot, rx_positions, K: int) -> np.ndarray:
    """Indices of the K closest Rxs, ordered by (distance, index)."""
    rx_positions = np.asarray(rx_positions, dtype=float)
    if K > len(rx_positions):
        raise InsufficientRx(f"K={K} exceeds the {len(rx_positions)} available Rxs")
    dist = np.linalg.norm(rx_positions - snapshot.tx_position, axis=1)
    order = np.lexsort((np.arange(len(dist)), dist))
    return order[:K]


def knn_correlation_edges(positions, k_corr: int) -> list[tuple[int, int]]:
    """Undirected KNN pairs ``(i, j)`` with ``i < j`` over the given points."""
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if k_corr >= n:
        raise InvalidConfig("k_corr must be smaller than the number of points")
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    idx = np.arange(n)
    pairs = set()
    for i in range(n):
        order = np.lexsort((idx, dist[i]))
        order = order[order != i][:k_corr]
        pairs.update((min(i, j), max(i, j)) for j in order.tolist())
    return sorted(pairs)


def build_espl_graph(
    scene,
    snapshot,
    oracle_params: OracleParams = OracleParams(),
    baseline: Optional[BaselineModel] = None,
    graph_config: GraphConfig = GraphConfig(),
) -> ESPLGraph:
    cfg = graph_config
    rx_idx = select_k_nearest_rx(snapshot, scene.rx_positions, cfg.K)
    rx_pos = scene.rx_positions[rx_idx]
    nodes = np.vstack([snapshot.tx_position[None, :], rx_pos])
    types = np.array([TX] + [RX] * cfg.K, dtype=np.int64)

    tx_feat = np.empty((cfg.K, 14))
    pl_raw = np.empty(cfg.K)
    for i, (gi, p) in enumerate(zip(rx_idx, rx_pos)):
        tx_feat[i] = extract_link_features(scene, snapshot, p, LinkType.TRANSMISSION, cfg.window, cfg.v_max)
        pl_raw[i] = oracle_path_loss(scene, snapshot, p, oracle_params, rx_index=int(gi), features=tx_feat[i])

    corr, corr_feat = [], []
    if cfg.use_correlation_edges:
        for i, j in knn_correlation_edges(rx_pos, cfg.k_corr):
            for a, b in ((i, j), (j, i)):
                corr.append((a + 1, b + 1))
                corr_feat.append(
                    extract_link_features(scene, snapshot, rx_pos[b], LinkType.CORRELATION, cfg.window, cfg.v_max, src=rx_pos[a])
                )
    graph = ESPLGraph(
        snapshot_id=snapshot.snapshot_id,
        tx_vehicle_id=snapshot.tx_vehicle_id,
        node_positions=nodes,
        node_types=types,
        rx_indices=rx_idx.astype(np.int64),
        tx_edges=np.stack([np.zeros(cfg.K, dtype=np.int64), np.arange(1, cfg.K + 1)], axis=1),
        tx_features=tx_feat,
        pl_raw=pl_raw,
        pl_base=np.full(cfg.K, np.nan),
        y_target=np.full(cfg.K, np.nan),
        corr_edges=np.asarray(corr, dtype=np.int64).reshape(-1, 2),
        corr_features=np.asarray(corr_feat, dtype=float).reshape(-1, 14),
    )
    if baseline is not None:
        graph = attach_baseline(graph, baseline)
    return graph


def baseline_regressors(graph: ESPLGraph) -> np.ndarray:
    """Rows ``(d, r_building, r_tree, I_dyn)`` for every transmission edge."""
    f = graph.tx_features
    return np.column_stack([graph.link_distances, f[:, IDX_R_BUILDING], f[:, IDX_R_TREE], f[:, IDX_I_DYN]])


def attach_baseline(graph: ESPLGraph, baseline: BaselineModel) -> ESPLGraph:
    reg = baseline_regressors(graph)
    pl_base = baseline_pl(baseline, reg[:, 0], reg[:, 1], reg[:, 2], reg[:, 3])
    y = residual_target(graph.pl_raw, pl_base, baseline.mu_res, baseline.sigma_res)
    return replace(graph, pl_base=np.asarray(pl_base, float), y_target=np.asarray(y, float))
