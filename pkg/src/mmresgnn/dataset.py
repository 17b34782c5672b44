"""In-memory dataset: scene, trajectories, graphs, ego images and baseline."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .baselines import BaselineModel, fit_baseline
from .errors import EmptySplit
from .graph import ESPLGraph, GraphConfig, attach_baseline, baseline_regressors, build_espl_graph
from .oracle import OracleParams
from .scene import Scene, SceneConfig, Snapshot, generate_scene, render_ego_image, simulate_trajectories
from .splits import SplitSpec, vehicle_wise_split

DEFAULT_IMAGE_SIZE = 64


@dataclass
class Dataset:
    scene: Scene
    snapshots: list[Snapshot]
    graphs: list[ESPLGraph]
    images: np.ndarray
    split: SplitSpec
    oracle_params: OracleParams = OracleParams()
    graph_config: GraphConfig = GraphConfig()
    baseline: Optional[BaselineModel] = None
    trajectory_seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def vehicle_ids(self) -> list[int]:
        return list(range(self.scene.config.num_vehicles))

    def indices(self, split: str, vehicle_ids=None) -> list[int]:
        """Graph indices of a split, optionally restricted to some vehicles."""
        if split == "all":
            allowed = set(self.vehicle_ids)
        else:
            allowed = set(self.split.ids(split))
        if vehicle_ids is not None:
            allowed &= set(vehicle_ids)
        return [i for i, g in enumerate(self.graphs) if g.tx_vehicle_id in allowed]

    def subset(self, split: str, vehicle_ids=None) -> tuple[list[ESPLGraph], np.ndarray]:
        idx = self.indices(split, vehicle_ids)
        return [self.graphs[i] for i in idx], self.images[idx]

    def baseline_links(self, split: str = "train") -> np.ndarray:
        graphs, _ = self.subset(split)
        if not graphs:
            raise EmptySplit(f"split {split!r} has no snapshots")
        return np.vstack([np.column_stack([baseline_regressors(g), g.pl_raw]) for g in graphs])

    def with_baseline(self, baseline: BaselineModel) -> "Dataset":
        return replace(self, graphs=[attach_baseline(g, baseline) for g in self.graphs], baseline=baseline)

    def without_correlation_edges(self) -> "Dataset":
        return replace(
            self,
            graphs=[g.without_correlation_edges() for g in self.graphs],
            graph_config=replace(self.graph_config, use_correlation_edges=False),
        )


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("MMRESGNN_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def _build_one(args):
    scene, snap, oracle_params, graph_config, image_size, window = args
    graph = build_espl_graph(scene, snap, oracle_params, None, graph_config)
    image = render_ego_image(scene, snap, image_size, window).pixels
    return graph, image


def build_dataset(
    scene_config: SceneConfig,
    num_snapshots: int,
    seed: int = 0,
    oracle_params: Optional[OracleParams] = None,
    graph_config: GraphConfig = GraphConfig(),
    image_size: int = DEFAULT_IMAGE_SIZE,
    fit: bool = True,
) -> Dataset:
    """Generate everything for one scenario; the baseline is fit on train vehicles."""
    oracle_params = oracle_params or OracleParams(noise_seed=seed)
    scene = generate_scene(scene_config)
    snaps = simulate_trajectories(scene, num_snapshots, seed)
    jobs = [(scene, s, oracle_params, graph_config, image_size, graph_config.window) for s in snaps]
    workers = min(num_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            built = list(pool.map(_build_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        built = [_build_one(j) for j in jobs]
    graphs = [g for g, _ in built]
    images = np.stack([im for _, im in built]) if built else np.zeros((0, image_size, image_size, 3))
    split = vehicle_wise_split(range(scene_config.num_vehicles), seed=seed)
    ds = Dataset(scene, snaps, graphs, images, split, oracle_params, graph_config, None, seed)
    if fit:
        ds = ds.with_baseline(fit_baseline(ds.baseline_links("train")))
    return ds
