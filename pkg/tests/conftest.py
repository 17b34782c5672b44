import numpy as np
import pytest
import torch

from mmresgnn.dataset import build_dataset
from mmresgnn.graph import GraphConfig
from mmresgnn.model import ModelConfig
from mmresgnn.scene import Scene, SceneConfig, Snapshot, DynamicVehicle

torch.set_num_threads(1)


def blank_scene(size=64, rx=None, building=None, tree=None, **cfg) -> Scene:
    """Hand-built scene with empty masks unless given; zero shadowing."""
    config = SceneConfig(grid_width=size, grid_height=size, **cfg)
    z = np.zeros((size, size), dtype=np.uint8)
    rx = np.zeros((0, 3)) if rx is None else np.asarray(rx, float)
    return Scene(
        config=config,
        building_mask=z.copy() if building is None else np.asarray(building, np.uint8),
        tree_mask=z.copy() if tree is None else np.asarray(tree, np.uint8),
        road_mask=z.copy(),
        rx_positions=rx,
        shadow_field=np.zeros((size, size)),
        scene_id="blank",
    )


def make_snapshot(pos=(0.0, 0.0, 2.0), heading=0.0, speed=10.0, vehicles=(), sid=0, vid=0) -> Snapshot:
    vs = tuple(
        DynamicVehicle(i + 1, np.asarray(p, float), 0.0, 0.0, (2.25, 0.9, 0.75)) for i, p in enumerate(vehicles)
    )
    return Snapshot(sid, np.asarray(pos, float), heading, speed, vid, vs, "blank")


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SceneConfig("crossroad", num_rx=120, seed=3)
    return build_dataset(cfg, 40, seed=3, graph_config=GraphConfig(K=20, k_corr=4))


@pytest.fixture(scope="session")
def tiny_dataset():
    """K=5 graphs with 16x16 renders for exact numerical checks."""
    cfg = SceneConfig("wide_lane", num_rx=60, seed=1)
    return build_dataset(cfg, 12, seed=1, graph_config=GraphConfig(K=5, k_corr=2), image_size=16)


def tiny_config(**kw) -> ModelConfig:
    base = dict(
        hidden_dim=8,
        num_heads=2,
        num_layers=1,
        edge_group_dims=(4, 4, 4, 4, 4, 4),
        visual_feature_dim=8,
        image_size=16,
        position_frequencies=2,
    )
    base.update(kw)
    return ModelConfig(**base)


def small_config(dataset, **kw) -> ModelConfig:
    base = dict(hidden_dim=32, num_heads=4, num_layers=2, edge_group_dims=(8,) * 6, visual_feature_dim=32)
    base.update(kw)
    sc = dataset.scene.config
    return ModelConfig(scene_extent=sc.extent, window=dataset.graph_config.window, image_size=dataset.images.shape[1], **base)
