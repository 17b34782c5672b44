import numpy as np
import pytest

from mmresgnn.baselines import fspl
from mmresgnn.errors import InvalidConfig
from mmresgnn.oracle import OracleParams, link_noise, oracle_path_loss
from mmresgnn.scene import SceneConfig, generate_scene, simulate_trajectories

from conftest import blank_scene, make_snapshot

QUIET = OracleParams(shadow_weight=0.0, noise_sigma=0.0)
ZERO = OracleParams(0.0, 0.0, 0.0, 0.0, 0.0)


def test_free_link_equals_fspl():
    rx = np.array([[100.0, 0.0, 2.0]])
    scene = blank_scene(size=128, rx=rx)
    pl = oracle_path_loss(scene, make_snapshot((0.0, 0.0, 2.0)), rx[0], QUIET)
    assert pl == pytest.approx(101.3433, abs=1e-3)


def test_fully_blocked_link_adds_building_penalty():
    rx = np.array([[100.5, 0.5, 2.0]])
    scene = blank_scene(size=128, rx=rx, building=np.ones((128, 128)))
    snap = make_snapshot((0.5, 0.5, 2.0))
    pl = oracle_path_loss(scene, snap, rx[0], QUIET)
    assert pl == pytest.approx(fspl(100.0, 28.0) + 25.0, abs=1e-12)


def test_zero_params_equal_fspl_on_generated_scene():
    scene = generate_scene(SceneConfig("crossroad", num_rx=80))
    snap = simulate_trajectories(scene, 1, 0)[0]
    for i, rx in enumerate(scene.rx_positions[:40]):
        d = np.linalg.norm(rx - snap.tx_position)
        assert abs(oracle_path_loss(scene, snap, rx, ZERO, rx_index=i) - fspl(d, 28.0)) <= 1e-12


def test_monotone_in_distance():
    rx = np.array([[x, 10.0, 1.5] for x in np.linspace(12, 60, 30)])
    scene = blank_scene(size=64, rx=rx)
    snap = make_snapshot((10.0, 10.0, 2.0))
    pl = [oracle_path_loss(scene, snap, r, QUIET, rx_index=i) for i, r in enumerate(rx)]
    assert np.all(np.diff(pl) > 0)


def test_oracle_deterministic_and_noise_keyed():
    scene = generate_scene(SceneConfig("wide_lane", num_rx=60))
    snap = simulate_trajectories(scene, 3, 0)[2]
    rx = scene.rx_positions[5]
    p = OracleParams(noise_seed=4)
    assert oracle_path_loss(scene, snap, rx, p) == oracle_path_loss(scene, snap, rx, p)
    assert link_noise(p, 2, 5) == link_noise(p, 2, 5)
    assert link_noise(p, 2, 5) != link_noise(p, 2, 6)
    assert link_noise(OracleParams(noise_sigma=0.0), 2, 5) == 0.0


def test_noise_statistics():
    p = OracleParams(noise_sigma=0.5, noise_seed=11)
    n = np.array([link_noise(p, s, r) for s in range(50) for r in range(40)])
    assert abs(n.mean()) < 0.05 and abs(n.std() - 0.5) < 0.05


def test_params_validation():
    with pytest.raises(InvalidConfig):
        OracleParams(building_penalty=-1.0)
    with pytest.raises(InvalidConfig):
        OracleParams(noise_sigma=-0.1)
