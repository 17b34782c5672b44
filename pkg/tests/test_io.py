import json
import struct

import numpy as np
import pytest

from mmresgnn.errors import IntegrityError
from mmresgnn.io import (
    GRAPH_MAGIC,
    decode_graph,
    decode_pgm,
    decode_ppm,
    encode_graph,
    encode_pgm,
    encode_ppm,
    quantize_image,
    read_dataset,
    write_dataset,
)


@pytest.fixture(scope="module")
def written(small_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("ds")
    manifest = write_dataset(small_dataset, path)
    return path, manifest


def test_graph_record_roundtrip(small_dataset):
    g = small_dataset.graphs[3]
    data = encode_graph(g)
    assert struct.unpack_from("<I", data)[0] == GRAPH_MAGIC == 0x45535047
    back = decode_graph(data)
    for name in ("node_positions", "tx_features", "corr_features", "pl_raw", "pl_base", "y_target"):
        assert getattr(back, name).tobytes() == getattr(g, name).tobytes()
    for name in ("tx_edges", "corr_edges", "rx_indices", "node_types"):
        assert np.array_equal(getattr(back, name), getattr(g, name))
    assert (back.snapshot_id, back.tx_vehicle_id) == (g.snapshot_id, g.tx_vehicle_id)


def test_graph_record_nan_labels(small_dataset):
    from dataclasses import replace

    g = replace(small_dataset.graphs[0], y_target=np.full(20, np.nan), pl_base=np.full(20, np.nan))
    back = decode_graph(encode_graph(g))
    assert np.all(np.isnan(back.y_target)) and not back.has_baseline


def test_truncated_and_corrupt_graph(small_dataset):
    data = encode_graph(small_dataset.graphs[0])
    for cut in (0, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(IntegrityError):
            decode_graph(data[:cut], "graphs/0.bin")
    bad = bytearray(data)
    bad[0] ^= 0xFF
    with pytest.raises(IntegrityError, match="magic"):
        decode_graph(bytes(bad))
    with pytest.raises(IntegrityError):
        decode_graph(data + b"\0")


def test_pnm_roundtrip():
    rng = np.random.default_rng(0)
    mask = (rng.random((20, 30)) < 0.4).astype(np.uint8)
    blob = encode_pgm(mask)
    assert blob.startswith(b"P5\n30 20\n255\n")
    assert np.array_equal(decode_pgm(blob), mask)
    img = rng.random((8, 8, 3))
    back = decode_ppm(encode_ppm(img))
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
    # round half up
    assert quantize_image(np.array([0.5 / 255, 1.5 / 255, 1.0])).tolist() == [1, 2, 255]
    q = quantize_image(img) / 255.0
    assert np.array_equal(decode_ppm(encode_ppm(q)), q)
    with pytest.raises(IntegrityError):
        decode_ppm(encode_ppm(img)[:-3])


def test_dataset_roundtrip(small_dataset, written):
    path, manifest = written
    assert manifest["format_version"] == 1
    assert manifest["counts"] == {"snapshots": 40, "rx": 120, "vehicles": 20}
    back = read_dataset(path)
    assert back.baseline == small_dataset.baseline
    assert back.split == small_dataset.split
    assert back.oracle_params == small_dataset.oracle_params
    for a, b in zip(small_dataset.graphs, back.graphs):
        for name in ("tx_features", "corr_features", "pl_raw", "pl_base", "y_target", "node_positions"):
            assert np.max(np.abs(getattr(a, name) - getattr(b, name))) <= 1e-15
    for a, b in zip(small_dataset.snapshots, back.snapshots):
        assert np.array_equal(a.tx_position, b.tx_position)
        assert (a.tx_heading, a.tx_speed, a.tx_vehicle_id) == (b.tx_heading, b.tx_speed, b.tx_vehicle_id)
        assert len(a.dynamic_vehicles) == len(b.dynamic_vehicles)
        for u, v in zip(a.dynamic_vehicles, b.dynamic_vehicles):
            assert np.array_equal(u.position, v.position)
            assert (u.vehicle_id, u.heading, u.speed, u.half_extents) == (v.vehicle_id, v.heading, v.speed, v.half_extents)
    assert np.max(np.abs(back.images - small_dataset.images)) <= 0.5 / 255 + 1e-12
    assert np.array_equal(back.scene.building_mask, small_dataset.scene.building_mask)


def test_snapshots_csv_layout(written):
    path, _ = written
    lines = (path / "snapshots.csv").read_text().splitlines()
    assert lines[0] == "snapshot_id,vehicle_id,x,y,z,heading,speed,is_tx"
    assert len(lines) == 1 + 40 * 20
    assert sum(l.endswith(",1") for l in lines[1:]) == 40


def test_bitflip_names_file(written, tmp_path):
    import shutil

    path, _ = written
    copy = tmp_path / "copy"
    shutil.copytree(path, copy)
    target = copy / "graphs" / "7.bin"
    data = bytearray(target.read_bytes())
    data[200] ^= 0x01
    target.write_bytes(bytes(data))
    with pytest.raises(IntegrityError, match=r"graphs/7\.bin"):
        read_dataset(copy)


def test_missing_file_and_manifest(written, tmp_path):
    import shutil

    path, _ = written
    copy = tmp_path / "copy"
    shutil.copytree(path, copy)
    (copy / "images" / "2.ppm").unlink()
    with pytest.raises(IntegrityError, match=r"images/2\.ppm"):
        read_dataset(copy)
    m = json.loads((copy / "manifest.json").read_text())
    m["format_version"] = 2
    (copy / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(IntegrityError, match="format_version"):
        read_dataset(copy)
    with pytest.raises(IntegrityError):
        read_dataset(tmp_path / "nowhere")


def test_no_temp_files_left(written):
    path, _ = written
    assert not list(path.rglob(".*.tmp"))
