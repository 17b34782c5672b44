"""On-disk dataset layout.

::

    manifest.json            format_version, configs, split, checksums
    baseline.txt             key = value baseline record
    masks/{building,tree,road}.pgm   binary P5, 0/255, row 0 = lowest y
    snapshots.csv            one row per vehicle per snapshot
    graphs/<snapshot_id>.bin little-endian ESPL graph record
    images/<snapshot_id>.ppm binary P6 ego render

Graph record: ``u32`` magic, version, node count, transmission edge count,
correlation edge count, snapshot id, Tx vehicle id, node feature width, edge
feature width; then node features (f64), global Rx indices (u32), edge
index pairs (u32, transmission then correlation), edge features (f64, same
order) and the labels pl_raw, pl_base, y_target (f64, NaN when unset).
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import BaselineModel
from .dataset import Dataset
from .errors import IntegrityError
from .graph import NODE_FEATURE_DIM, RX, TX, ESPLGraph, GraphConfig
from .oracle import OracleParams
from .scene import DynamicVehicle, SceneConfig, Snapshot, generate_scene
from .splits import SplitSpec

FORMAT_VERSION = 1
GRAPH_MAGIC = 0x45535047
GRAPH_VERSION = 1
_HEADER = struct.Struct("<9I")
CSV_COLUMNS = ["snapshot_id", "vehicle_id", "x", "y", "z", "heading", "speed", "is_tx"]


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- masks and images -------------------------------------------------------


def encode_pgm(mask: np.ndarray) -> bytes:
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode() + (np.asarray(mask, dtype=np.uint8) * 255).astype(np.uint8).tobytes()


def _parse_pnm(data: bytes, magic: bytes, channels: int, name: str) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IntegrityError(f"{name}: truncated header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != magic or tokens[3] != b"255":
        raise IntegrityError(f"{name}: not an 8-bit {magic.decode()} file")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos:]
    if len(body) != w * h * channels:
        raise IntegrityError(f"{name}: expected {w * h * channels} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def decode_pgm(data: bytes, name: str = "pgm") -> np.ndarray:
    return (_parse_pnm(data, b"P5", 1, name) > 127).astype(np.uint8)


def quantize_image(pixels: np.ndarray) -> np.ndarray:
    """value * 255 rounded half-up."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(pixels: np.ndarray) -> bytes:
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode() + quantize_image(pixels).tobytes()


def decode_ppm(data: bytes, name: str = "ppm") -> np.ndarray:
    return _parse_pnm(data, b"P6", 3, name).astype(np.float64) / 255.0


# -- graphs -----------------------------------------------------------------


def encode_graph(g: ESPLGraph) -> bytes:
    nf = g.node_features()
    buf = _io.BytesIO()
    buf.write(
        _HEADER.pack(
            GRAPH_MAGIC, GRAPH_VERSION, g.num_nodes, g.K, len(g.corr_edges), g.snapshot_id, g.tx_vehicle_id, nf.shape[1], g.tx_features.shape[1]
        )
    )
    buf.write(nf.astype("<f8").tobytes())
    buf.write(g.rx_indices.astype("<u4").tobytes())
    buf.write(g.tx_edges.astype("<u4").tobytes())
    buf.write(g.corr_edges.astype("<u4").tobytes())
    buf.write(g.tx_features.astype("<f8").tobytes())
    buf.write(g.corr_features.astype("<f8").tobytes())
    for arr in (g.pl_raw, g.pl_base, g.y_target):
        buf.write(np.asarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_graph(data: bytes, name: str = "graph") -> ESPLGraph:
    if len(data) < _HEADER.size:
        raise IntegrityError(f"{name}: truncated header")
    magic, version, n, k, m, sid, vid, nfd, efd = _HEADER.unpack_from(data)
    if magic != GRAPH_MAGIC:
        raise IntegrityError(f"{name}: bad magic 0x{magic:08x}")
    if version != GRAPH_VERSION:
        raise IntegrityError(f"{name}: unsupported version {version}")
    if nfd != NODE_FEATURE_DIM or n != k + 1:
        raise IntegrityError(f"{name}: inconsistent header")
    sizes = [
        ("nodes", "<f8", (n, nfd)),
        ("rx", "<u4", (k,)),
        ("tx_edges", "<u4", (k, 2)),
        ("corr_edges", "<u4", (m, 2)),
        ("tx_feat", "<f8", (k, efd)),
        ("corr_feat", "<f8", (m, efd)),
        ("pl_raw", "<f8", (k,)),
        ("pl_base", "<f8", (k,)),
        ("y", "<f8", (k,)),
    ]
    expected = _HEADER.size + sum(np.dtype(dt).itemsize * int(np.prod(shape)) for _, dt, shape in sizes)
    if len(data) != expected:
        raise IntegrityError(f"{name}: expected {expected} bytes, found {len(data)}")
    out, pos = {}, _HEADER.size
    for key, dt, shape in sizes:
        count = int(np.prod(shape))
        out[key] = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(shape).astype(np.float64 if dt == "<f8" else np.int64)
        pos += count * np.dtype(dt).itemsize
    nodes = out["nodes"]
    return ESPLGraph(
        snapshot_id=sid,
        tx_vehicle_id=vid,
        node_positions=nodes[:, 3:6].copy(),
        node_types=np.where(nodes[:, 6] > 0.5, TX, RX).astype(np.int64),
        rx_indices=out["rx"],
        tx_edges=out["tx_edges"],
        tx_features=out["tx_feat"],
        pl_raw=out["pl_raw"],
        pl_base=out["pl_base"],
        y_target=out["y"],
        corr_edges=out["corr_edges"],
        corr_features=out["corr_feat"],
    )


# -- snapshots --------------------------------------------------------------


def encode_snapshots(snapshots) -> bytes:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in snapshots:
        rows = [(s.tx_vehicle_id, s.tx_position, s.tx_heading, s.tx_speed, 1)]
        rows += [(v.vehicle_id, v.position, v.heading, v.speed, 0) for v in s.dynamic_vehicles]
        for vid, p, heading, speed, is_tx in sorted(rows, key=lambda r: r[0]):
            w.writerow([s.snapshot_id, vid, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(heading)), repr(float(speed)), is_tx])
    return buf.getvalue().encode("utf-8")


def decode_snapshots(data: bytes, scene_id: str, half_extents: dict) -> list[Snapshot]:
    reader = csv.DictReader(_io.StringIO(data.decode("utf-8")))
    if reader.fieldnames != CSV_COLUMNS:
        raise IntegrityError(f"snapshots.csv: unexpected header {reader.fieldnames}")
    grouped: dict[int, list] = {}
    for row in reader:
        grouped.setdefault(int(row["snapshot_id"]), []).append(row)
    snaps = []
    for sid in sorted(grouped):
        tx, others = None, []
        for row in grouped[sid]:
            vid = int(row["vehicle_id"])
            pos = np.array([float(row["x"]), float(row["y"]), float(row["z"])])
            if row["is_tx"] == "1":
                tx = (vid, pos, float(row["heading"]), float(row["speed"]))
            else:
                others.append(DynamicVehicle(vid, pos, float(row["heading"]), float(row["speed"]), tuple(half_extents[str(vid)])))
        if tx is None:
            raise IntegrityError(f"snapshots.csv: snapshot {sid} has no Tx row")
        snaps.append(Snapshot(sid, tx[1], tx[2], tx[3], tx[0], tuple(others), scene_id, tuple(half_extents[str(tx[0])])))
    return snaps


# -- dataset ----------------------------------------------------------------


def _vehicle_extents(snapshots) -> dict:
    ext = {}
    for s in snapshots:
        ext[str(s.tx_vehicle_id)] = list(s.tx_half_extents)
        for v in s.dynamic_vehicles:
            ext[str(v.vehicle_id)] = list(v.half_extents)
    return dict(sorted(ext.items(), key=lambda kv: int(kv[0])))


def write_dataset(dataset: Dataset, path, extra: dict | None = None) -> dict:
    """Write every file atomically, then the manifest with their checksums."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files: dict[str, bytes] = {}
    scene = dataset.scene
    for name in ("building", "tree", "road"):
        files[f"masks/{name}.pgm"] = encode_pgm(getattr(scene, f"{name}_mask"))
    files["snapshots.csv"] = encode_snapshots(dataset.snapshots)
    for g in dataset.graphs:
        files[f"graphs/{g.snapshot_id}.bin"] = encode_graph(g)
    for s, img in zip(dataset.snapshots, dataset.images):
        files[f"images/{s.snapshot_id}.ppm"] = encode_ppm(img)
    if dataset.baseline is not None:
        files["baseline.txt"] = dataset.baseline.to_text().encode()
    for rel, data in files.items():
        atomic_write(root / rel, data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "scenario_kind": scene.config.scenario_kind,
        "scene_id": scene.scene_id,
        "scene_config": asdict(scene.config),
        "scene_seed": scene.config.seed,
        "trajectory_seed": dataset.trajectory_seed,
        "counts": {"snapshots": len(dataset.snapshots), "rx": len(scene.rx_positions), "vehicles": scene.config.num_vehicles},
        "oracle_params": asdict(dataset.oracle_params),
        "graph_config": asdict(dataset.graph_config),
        "image_size": int(dataset.images.shape[1]) if len(dataset.images) else None,
        "baseline_id": dataset.baseline.model_id if dataset.baseline else None,
        "split": dataset.split.to_dict(),
        "vehicle_half_extents": _vehicle_extents(dataset.snapshots),
        "checksums": {rel: hashlib.sha256(data).hexdigest() for rel, data in sorted(files.items())},
    }
    if extra:
        manifest["run"] = extra
    atomic_write(root / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return manifest


def read_manifest(path) -> dict:
    mpath = Path(path) / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IntegrityError(f"{mpath}: missing manifest") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{mpath}: invalid JSON ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{mpath}: unsupported format_version {manifest.get('format_version')}")
    return manifest


def _read_checked(root: Path, rel: str, manifest: dict) -> bytes:
    p = root / rel
    try:
        data = p.read_bytes()
    except FileNotFoundError:
        raise IntegrityError(f"{rel}: missing file") from None
    if hashlib.sha256(data).hexdigest() != manifest["checksums"].get(rel):
        raise IntegrityError(f"{rel}: checksum mismatch")
    return data


def read_dataset(path) -> Dataset:
    root = Path(path)
    manifest = read_manifest(root)
    for rel in manifest["checksums"]:
        _read_checked(root, rel, manifest)
    config = SceneConfig(**manifest["scene_config"])
    scene = generate_scene(config)
    for name in ("building", "tree", "road"):
        rel = f"masks/{name}.pgm"
        mask = decode_pgm(_read_checked(root, rel, manifest), rel)
        if not np.array_equal(mask, getattr(scene, f"{name}_mask")):
            raise IntegrityError(f"{rel}: mask disagrees with the regenerated scene")
        setattr(scene, f"{name}_mask", mask)
    snaps = decode_snapshots(_read_checked(root, "snapshots.csv", manifest), scene.scene_id, manifest["vehicle_half_extents"])
    graphs, images = [], []
    for s in snaps:
        rel = f"graphs/{s.snapshot_id}.bin"
        graphs.append(decode_graph(_read_checked(root, rel, manifest), rel))
        rel = f"images/{s.snapshot_id}.ppm"
        images.append(decode_ppm(_read_checked(root, rel, manifest), rel))
    baseline = None
    if "baseline.txt" in manifest["checksums"]:
        baseline = BaselineModel.from_text(_read_checked(root, "baseline.txt", manifest).decode())
        if baseline.model_id != manifest["baseline_id"]:
            raise IntegrityError("baseline.txt: id does not match manifest")
    size = manifest["image_size"] or 64
    return Dataset(
        scene=scene,
        snapshots=snaps,
        graphs=graphs,
        images=np.stack(images) if images else np.zeros((0, size, size, 3)),
        split=SplitSpec.from_dict(manifest["split"]),
        oracle_params=OracleParams(**manifest["oracle_params"]),
        graph_config=GraphConfig(**manifest["graph_config"]),
        baseline=baseline,
        trajectory_seed=manifest["trajectory_seed"],
        extra={"manifest": manifest},
    )
