import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from mmresgnn.errors import InvalidConfig, IsolatedNode, ShapeMismatch
from mmresgnn.model import (
    EdgeGate,
    Fusion,
    GraphLayer,
    GroupedEdgeEncoder,
    VisualEncoder,
    build_model,
    collate,
    gated_fuse,
    predict_pl,
    scatter_softmax,
    visual_encode,
)
from mmresgnn.train import predict_residuals

from conftest import small_config, tiny_config


def _batch(ds, n=3, use_corr=True):
    return collate(ds.graphs[:n], ds.images[:n], use_corr)


def permute_rx(graph, perm):
    """Same graph with Rx node i+1 moved to position where(perm == i) + 1."""
    inv = np.argsort(perm)
    new_of_old = np.r_[0, inv + 1]
    return replace(
        graph,
        node_positions=np.vstack([graph.node_positions[:1], graph.node_positions[1:][perm]]),
        rx_indices=graph.rx_indices[perm],
        tx_features=graph.tx_features[perm],
        pl_raw=graph.pl_raw[perm],
        pl_base=graph.pl_base[perm],
        y_target=graph.y_target[perm],
        corr_edges=new_of_old[graph.corr_edges],
    )


def test_model_config_validation():
    with pytest.raises(InvalidConfig):
        tiny_config(hidden_dim=9)
    with pytest.raises(InvalidConfig):
        tiny_config(fusion="sum")
    with pytest.raises(InvalidConfig):
        tiny_config(feature_mask=("nope",))
    cfg = tiny_config(feature_mask=("speed",))
    assert type(cfg).from_dict(cfg.to_dict()) == cfg


def test_scatter_softmax_closure():
    torch.manual_seed(0)
    logits = torch.randn(50, 3) * 10
    index = torch.randint(0, 7, (50,))
    a = scatter_softmax(logits, index, 7)
    sums = torch.zeros(7, 3).index_add_(0, index, a)
    present = torch.bincount(index, minlength=7) > 0
    assert torch.allclose(sums[present], torch.ones_like(sums[present]), atol=1e-6)
    single = scatter_softmax(torch.tensor([[3.0, -2.0]]), torch.tensor([0]), 1)
    assert torch.equal(single, torch.ones(1, 2))


def test_edge_encoder_normalized_and_masked(small_dataset):
    cfg = small_config(small_dataset)
    enc = GroupedEdgeEncoder(cfg)
    x = torch.as_tensor(small_dataset.graphs[0].tx_features, dtype=torch.float32)
    out = enc(x)
    assert torch.allclose(out.mean(-1), torch.zeros(len(x)), atol=1e-5)
    assert torch.allclose(out.var(-1, unbiased=False), torch.ones(len(x)), atol=1e-3)
    assert torch.equal(enc(x[:1]), enc(x[:1].clone()))
    masked = GroupedEdgeEncoder(replace(cfg, feature_mask=("static_blockage",)))
    y = x.clone()
    y[:, 2:4] = torch.rand(len(x), 2)
    assert torch.equal(masked(x), masked(y))
    assert not torch.equal(enc(x), enc(y))


def test_single_in_neighbour_weight_is_one():
    cfg = tiny_config()
    layer = GraphLayer(cfg)
    h, h_e = torch.randn(3, 8), torch.randn(2, 8)
    edge_index = torch.tensor([[0, 1], [1, 2]])
    alpha = layer.attention(h, h_e, edge_index[0], edge_index[1], 3)
    assert torch.equal(alpha, torch.ones(2, 2))


def test_gate_saturation_keeps_edge_state():
    gate = EdgeGate(8)
    with torch.no_grad():
        last = gate.net[-1]
        last.weight.zero_()
        last.bias.copy_(torch.tensor([1e4, -1e4, -1e4]))
    h_e, h_u, h_v = torch.randn(5, 8), torch.randn(5, 8), torch.randn(5, 8)
    out, g = gate(h_e, h_u, h_v)
    assert torch.equal(out, h_e)
    assert torch.equal(g, torch.tensor([[1.0, 0.0, 0.0]]).expand(5, 3))


@pytest.mark.parametrize("operator", ["edge_transformer", "gcn", "gat"])
def test_attention_and_gates_sum_to_one(small_dataset, operator):
    model = build_model(small_config(small_dataset, gnn_operator=operator))
    batch = _batch(small_dataset)
    _, diag = model(batch, return_diagnostics=True)
    n = batch.node_x.shape[0]
    dst = batch.edge_index[1]
    for alpha, gate in zip(diag["attention"], diag["edge_gates"]):
        sums = torch.zeros(n, alpha.shape[1], dtype=alpha.dtype).index_add_(0, dst, alpha)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        assert torch.allclose(gate.sum(-1), torch.ones(len(gate)), atol=1e-6)
    w = diag["fusion_w"]
    assert torch.all((w > 0) & (w < 1))


def test_fusion_properties():
    cfg = tiny_config()
    fusion = Fusion(cfg)
    f_geo, f_vis = torch.randn(6, 8), torch.randn(6, 8)
    out, w = gated_fuse(f_geo, f_geo, fusion)
    assert torch.allclose(out, f_geo, atol=1e-7)
    with torch.no_grad():
        fusion.gate.weight.zero_()
        fusion.gate.bias.fill_(1e4)
    out, w = gated_fuse(f_geo, f_vis, fusion)
    assert torch.equal(w, torch.ones(6)) and torch.allclose(out, f_geo)
    for mode in ("concat", "cross_attention"):
        out, w = Fusion(tiny_config(fusion=mode))(f_geo, f_vis)
        assert out.shape == (6, 8) and w is None


def test_topology_aware_map(small_dataset):
    model = build_model(small_config(small_dataset))
    batch = _batch(small_dataset, 2)
    _, diag = model(batch, return_diagnostics=True)
    f_vis = diag["f_vis"]
    corr = ~batch.edge_is_tx
    assert corr.any() and torch.all(f_vis[corr] == 0)
    g0 = batch.edge_is_tx & (batch.edge_graph == 0)
    assert torch.all(f_vis[g0] == f_vis[g0][0])
    c4 = build_model(small_config(small_dataset, use_visual=False))
    _, diag = c4(batch, return_diagnostics=True)
    assert torch.all(diag["f_vis"] == 0)


def test_visual_encoder_freeze_and_zero_image():
    enc = VisualEncoder("compact_cnn", freeze_depth=4, out_dim=8)
    assert not any(p.requires_grad for p in enc.parameters())
    before = {k: v.clone() for k, v in enc.state_dict().items()}
    params = [p for p in enc.parameters()]
    opt = torch.optim.SGD(params, lr=0.1)
    loss = enc(torch.rand(2, 3, 16, 16)).sum()
    opt.zero_grad()
    if loss.requires_grad:
        loss.backward()
    opt.step()
    for k, v in enc.state_dict().items():
        assert torch.equal(v, before[k])
    z1 = visual_encode(np.zeros((16, 16, 3)), enc)
    z2 = visual_encode(np.zeros((16, 16, 3)), enc)
    assert torch.equal(z1, z2)
    with pytest.raises(ShapeMismatch):
        visual_encode(np.zeros((16, 16)), enc)
    deep = VisualEncoder("deep_cnn", 0, 8)
    assert sum(p.numel() for p in deep.parameters()) > sum(p.numel() for p in enc.parameters())


def test_visual_stage_gradient_matches_fd():
    torch.manual_seed(0)
    enc = VisualEncoder("compact_cnn", freeze_depth=1, out_dim=8).double()
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    w = torch.randn(8, dtype=torch.float64)
    p = enc.stages[1][0].conv1.weight
    enc.zero_grad()
    (enc(x) @ w).sum().backward()
    assert enc.stages[0][0].conv1.weight.grad is None
    flat = p.data.view(-1)
    for i in range(0, flat.numel(), 7):
        old = flat[i].item()
        flat[i] = old + 1e-6
        up = (enc(x) @ w).sum().item()
        flat[i] = old - 1e-6
        down = (enc(x) @ w).sum().item()
        flat[i] = old
        fd = (up - down) / 2e-6
        an = p.grad.view(-1)[i].item()
        assert abs(an - fd) <= 1e-4 * max(abs(an), abs(fd), 1e-3)


def test_forward_shapes_and_determinism(small_dataset):
    cfg = small_config(small_dataset)
    batch = _batch(small_dataset, 4)
    a = build_model(cfg)(batch)
    b = build_model(cfg)(batch)
    assert a.shape == (4 * 20,)
    assert torch.equal(a, b)
    for arch in ("edge_mlp", "vision_only"):
        assert build_model(replace(cfg, architecture=arch))(batch).shape == (80,)


@pytest.mark.parametrize("fusion", ["gated", "cross_attention"])
def test_permutation_equivariance(small_dataset, fusion):
    model = build_model(small_config(small_dataset, fusion=fusion)).double()
    g = small_dataset.graphs[5]
    perm = np.random.default_rng(1).permutation(g.K)
    gp = permute_rx(g, perm)
    img = small_dataset.images[5:6]
    out = model(collate([g], img).to(torch.float64)).detach().numpy()
    out_p = model(collate([gp], img).to(torch.float64)).detach().numpy()
    np.testing.assert_allclose(out_p, out[perm], atol=1e-10)


def test_isolated_node_rejected(small_dataset):
    model = build_model(small_config(small_dataset))
    batch = _batch(small_dataset, 1)
    keep = batch.edge_index[1] != 1
    batch.edge_index = batch.edge_index[:, keep]
    with pytest.raises(IsolatedNode):
        model(batch)


def test_predict_pl(small_dataset):
    ds = small_dataset
    g = ds.graphs[0]
    out = predict_pl(torch.as_tensor(g.y_target), g, ds.baseline)
    np.testing.assert_allclose(out, g.pl_raw, atol=1e-9)


def test_batching_is_per_graph(small_dataset):
    model = build_model(small_config(small_dataset))
    ds = small_dataset
    joint = predict_residuals(model, ds.graphs[:4], ds.images[:4], batch_size=4)
    single = np.concatenate([predict_residuals(model, [g], ds.images[i : i + 1]) for i, g in enumerate(ds.graphs[:4])])
    np.testing.assert_allclose(joint, single, atol=1e-5)


def _fd_check(model, batch, weights, max_per_tensor=None, h=1e-6):
    """Per-module relative error between autograd and central differences."""
    model.zero_grad()
    (model(batch) * weights).sum().backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            if not p.requires_grad:
                continue
            group = name.split(".")[0]
            flat = p.data.view(-1)
            idx = range(flat.numel()) if max_per_tensor is None else np.linspace(0, flat.numel() - 1, min(max_per_tensor, flat.numel())).astype(int)
            an, fd = [], []
            for i in idx:
                old = flat[i].item()
                flat[i] = old + h
                up = (model(batch) * weights).sum().item()
                flat[i] = old - h
                down = (model(batch) * weights).sum().item()
                flat[i] = old
                fd.append((up - down) / (2 * h))
                an.append(p.grad.view(-1)[i].item())
            a, f = errors.setdefault(group, ([], []))
            a.extend(an)
            f.extend(fd)
    out = {}
    for group, (a, f) in errors.items():
        a, f = np.array(a), np.array(f)
        scale = max(np.linalg.norm(a), np.linalg.norm(f), 1e-8)
        out[group] = float(np.linalg.norm(a - f) / scale)
    return out


def test_gradient_check_sampled(tiny_dataset):
    ds = tiny_dataset
    cfg = tiny_config(scene_extent=ds.scene.config.extent)
    model = build_model(cfg).double()
    model.eval()
    batch = collate(ds.graphs[:1], ds.images[:1]).to(torch.float64)
    weights = torch.randn(len(batch.pred_edges), dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    errs = _fd_check(model, batch, weights, max_per_tensor=6)
    assert set(errs) >= {"edge_encoder", "node_encoder", "layers", "visual", "visual_map", "fusion", "head"}
    assert max(errs.values()) <= 1e-4, errs
