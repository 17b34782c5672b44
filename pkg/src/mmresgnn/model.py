"""Residual-corrected multi-modal graph network and its degenerate variants.

Edges are directed ``src -> dst``; for the attention update of node ``u``
the in-neighbours ``v`` are the sources of edges whose destination is ``u``.
Each graph contributes, in order: K Tx->Rx edges, K Rx->Tx edges, then its
directed Rx-Rx correlation edges. Predictions are read off the Tx->Rx edges.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .baselines import reconstruct_pl
from .errors import InvalidConfig, IsolatedNode, ShapeMismatch
from .features import FEATURE_DIM, FEATURE_GROUPS, FEATURE_SLICES

ARCHITECTURES = ("mm_resgnn", "edge_mlp", "vision_only")
BACKBONES = ("compact_cnn", "deep_cnn")
FUSIONS = ("gated", "concat", "cross_attention")
OPERATORS = ("edge_transformer", "gcn", "gat")


@dataclass
class ModelConfig:
    architecture: str = "mm_resgnn"
    hidden_dim: int = 128
    num_layers: int = 3
    num_heads: int = 4
    edge_group_dims: tuple = (32, 32, 32, 32, 32, 16)
    visual_feature_dim: int = 128
    backbone: str = "compact_cnn"
    backbone_freeze_depth: int = 0
    fusion: str = "gated"
    gnn_operator: str = "edge_transformer"
    use_visual: bool = True
    use_correlation_edges: bool = True
    direct_regression: bool = False
    flat_edge_encoder: bool = False
    feature_mask: tuple = ()
    position_frequencies: int = 5
    image_size: int = 64
    window: float = 60.0
    scene_extent: tuple = (128.0, 128.0)
    seed: int = 0

    def __post_init__(self):
        self.edge_group_dims = tuple(self.edge_group_dims)
        self.feature_mask = tuple(self.feature_mask)
        self.scene_extent = tuple(self.scene_extent)
        if self.architecture not in ARCHITECTURES:
            raise InvalidConfig(f"architecture must be one of {ARCHITECTURES}")
        if self.backbone not in BACKBONES:
            raise InvalidConfig(f"backbone must be one of {BACKBONES}")
        if self.fusion not in FUSIONS:
            raise InvalidConfig(f"fusion must be one of {FUSIONS}")
        if self.gnn_operator not in OPERATORS:
            raise InvalidConfig(f"gnn_operator must be one of {OPERATORS}")
        if min(self.hidden_dim, self.num_layers, self.num_heads, self.visual_feature_dim) <= 0:
            raise InvalidConfig("dimensions must be positive")
        if self.hidden_dim % self.num_heads:
            raise InvalidConfig("hidden_dim must be divisible by num_heads")
        if len(self.edge_group_dims) != len(FEATURE_GROUPS):
            raise InvalidConfig("edge_group_dims needs one width per feature group")
        unknown = set(self.feature_mask) - set(FEATURE_SLICES)
        if unknown:
            raise InvalidConfig(f"unknown feature_mask entries {sorted(unknown)}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("edge_group_dims", "feature_mask", "scene_extent"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# -- batching ---------------------------------------------------------------


@dataclass
class GraphBatch:
    node_x: torch.Tensor
    edge_index: torch.Tensor
    edge_attr: torch.Tensor
    edge_is_tx: torch.Tensor
    edge_graph: torch.Tensor
    pred_edges: torch.Tensor
    images: torch.Tensor
    num_graphs: int
    target: Optional[torch.Tensor] = None
    pl_raw: Optional[np.ndarray] = None
    pl_base: Optional[np.ndarray] = None

    def to(self, dtype) -> "GraphBatch":
        out = GraphBatch(**{f.name: getattr(self, f.name) for f in fields(self)})
        for name in ("node_x", "edge_attr", "images", "target"):
            t = getattr(out, name)
            if t is not None:
                setattr(out, name, t.to(dtype))
        return out


def collate(graphs, images, use_correlation_edges: bool = True, targets=None) -> GraphBatch:
    """Concatenate graphs into one disjoint graph.

    ``targets`` is an optional list of per-graph K-vectors (defaults to the
    graphs' ``y_target``).
    """
    node_x, src, dst, attr, is_tx, egraph, pred = [], [], [], [], [], [], []
    offset = 0
    n_edges = 0
    for gi, g in enumerate(graphs):
        K = g.K
        rx_nodes = g.tx_edges[:, 1] + offset
        tx_node = np.full(K, offset)
        parts_src = [tx_node, rx_nodes]
        parts_dst = [rx_nodes, tx_node]
        parts_attr = [g.tx_features, g.tx_features]
        if use_correlation_edges and len(g.corr_edges):
            parts_src.append(g.corr_edges[:, 0] + offset)
            parts_dst.append(g.corr_edges[:, 1] + offset)
            parts_attr.append(g.corr_features)
        s = np.concatenate(parts_src)
        src.append(s)
        dst.append(np.concatenate(parts_dst))
        attr.append(np.vstack(parts_attr))
        flag = np.zeros(len(s), dtype=bool)
        flag[: 2 * K] = True
        is_tx.append(flag)
        egraph.append(np.full(len(s), gi))
        pred.append(np.arange(K) + n_edges)
        node_x.append(g.node_features())
        offset += g.num_nodes
        n_edges += len(s)
    if targets is None:
        targets = [g.y_target for g in graphs]
    target = torch.as_tensor(np.concatenate(targets), dtype=torch.float32) if targets is not None else None
    imgs = np.asarray(images, dtype=np.float32)
    return GraphBatch(
        node_x=torch.as_tensor(np.vstack(node_x), dtype=torch.float32),
        edge_index=torch.as_tensor(np.stack([np.concatenate(src), np.concatenate(dst)]), dtype=torch.long),
        edge_attr=torch.as_tensor(np.vstack(attr), dtype=torch.float32),
        edge_is_tx=torch.as_tensor(np.concatenate(is_tx)),
        edge_graph=torch.as_tensor(np.concatenate(egraph), dtype=torch.long),
        pred_edges=torch.as_tensor(np.concatenate(pred), dtype=torch.long),
        images=torch.from_numpy(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2))),
        num_graphs=len(graphs),
        target=target,
        pl_raw=np.concatenate([g.pl_raw for g in graphs]),
        pl_base=np.concatenate([g.pl_base for g in graphs]),
    )


def scatter_softmax(logits: torch.Tensor, index: torch.Tensor, num_nodes: int) -> torch.Tensor:
    """Softmax of ``logits`` (E, H) over edges sharing the same ``index``."""
    idx = index.unsqueeze(-1).expand_as(logits)
    peak = torch.full((num_nodes, logits.shape[1]), -torch.inf, dtype=logits.dtype)
    peak = peak.scatter_reduce(0, idx, logits.detach(), reduce="amax", include_self=True)
    ex = torch.exp(logits - peak[index])
    denom = torch.zeros((num_nodes, logits.shape[1]), dtype=logits.dtype).index_add_(0, index, ex)
    return ex / denom[index]


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.GELU(), nn.Linear(d_hidden, d_out))


# -- encoders ---------------------------------------------------------------


class GroupedEdgeEncoder(nn.Module):
    """One small MLP per feature group, concatenated, projected, layer-normed."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.flat = config.flat_edge_encoder
        keep = torch.ones(FEATURE_DIM)
        for name in config.feature_mask:
            keep[list(FEATURE_SLICES[name])] = 0.0
        self.register_buffer("feature_keep", keep)
        h = config.hidden_dim
        if self.flat:
            self.encoder = _mlp(FEATURE_DIM, h, h)
        else:
            self.groups = list(FEATURE_GROUPS.values())
            self.group_mlps = nn.ModuleList(
                _mlp(b - a, w, w) for (a, b), w in zip(self.groups, config.edge_group_dims)
            )
            self.project = nn.Linear(sum(config.edge_group_dims), h)
        self.norm = nn.LayerNorm(h)

    def forward(self, edge_attr: torch.Tensor) -> torch.Tensor:
        x = edge_attr * self.feature_keep
        if self.flat:
            return self.norm(self.encoder(x))
        parts = [mlp(x[:, a:b]) for (a, b), mlp in zip(self.groups, self.group_mlps)]
        return self.norm(self.project(torch.cat(parts, dim=-1)))


class NodeEncoder(nn.Module):
    """Tx-relative offsets, Fourier features of the absolute position, Tx flag."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.window = config.window
        self.register_buffer("extent", torch.tensor(config.scene_extent[:2], dtype=torch.float32))
        self.register_buffer("freqs", math.pi * 2.0 ** torch.arange(config.position_frequencies, dtype=torch.float32))
        d_in = 3 + 4 * config.position_frequencies + 1
        self.mlp = _mlp(d_in, config.hidden_dim, config.hidden_dim)

    def forward(self, node_x: torch.Tensor) -> torch.Tensor:
        rel = node_x[:, 0:3] / self.window
        absxy = node_x[:, 3:5] / self.extent.to(node_x.dtype)
        ang = absxy.unsqueeze(-1) * self.freqs.to(node_x.dtype)
        fourier = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(1)
        return self.mlp(torch.cat([rel, fourier, node_x[:, 6:7]], dim=-1))


def _group_norm(c: int) -> nn.GroupNorm:
    # at least 4 channels per group so 1x1 maps still normalize
    return nn.GroupNorm(min(8, max(1, c // 4)), c)


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.norm1 = _group_norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.norm2 = _group_norm(c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), _group_norm(c_out))

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class VisualEncoder(nn.Module):
    """Staged residual CNN; embedding = global average pool of the last stage.

    ``compact_cnn`` has four single-block stages, ``deep_cnn`` four stages of
    three blocks at twice the width. The first ``freeze_depth`` stages are
    excluded from gradient updates.
    """

    def __init__(self, backbone: str = "compact_cnn", freeze_depth: int = 0, out_dim: int = 128):
        super().__init__()
        if backbone == "compact_cnn":
            widths = [max(out_dim // 8, 4), max(out_dim // 4, 4), max(out_dim // 2, 4), out_dim]
            blocks = 1
        else:
            widths = [max(out_dim // 4, 4), max(out_dim // 2, 4), out_dim, out_dim]
            blocks = 3
        stages, c_in = [], 3
        for w in widths:
            layers = [BasicBlock(c_in, w, 2)] + [BasicBlock(w, w, 1) for _ in range(blocks - 1)]
            stages.append(nn.Sequential(*layers))
            c_in = w
        self.stages = nn.ModuleList(stages)
        self.out_dim = out_dim
        self.freeze(freeze_depth)

    def freeze(self, depth: int) -> None:
        self.freeze_depth = max(0, min(depth, len(self.stages)))
        for i, stage in enumerate(self.stages):
            for p in stage.parameters():
                p.requires_grad_(i >= self.freeze_depth)

    def load_pretrained(self, state_dict: dict, strict: bool = False) -> None:
        """Load external backbone weights (keys relative to this module)."""
        self.load_state_dict(state_dict, strict=strict)
        self.freeze(self.freeze_depth)

    def feature_map(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeMismatch(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        x = images
        for stage in self.stages:
            x = stage(x)
        return x

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.feature_map(images).mean(dim=(2, 3))


# -- message passing --------------------------------------------------------


class EdgeGate(nn.Module):
    """Softmax gate producing (alpha, beta, gamma) for the edge update."""

    def __init__(self, hidden: int):
        super().__init__()
        self.net = _mlp(3 * hidden, hidden, 3)

    def forward(self, h_e, h_u, h_v):
        logits = self.net(torch.cat([h_e, h_u, h_v], dim=-1))
        g = torch.softmax(logits, dim=-1)
        out = g[:, 0:1] * h_e + g[:, 1:2] * h_u + g[:, 2:3] * h_v
        return out, g


class GraphLayer(nn.Module):
    """Edge-aware multi-head attention (or GCN/GAT aggregation) plus edge update."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        h = config.hidden_dim
        self.operator = config.gnn_operator
        self.heads = config.num_heads
        self.head_dim = config.head_dim
        self.w_v = nn.Linear(h, h)
        if self.operator == "edge_transformer":
            self.w_q = nn.Linear(h, h)
            self.w_k = nn.Linear(h, h)
            self.w_e = nn.Linear(h, h, bias=False)
        elif self.operator == "gat":
            self.att_src = nn.Parameter(torch.randn(self.heads, self.head_dim) / math.sqrt(self.head_dim))
            self.att_dst = nn.Parameter(torch.randn(self.heads, self.head_dim) / math.sqrt(self.head_dim))
        self.w_o = nn.Linear(h, h)
        self.norm = nn.LayerNorm(h)
        self.edge_gate = EdgeGate(h)

    def attention(self, h, h_e, src, dst, n):
        E, H, dk = len(src), self.heads, self.head_dim
        if self.operator == "edge_transformer":
            q = self.w_q(h)[dst].view(E, H, dk)
            k = (self.w_k(h)[src] + self.w_e(h_e)).view(E, H, dk)
            return scatter_softmax((q * k).sum(-1) / math.sqrt(dk), dst, n)
        if self.operator == "gat":
            wh = self.w_v(h).view(-1, H, dk)
            logits = F.leaky_relu((wh[src] * self.att_src).sum(-1) + (wh[dst] * self.att_dst).sum(-1), 0.2)
            return scatter_softmax(logits, dst, n)
        deg = torch.zeros(n, dtype=h.dtype).index_add_(0, dst, torch.ones(E, dtype=h.dtype))
        return (1.0 / deg[dst]).unsqueeze(-1).expand(E, H)

    def forward(self, h, h_e, edge_index):
        src, dst = edge_index
        n = h.shape[0]
        alpha = self.attention(h, h_e, src, dst, n)
        msg = alpha.unsqueeze(-1) * self.w_v(h)[src].view(-1, self.heads, self.head_dim)
        agg = torch.zeros(n, self.heads, self.head_dim, dtype=h.dtype).index_add_(0, dst, msg)
        h_new = self.norm(h + self.w_o(agg.reshape(n, -1)))
        # edge refinement reads the post-message-passing node states, so every
        # layer's attention reaches the edge readout
        h_e_new, gate = self.edge_gate(h_e, h_new[dst], h_new[src])
        return h_new, h_e_new, alpha, gate


# -- fusion -----------------------------------------------------------------


class Fusion(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        h = config.hidden_dim
        self.mode = config.fusion
        if self.mode == "gated":
            self.gate = nn.Linear(2 * h, 1)
        elif self.mode == "concat":
            self.proj = nn.Linear(2 * h, h)
        else:
            self.q = nn.Linear(h, h)
            self.k = nn.Linear(h, h)
            self.v = nn.Linear(h, h)
            self.o = nn.Linear(h, h)

    def forward(self, f_geo, f_vis, vis_tokens=None):
        """Returns (f_final, w) where ``w`` is the gate (None for other modes)."""
        if self.mode == "gated":
            w = torch.sigmoid(self.gate(torch.cat([f_geo, f_vis], dim=-1)))
            return w * f_geo + (1.0 - w) * f_vis, w.squeeze(-1)
        if self.mode == "concat":
            return self.proj(torch.cat([f_geo, f_vis], dim=-1)), None
        # single-head attention: each link queries the visual tokens of its image
        tokens = vis_tokens if vis_tokens is not None else f_vis.unsqueeze(1)
        q = self.q(f_geo).unsqueeze(1)
        scores = (q * self.k(tokens)).sum(-1) / math.sqrt(q.shape[-1])
        att = torch.softmax(scores, dim=-1).unsqueeze(-1)
        return f_geo + self.o((att * self.v(tokens)).sum(1)), None


def gated_fuse(f_geo, f_vis, fusion: Fusion, vis_tokens=None):
    return fusion(f_geo, f_vis, vis_tokens)


# -- models -----------------------------------------------------------------


class MMResGNN(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h = config.hidden_dim
        self.edge_encoder = GroupedEdgeEncoder(config)
        self.node_encoder = NodeEncoder(config)
        self.layers = nn.ModuleList(GraphLayer(config) for _ in range(config.num_layers))
        self.visual = VisualEncoder(config.backbone, config.backbone_freeze_depth, config.visual_feature_dim)
        self.visual_map = nn.Linear(config.visual_feature_dim, h)
        self.fusion = Fusion(config)
        self.head = _mlp(h, h, 1)

    def head_parameters(self):
        yield from self.head.parameters()
        yield from self.fusion.parameters()

    def topology_aware_map(self, visual_embedding: torch.Tensor, batch: GraphBatch) -> torch.Tensor:
        """Per-directed-edge visual features; zero on correlation edges."""
        E = batch.edge_index.shape[1]
        if not self.config.use_visual:
            return torch.zeros(E, self.config.hidden_dim, dtype=batch.edge_attr.dtype)
        mapped = self.visual_map(visual_embedding)[batch.edge_graph]
        return mapped * batch.edge_is_tx.unsqueeze(-1).to(mapped.dtype)

    def forward(self, batch: GraphBatch, return_diagnostics: bool = False):
        cfg = self.config
        edge_index = batch.edge_index
        deg = torch.bincount(edge_index[1], minlength=batch.node_x.shape[0])
        if (deg == 0).any():
            raise IsolatedNode(f"{int((deg == 0).sum())} node(s) without in-neighbours")
        h = self.node_encoder(batch.node_x)
        h_e = self.edge_encoder(batch.edge_attr)
        attn, gates = [], []
        for layer in self.layers:
            h, h_e, alpha, gate = layer(h, h_e, edge_index)
            attn.append(alpha)
            gates.append(gate)

        pe = batch.pred_edges
        f_geo = h_e[pe]
        vis_tokens = None
        if cfg.use_visual:
            fmap = self.visual.feature_map(batch.images)
            emb = fmap.mean(dim=(2, 3))
            f_vis_all = self.topology_aware_map(emb, batch)
            if cfg.fusion == "cross_attention":
                tokens = self.visual_map(fmap.flatten(2).transpose(1, 2))
                vis_tokens = tokens[batch.edge_graph[pe]]
        else:
            f_vis_all = self.topology_aware_map(None, batch)
            if cfg.fusion == "cross_attention":
                vis_tokens = torch.zeros(len(pe), 1, cfg.hidden_dim, dtype=f_geo.dtype)
        f_vis = f_vis_all[pe]
        f_final, w = self.fusion(f_geo, f_vis, vis_tokens)
        pred = self.head(f_final).squeeze(-1)
        if return_diagnostics:
            return pred, {"attention": attn, "edge_gates": gates, "fusion_w": w, "f_vis": f_vis_all}
        return pred


class EdgeMLP(nn.Module):
    """Per-link regressor on the edge features alone (no graph, no vision)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.edge_encoder = GroupedEdgeEncoder(config)
        self.head = _mlp(config.hidden_dim, config.hidden_dim, 1)

    def head_parameters(self):
        yield from self.head.parameters()

    def forward(self, batch: GraphBatch, return_diagnostics: bool = False):
        pred = self.head(self.edge_encoder(batch.edge_attr[batch.pred_edges])).squeeze(-1)
        return (pred, {}) if return_diagnostics else pred


class VisionOnly(nn.Module):
    """Image embedding plus log-distance conditioning, one output per link."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.visual = VisualEncoder(config.backbone, config.backbone_freeze_depth, config.visual_feature_dim)
        self.head = _mlp(config.visual_feature_dim + 1, config.hidden_dim, 1)

    def head_parameters(self):
        yield from self.head.parameters()

    def forward(self, batch: GraphBatch, return_diagnostics: bool = False):
        emb = self.visual(batch.images)
        pe = batch.pred_edges
        x = torch.cat([emb[batch.edge_graph[pe]], batch.edge_attr[pe, 0:1]], dim=-1)
        pred = self.head(x).squeeze(-1)
        return (pred, {}) if return_diagnostics else pred


def build_model(config: ModelConfig) -> nn.Module:
    torch.manual_seed(config.seed)
    cls = {"mm_resgnn": MMResGNN, "edge_mlp": EdgeMLP, "vision_only": VisionOnly}[config.architecture]
    return cls(config)


def visual_encode(image, encoder: VisualEncoder) -> torch.Tensor:
    """Embed a single EgoImage (or H x W x 3 array)."""
    pixels = getattr(image, "pixels", image)
    x = torch.as_tensor(np.asarray(pixels), dtype=next(encoder.parameters()).dtype)
    if x.dim() != 3 or x.shape[-1] != 3:
        raise ShapeMismatch(f"expected H x W x 3 image, got {tuple(x.shape)}")
    return encoder(x.permute(2, 0, 1).unsqueeze(0))[0]


def predict_pl(residual_hat, graph, baseline) -> np.ndarray:
    """Reconstruct dB path loss for one graph's transmission edges."""
    r = residual_hat.detach().cpu().numpy() if torch.is_tensor(residual_hat) else np.asarray(residual_hat)
    return reconstruct_pl(graph.pl_base, r, baseline.mu_res, baseline.sigma_res)
