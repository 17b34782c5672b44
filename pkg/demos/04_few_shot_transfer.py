# %% [markdown]
# # Few-shot transfer across scenarios
#
# Pre-train on a crossroad, then adapt to a forking road using 5% to 100% of
# its training vehicles: from scratch, full fine-tuning, or with the backbone
# frozen and only the fusion/head trained.

# %%
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from mmresgnn import GraphConfig, ModelConfig, SceneConfig, TrainConfig, TransferSpec, build_dataset, train
from mmresgnn.splits import FEW_SHOT_RATIOS
from mmresgnn.variants import model_config_for, run_transfer

torch.set_num_threads(1)
OUT = os.environ.get("DEMO_OUT", "demo_output")
os.makedirs(OUT, exist_ok=True)
EPOCHS = int(os.environ.get("DEMO_EPOCHS", "6"))

gc = GraphConfig(K=25)
source = build_dataset(SceneConfig("crossroad", num_rx=150, seed=4), 100, seed=4, graph_config=gc)
target = build_dataset(SceneConfig("forking_road", num_rx=150, seed=5), 100, seed=5, graph_config=gc)
small = ModelConfig(hidden_dim=32, num_heads=4, num_layers=2, edge_group_dims=(8,) * 6, visual_feature_dim=32)
tcfg = TrainConfig(epochs=EPOCHS, batch_size=16, learning_rate=1e-3)

src_ckpt, _ = train(source, model_config_for("A0", source, small), tcfg)

# %%
curves = {}
for strategy in ("scratch", "full_finetune", "frozen_backbone"):
    maes = []
    for ratio in FEW_SHOT_RATIOS:
        spec = TransferSpec(strategy, None if strategy == "scratch" else src_ckpt, ratio)
        rep, ck = run_transfer(spec, target, tcfg, small)
        maes.append(rep.mae)
        print(f"{strategy:16s} ratio {ratio:4.2f} ({len(ck.meta['few_shot_vehicles'])} vehicles): MAE {rep.mae:.3f} dB")
    curves[strategy] = maes

# %%
fig, ax = plt.subplots(figsize=(6, 4))
for k, v in curves.items():
    ax.plot(FEW_SHOT_RATIOS, v, marker="o", label=k)
ax.set_xscale("log")
ax.set_xlabel("fraction of target training vehicles")
ax.set_ylabel("target test MAE [dB]")
ax.legend()
fig.savefig(f"{OUT}/04_transfer.png", dpi=100)
