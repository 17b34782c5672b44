# %% [markdown]
# # Training the residual graph network
#
# A reduced-size model trained for a few epochs on a small wide-lane
# dataset, compared with the physical baseline and two ablations.
# Scale `EPOCHS` and the dataset up for real numbers.

# %%
import os
from dataclasses import replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from mmresgnn import GraphConfig, ModelConfig, SceneConfig, TrainConfig, build_dataset, run_variant

torch.set_num_threads(1)
OUT = os.environ.get("DEMO_OUT", "demo_output")
os.makedirs(OUT, exist_ok=True)
EPOCHS = int(os.environ.get("DEMO_EPOCHS", "20"))

ds = build_dataset(SceneConfig("wide_lane", num_rx=200, seed=0), 120, seed=0, graph_config=GraphConfig(K=30))
small = ModelConfig(hidden_dim=32, num_heads=4, num_layers=2, edge_group_dims=(8,) * 6, visual_feature_dim=32)
tcfg = TrainConfig(epochs=EPOCHS, batch_size=16, learning_rate=1e-3)

# %%
results, curves = {}, {}
for vid in ("C0", "A0", "A1", "A2"):
    rep, ckpt = run_variant(vid, ds, "test", tcfg, small)
    results[vid] = rep
    if ckpt is not None:
        curves[vid] = [h["val_mae"] for h in ckpt.history]
    print(f"{vid}: test MAE {rep.mae:.3f} dB")

# %% [markdown]
# A1 regresses the raw path loss directly; A2 drops the Rx-Rx correlation
# edges. Validation MAE per epoch:

# %%
fig, ax = plt.subplots(figsize=(6, 4))
for vid, c in curves.items():
    ax.plot(c, label=vid)
ax.axhline(results["C0"].mae, color="k", ls="--", label="C0 (test)")
ax.set_xlabel("epoch")
ax.set_ylabel("val MAE [dB]")
ax.legend()
fig.savefig(f"{OUT}/03_curves.png", dpi=100)
