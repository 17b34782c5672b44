# %% [markdown]
# # A synthetic street scene and its path-loss oracle
#
# Generate a crossroad, put vehicles on it, look at what the Tx "sees", and
# check how the oracle's path loss depends on distance and blockage.

# %%
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mmresgnn import SceneConfig, extract_link_features, generate_scene, oracle_path_loss, render_ego_image, simulate_trajectories
from mmresgnn.baselines import fspl

OUT = os.environ.get("DEMO_OUT", "demo_output")
os.makedirs(OUT, exist_ok=True)

scene = generate_scene(SceneConfig("crossroad", num_rx=200, seed=0))
snaps = simulate_trajectories(scene, 5, seed=0)
snap = snaps[0]
print(scene.scene_id, "vehicles:", scene.config.num_vehicles, "rx:", len(scene.rx_positions))

# %% [markdown]
# Static layout (buildings, trees), receivers and the vehicles of one snapshot.

# %%
fig, ax = plt.subplots(1, 2, figsize=(10, 5))
layout = scene.building_mask * 2 + scene.tree_mask
extent = (0, scene.config.extent[0], 0, scene.config.extent[1])
ax[0].imshow(layout, origin="lower", cmap="Greys", extent=extent)
ax[0].scatter(*scene.rx_positions[:, :2].T, s=3, c="tab:blue", label="Rx")
ax[0].scatter(*np.array([v.position[:2] for v in snap.dynamic_vehicles]).T, s=12, c="tab:orange", label="vehicles")
ax[0].scatter(*snap.tx_position[:2], marker="*", s=150, c="red", label="Tx")
ax[0].legend(loc="upper right", fontsize=7)
img = render_ego_image(scene, snap, size=64)
ax[1].imshow(img.pixels, origin="lower")
ax[1].set_title("heading-up ego view (R=building G=tree B=vehicle)")
fig.savefig(f"{OUT}/01_scene.png", dpi=100)

# %% [markdown]
# Oracle path loss against FSPL. The excess loss comes from blockage,
# shadowing and noise.

# %%
d, pl, rb = [], [], []
for i, rx in enumerate(scene.rx_positions):
    f = extract_link_features(scene, snap, rx)
    d.append(np.linalg.norm(rx - snap.tx_position))
    pl.append(oracle_path_loss(scene, snap, rx, rx_index=i, features=f))
    rb.append(f[2])  # building blockage ratio
d, pl, rb = map(np.asarray, (d, pl, rb))
excess = pl - fspl(d, scene.config.carrier_freq)
print(f"mean excess loss over FSPL: {excess.mean():.2f} dB")
print(f"corr(excess, building ratio): {np.corrcoef(excess, rb)[0, 1]:.2f}")

fig, ax = plt.subplots(figsize=(6, 4))
sc = ax.scatter(d, pl, c=rb, s=8, cmap="viridis")
dd = np.linspace(d.min(), d.max(), 100)
ax.plot(dd, fspl(dd, scene.config.carrier_freq), "k--", label="FSPL")
ax.set_xscale("log")
ax.set_xlabel("distance [m]")
ax.set_ylabel("path loss [dB]")
fig.colorbar(sc, label="building blockage ratio")
ax.legend()
fig.savefig(f"{OUT}/01_oracle.png", dpi=100)
