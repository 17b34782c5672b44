# %% [markdown]
# # Physical baseline versus empirical models
#
# The least-squares trend (log distance, static blockage, dynamic blocker
# flag) is fit on training vehicles only. Compare it with FSPL, a fitted
# alpha-beta-gamma model and the UMi street-canyon formula on held-out vehicles.

# %%
import numpy as np

from mmresgnn import GraphConfig, SceneConfig, build_dataset, run_variant
from mmresgnn.baselines import baseline_pl
from mmresgnn.graph import baseline_regressors

ds = build_dataset(SceneConfig("forking_road", num_rx=200, seed=2), 120, seed=2, graph_config=GraphConfig(K=30))
b = ds.baseline
print("baseline weights w0..w4:", np.round(b.w, 3))
print(f"fit rmse {b.fit_rmse:.2f} dB on {b.n_fit} links; residual mean {b.mu_res:.3f}, std {b.sigma_res:.3f}")

# %%
for vid in ("C1_fspl", "C1_umi", "C0"):
    r, _ = run_variant(vid, ds, "test")
    print(f"{vid:8s} MAE {r.mae:6.2f} dB  NMSE {r.nmse:.2e}  MAPE {r.mape:5.2f}%")
r, _ = run_variant("C1_abg", ds, "test", fit_abg_params=True)
print(f"{'C1_abg':8s} MAE {r.mae:6.2f} dB  (alpha/beta fit on train)")

# %% [markdown]
# What the network is asked to learn: the standardized residual left after
# the baseline. It should be roughly zero-mean with unit spread on train.

# %%
train_graphs, _ = ds.subset("train")
y = np.concatenate([g.y_target for g in train_graphs])
print(f"train residual target: mean {y.mean():+.3f}, std {y.std():.3f}")
test_graphs, _ = ds.subset("test")
reg = np.vstack([baseline_regressors(g) for g in test_graphs])
err = np.concatenate([g.pl_raw for g in test_graphs]) - baseline_pl(b, *reg.T)
print(f"test baseline error: mean {err.mean():+.2f} dB, std {err.std():.2f} dB")
