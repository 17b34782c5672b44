"""Multi-modal residual graph network for mmWave V2I path-loss prediction.

A synthetic scene generator, physics feature extraction, ESPL graphs, a
least-squares physical baseline and a residual GNN with a visual branch.
"""

from .baselines import ABGParams, BaselineModel, abg, baseline_pl, fit_abg, fit_baseline, fspl, reconstruct_pl, residual_target, umi_los, umi_nlos
from .dataset import Dataset, build_dataset
from .errors import *  # noqa: F401,F403
from .features import FEATURE_DIM, FEATURE_GROUPS, LinkType, blockage_ratio, bresenham_cells, extract_link_features
from .graph import ESPLGraph, GraphConfig, build_espl_graph, knn_correlation_edges, select_k_nearest_rx
from .io import read_dataset, write_dataset
from .metrics import MetricsReport, compute_metrics
from .model import MMResGNN, ModelConfig, build_model, collate
from .oracle import OracleParams, oracle_path_loss
from .scene import SCENARIO_KINDS, Scene, SceneConfig, Snapshot, generate_scene, render_ego_image, simulate_trajectories
from .splits import SplitSpec, few_shot_subset, vehicle_wise_split
from .train import Checkpoint, TrainConfig, evaluate, train
from .variants import VARIANTS, TransferSpec, TransferStrategy, get_variant, list_variants, run_transfer, run_variant

__version__ = "0.1.0"
