"""Topology-preserving adversarial training on small numpy MLPs."""
from .attacks import AttackConfig, fgsm, margin_objective, pgd
from .datasets import LabeledBatch, gaussian_blobs, load_csv, save_csv, two_moons
from .evaluation import (
    TopologyScoreConfig,
    accuracy,
    evaluation_report,
    pgd20,
    robust_accuracy,
    topology_score,
)
from .model import Mlp, forward, init_mlp, load_checkpoint, save_checkpoint
from .numerics import finite_diff_grad, make_rng, softmax_rows
from .topology import cosine_distances, neighbor_graph, offsets, topology_loss
from .training import MethodSpec, TrainConfig, lambda_at, train

__version__ = "0.1.0"
