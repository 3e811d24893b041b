"""Simulated indoor CIR trajectories and a disentangled latent-variable
positioning network, with reference baselines and a sweep harness."""
from .channel import ChannelParams, synthesize_cir, solve_tx_power
from .dataset import generate_samples, load_dataset, normalize_split, save_dataset
from .geometry import Point2D, Scene, WallSegment, specular_paths, two_room_scene
from .metrics import MetricsReport, compute_metrics
from .model import ModelConfig, MudiNet, TrainConfig, train

__version__ = "0.1.0"
