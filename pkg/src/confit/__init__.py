"""Two-stage contrastive fine-tuning for frame-sequence classifiers, with
representation diagnostics.
"""

__version__ = "0.1.0"

from .dataio import Dataset, FrameSequence, SynthSpec, generate_clusters, load_frames_csv, save_frames_csv
from .diagnostics import anisotropy, dim_contribution, difficult_groups, pca_project_2d
from .supcon import SupConConfig, mine_hard_pairs, mined_supcon_loss, supcon_loss
from .trainer import GridSearchSpec, TrainConfig, evaluate, finetune_baseline, linear_probe, pairtune

__all__ = [
    "Dataset", "FrameSequence", "SynthSpec", "generate_clusters", "load_frames_csv", "save_frames_csv",
    "anisotropy", "dim_contribution", "difficult_groups", "pca_project_2d",
    "SupConConfig", "mine_hard_pairs", "mined_supcon_loss", "supcon_loss",
    "GridSearchSpec", "TrainConfig", "evaluate", "finetune_baseline", "linear_probe", "pairtune",
]
