"""U-Net family segmentation (plain, batch-, layer- and batch-instance-normalized)
on a small reverse-mode autodiff core, with augmentation, metrics and
synthetic left-ventricle phantoms."""

from .augmentation import AugPolicy, augment_batch
from .dataio import gen_phantom, load_checkpoint, load_pgm, save_checkpoint
from .errors import CinesegError
from .metrics import EvalReport, apd, dice, evaluate, sensitivity
from .network import NetworkConfig, Network, build
from .training import TrainConfig, evaluate_model, train

__version__ = "0.1.0"

__all__ = [
    "AugPolicy",
    "CinesegError",
    "EvalReport",
    "Network",
    "NetworkConfig",
    "TrainConfig",
    "apd",
    "augment_batch",
    "build",
    "dice",
    "evaluate",
    "evaluate_model",
    "gen_phantom",
    "load_checkpoint",
    "load_pgm",
    "save_checkpoint",
    "sensitivity",
    "train",
]
