"""Multi-grain multiple-instance learning for scene classification, in numpy."""
from .config import TrainConfig, desk_config, tiny_config
from .data import DatasetManifest, SyntheticSceneSpec, load_image, split_dataset, synth_generate
from .mbmir import BagDistribution, InstanceRepr, predict
from .model import compute_loss, forward, init_params
from .params import ModelParams
from .tensor import ConvKernel, Tape, Tensor
from .train import evaluate, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "BagDistribution", "ConvKernel", "DatasetManifest", "InstanceRepr", "ModelParams",
    "SyntheticSceneSpec", "Tape", "Tensor", "TrainConfig", "compute_loss", "desk_config",
    "evaluate", "forward", "init_params", "load_image", "lr_schedule", "predict",
    "split_dataset", "synth_generate", "tiny_config", "train",
]
