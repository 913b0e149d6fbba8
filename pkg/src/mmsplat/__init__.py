"""Differentiable multimodal 2D Gaussian splatting with per-modality indicators."""

from .config import ConfigError, TrainConfig, load_config, method_config
from .density import DensifyConfig, DensifyReport, PruneMode, decompose, densify_and_prune
from .io import DataError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .rasterizer import CompositeTrace, ModalityImage, render_all, render_modality
from .scene import ModalGaussian, ModalityDescriptor, Mode, Scene, Viewport, standard_modalities
from .train import RunReport, ablate, evaluate, train

__version__ = "0.1.0"
