"""Generative patch model with pose inference over large scenes.

A two-layer belief network (Gaussian visible layer, two binary hidden
layers) describes a small canonical image patch. A 4-parameter similarity
transform, the gaze, couples the patch to a scene canvas. Inference
alternates feed-forward gaze corrections from a two-stream ConvNet with
Hamiltonian Monte Carlo over the gaze and Gibbs steps over the patch;
Monte Carlo EM learns the patch model from scenes without pose labels.
"""

from .gdbn import GdbnModel, greedy_train, load_model, save_model
from .grbm import TrainHyper
from .image import Canvas, gradient_images, load_pnm, save_pnm
from .infer import InferenceSchedule, infer
from .warp import CanonicalImage, Gaze, PatchGrid, extract_patch

__version__ = "0.1.0"

__all__ = [
    "Canvas", "CanonicalImage", "Gaze", "GdbnModel", "InferenceSchedule",
    "PatchGrid", "TrainHyper", "extract_patch", "gradient_images",
    "greedy_train", "infer", "load_model", "load_pnm", "save_model",
    "save_pnm", "__version__",
]
