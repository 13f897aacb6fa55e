"""Privacy-preserving rosacea detection toolkit.

Builds a fixed redness-informed facial mask from rosacea-positive training
images, applies it uniformly to every input, trains a compact residual CNN
on the masked images, and evaluates the masked-versus-original trade-off
with a quantitative privacy audit.
"""

from .classifier import ModelConfig, TrainConfig, TrainedModel, forward, gradient_check, predict, train
from .dataset import LabeledDataset
from .image_core import CANONICAL_DIMS, ChannelPlane, Image, ImageDims, center_crop_resize, extract_channel, load_image, save_image
from .metrics import ConfusionMatrix, Metrics, compute_metrics, confusion
from .roi_mask import (
    BinaryMask,
    Box,
    LandmarkBoxes,
    MaskBuildReport,
    MaskSpec,
    apply_mask,
    build_mask,
    mask_dataset,
    mean_face,
    privacy_audit,
)
from .synthgen import DEFAULT_FACE_PARAMS, FaceParams, SplitCounts, gen_dataset, gen_face

__version__ = "0.1.0"
