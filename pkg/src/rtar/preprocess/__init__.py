"""Raw frames to stream inputs: resize, optical flow, HOG, frame sampling."""

from .resize import bilinear_sample, grayscale_bt601, resize_bilinear
from .flow import FlowParams, compute_flow, horn_schunck_step
from .hog import HogDescriptor, HogParams, compute_hog, render_hog
from .pipeline import PreprocessConfig, preprocess_pair, sample_frames

__all__ = [
    "FlowParams",
    "HogDescriptor",
    "HogParams",
    "PreprocessConfig",
    "bilinear_sample",
    "compute_flow",
    "compute_hog",
    "grayscale_bt601",
    "horn_schunck_step",
    "preprocess_pair",
    "render_hog",
    "resize_bilinear",
    "sample_frames",
]
