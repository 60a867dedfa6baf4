"""Potential-flow dataset generation and a convolutional flow surrogate."""

from .data import (Dataset, FlowSample, Manifest, denormalize, fit_normalizer,
                   generate_dataset, normalize_sample, preprocess_target,
                   read_manifest, read_sample, write_manifest, write_sample)
from .errors import FoilnetError
from .evaluate import (EvalReport, bench_inference, evaluate_model,
                       export_field_images, predict, relative_error)
from .geometry import AirfoilShape, GridSpec, parse_uiuc, rasterize, shear
from .panel import Freestream, evaluate_field, sample_freestream, solve_panels
from .train import MultiSeedResult, RunRecord, TrainConfig, multi_seed, train
from .unet import UNet, UNetConfig, build, count_parameters, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AirfoilShape", "Dataset", "EvalReport", "FlowSample", "FoilnetError",
    "Freestream", "GridSpec", "Manifest", "MultiSeedResult", "RunRecord",
    "TrainConfig", "UNet", "UNetConfig", "bench_inference", "build",
    "count_parameters", "denormalize", "evaluate_field", "evaluate_model",
    "export_field_images", "fit_normalizer", "generate_dataset",
    "load_checkpoint", "multi_seed", "normalize_sample", "parse_uiuc",
    "predict", "preprocess_target", "rasterize", "read_manifest",
    "read_sample", "relative_error", "sample_freestream", "save_checkpoint",
    "shear", "solve_panels", "train", "write_manifest", "write_sample",
]
