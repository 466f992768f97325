"""geoforge: coarse 3D building priors from OSM + satellite tiles, with
latent normalization, cosine interpolation, and rectified-flow sampling."""

__version__ = "0.1.0"

from .errors import GeoForgeError
from .osm import GeoBBox, GeoFootprint
from .voxel import LodLevel, VoxelGrid, lod_prior, rasterize_footprint, synth_shape
from .latent import LatentGrid, NormStats, LambdaParams, cosine_interpolate
from .flow import FlowConfig, ToyVelocityModel, euler_sample, generate, train_toy
from .metrics import EvalReport, chamfer, eval_report, f_score, voxel_iou

__all__ = [
    "GeoForgeError",
    "GeoBBox",
    "GeoFootprint",
    "LodLevel",
    "VoxelGrid",
    "lod_prior",
    "rasterize_footprint",
    "synth_shape",
    "LatentGrid",
    "NormStats",
    "LambdaParams",
    "cosine_interpolate",
    "FlowConfig",
    "ToyVelocityModel",
    "euler_sample",
    "generate",
    "train_toy",
    "EvalReport",
    "chamfer",
    "eval_report",
    "f_score",
    "voxel_iou",
]
