"""Ganglion cell detection and counting in high-power-field histology images."""

__version__ = "0.1.0"

from .masks import MaskSpec, PointAnnotationSet, density_surface, make_mask
from .network import NablaArchitecture, build_network, network_forward
from .params import ParamStore, adam_step, count_parameters
from .regions import CountingCalibration, CountReport, RegionReport, count_image
from .tiling import infer_image, plan_tiles, threshold_map
from .training import TrainConfig, train

__all__ = [
    "MaskSpec",
    "PointAnnotationSet",
    "density_surface",
    "make_mask",
    "NablaArchitecture",
    "build_network",
    "network_forward",
    "ParamStore",
    "adam_step",
    "count_parameters",
    "CountingCalibration",
    "CountReport",
    "RegionReport",
    "count_image",
    "infer_image",
    "plan_tiles",
    "threshold_map",
    "TrainConfig",
    "train",
]
