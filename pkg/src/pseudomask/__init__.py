"""Box-supervised instance mask estimation: alternating training of a
position-sensitive pixel segmenter and superpixel graph-cut refinement of
per-instance pseudo masks."""

from .energy import EnergyConfig, InstanceEnergy, RoiPrediction
from .imaging import BinaryMask, ImageRgb, RealMap, Rect
from .maxflow import CutResult, FlowNetwork
from .pipeline import Instance, PipelineConfig, PseudoMask, run_algorithm1
from .segmenter import SegmenterConfig, SegmenterParams
from .superpixel import Histogram, SuperpixelPartition

__all__ = [
    "BinaryMask", "CutResult", "EnergyConfig", "FlowNetwork", "Histogram",
    "ImageRgb", "Instance", "InstanceEnergy", "PipelineConfig", "PseudoMask",
    "RealMap", "Rect", "RoiPrediction", "SegmenterConfig", "SegmenterParams",
    "SuperpixelPartition", "run_algorithm1",
]
