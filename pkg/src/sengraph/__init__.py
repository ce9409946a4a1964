"""Edge-existence prediction for spatially embedded networks with multimodal spatial GCNs."""
from .graph import FeatureConfig, SenEdge, SenGraph, SenNode
from .models import ModelConfig, SpatialGCN
from .raster import Raster, WorldPoint
from .sampling import SampleGraph
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["FeatureConfig", "ModelConfig", "Raster", "SampleGraph", "SenEdge", "SenGraph", "SenNode",
           "SpatialGCN", "TrainConfig", "WorldPoint", "train"]
