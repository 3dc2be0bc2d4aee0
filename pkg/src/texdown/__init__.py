"""Geometry-aware texture downsampling for textured triangle meshes."""
from .baselines import KernelSpec, resample
from .estimators import ClassicalDownsampler, GeometryAwareDownsampler
from .exceptions import (ConfigError, DegenerateError, FormatError, GraphError, MeshError, NumericAbort,
                         NumericError, OptError, ParseError, ShapeError, TexdownError, WindowError)
from .mesh import Mesh, load_obj, make_mesh, parse_obj, save_obj, write_obj
from .model import DownsamplerNet, ModelConfig
from .render import CameraPose, PoseRange, RenderConfig, render
from .trainer import TrainConfig, evaluate_baseline, train, validate

__version__ = "0.1.0"

__all__ = [
    "ClassicalDownsampler", "GeometryAwareDownsampler", "KernelSpec", "resample",
    "Mesh", "load_obj", "make_mesh", "parse_obj", "save_obj", "write_obj",
    "DownsamplerNet", "ModelConfig", "CameraPose", "PoseRange", "RenderConfig", "render",
    "TrainConfig", "evaluate_baseline", "train", "validate",
    "TexdownError", "ShapeError", "ConfigError", "NumericError", "GraphError", "OptError", "MeshError",
    "ParseError", "FormatError", "DegenerateError", "WindowError", "NumericAbort",
]
