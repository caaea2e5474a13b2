"""
CUMAD：基于自编码器异常分数与序贯概率比检验的 IoT 设备失陷检测
"""

__version__ = "0.1.0"

from .autoencoder import AutoencoderModel, TrainConfig, load_model, save_model, train
from .calibration import calibrate, classify
from .dataset import FeatureMatrix, generate_synthetic, partition_benign
from .detector import DeviceRegistry, process, register_device, run_stream
from .errors import CumadError
from .features import FeatureExtractor, WindowSpec, extract_stream
from .sprt import SprtConfig, SprtState

__all__ = [
    "__version__",
    "AutoencoderModel",
    "CumadError",
    "DeviceRegistry",
    "FeatureExtractor",
    "FeatureMatrix",
    "SprtConfig",
    "SprtState",
    "TrainConfig",
    "WindowSpec",
    "calibrate",
    "classify",
    "extract_stream",
    "generate_synthetic",
    "load_model",
    "partition_benign",
    "process",
    "register_device",
    "run_stream",
    "save_model",
    "train",
]
