"""RGB-guided video depth super-resolution with spatial and temporal difference branches."""

from .config import Config, DataConfig, LossConfig, ModelConfig, TrainConfig, load_config, save_config
from .data import DepthVideo, RGBVideo, load_clip, save_clip, synthesize_lr
from .losses import STDNetLoss
from .metrics import mae, rmse, tepe
from .model import STDNet, STDNetOutput, param_count

__all__ = [
    "Config", "DataConfig", "LossConfig", "ModelConfig", "TrainConfig", "load_config", "save_config",
    "DepthVideo", "RGBVideo", "load_clip", "save_clip", "synthesize_lr",
    "STDNetLoss", "mae", "rmse", "tepe", "STDNet", "STDNetOutput", "param_count",
]
__version__ = "0.1.0"
