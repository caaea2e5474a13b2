"""
配置管理模块

管理检测器配置：全局种子、日志级别、并行度、未知设备策略、SPRT 默认参数，
以及每台设备的模型路径与 SPRT 覆盖值。
优先级：命令行参数 > 配置文件 > 环境变量 > 内置默认值。
"""

import os
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .autoencoder import TrainConfig
from .detector import UNKNOWN_FAIL, UNKNOWN_SKIP, SprtOverrides
from .errors import CumadError

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240501


class ConfigError(CumadError):
    """配置文件无效"""


@dataclass
class DeviceConfig:
    """单台设备配置"""

    model_path: str
    theta0: Optional[float] = None
    theta1: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def overrides(self) -> SprtOverrides:
        return SprtOverrides(theta0=self.theta0, theta1=self.theta1, alpha=self.alpha, beta=self.beta)

    def to_dict(self) -> Dict[str, Any]:
        data = {"model_path": self.model_path}
        for key in ("theta0", "theta1", "alpha", "beta"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        return data


@dataclass
class AppConfig:
    """应用配置"""

    log_level: str = "INFO"
    seed: int = DEFAULT_SEED
    workers: int = 1
    unknown_device_policy: str = UNKNOWN_FAIL
    train: TrainConfig = field(default_factory=TrainConfig)
    sprt: SprtOverrides = field(default_factory=SprtOverrides)
    devices: Dict[str, DeviceConfig] = field(default_factory=dict)

    def __post_init__(self):
        if self.unknown_device_policy not in (UNKNOWN_FAIL, UNKNOWN_SKIP):
            raise ConfigError(f"unknown_device_policy 只能是 fail 或 skip: {self.unknown_device_policy}")
        if self.workers < 1:
            raise ConfigError(f"workers 至少为 1: {self.workers}")

    @classmethod
    def from_env(cls) -> "AppConfig":
        """从环境变量创建配置"""
        return cls(
            log_level=os.getenv("CUMAD_LOG_LEVEL", "INFO"),
            seed=int(os.getenv("CUMAD_SEED", str(DEFAULT_SEED))),
            workers=int(os.getenv("CUMAD_WORKERS", "1")),
        )

    @classmethod
    def from_file(cls, config_path: Union[str, Path]) -> "AppConfig":
        """从 JSON 配置文件创建配置，未出现的键沿用环境变量与默认值"""
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"读取配置文件失败 {config_path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件顶层必须是对象: {config_path}")

        config = cls.from_env()
        base_dir = Path(config_path).resolve().parent

        try:
            for name, device_data in data.get("devices", {}).items():
                device = DeviceConfig(**device_data)
                if not Path(device.model_path).is_absolute():
                    device.model_path = str(base_dir / device.model_path)
                config.devices[name] = device

            if "sprt" in data:
                config.sprt = SprtOverrides(**data["sprt"])

            if "train" in data:
                config.train = TrainConfig(**data["train"])

            for key in ["log_level", "seed", "workers", "unknown_device_policy"]:
                if key in data:
                    setattr(config, key, data[key])
        except TypeError as e:
            raise ConfigError(f"配置文件字段无效 {config_path}: {e}")

        config.__post_init__()
        return config

    def to_file(self, config_path: Union[str, Path]) -> Path:
        """保存配置到文件"""
        data = {
            "log_level": self.log_level,
            "seed": self.seed,
            "workers": self.workers,
            "unknown_device_policy": self.unknown_device_policy,
            "sprt": {k: v for k, v in self.sprt.as_dict().items() if v is not None},
            "train": {k: v for k, v in asdict(self.train).items() if k != "seed"},
            "devices": {name: device.to_dict() for name, device in self.devices.items()},
        }
        path = Path(config_path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
        return path


class ConfigManager:
    """配置管理器"""

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        self.config_path = config_path or os.getenv("CUMAD_CONFIG")
        self.config: AppConfig = self._load_config()

    def _load_config(self) -> AppConfig:
        """加载配置：先环境变量，配置文件存在时以文件为准"""
        config = AppConfig.from_env()
        if self.config_path:
            if not os.path.exists(self.config_path):
                raise ConfigError(f"配置文件不存在: {self.config_path}")
            config = AppConfig.from_file(self.config_path)
        logger.info(f"配置加载完成，日志级别: {config.log_level}, 设备数: {len(config.devices)}")
        return config

    def reload(self) -> AppConfig:
        self.config = self._load_config()
        return self.config

    def save(self) -> Path:
        if not self.config_path:
            raise ConfigError("未指定配置文件路径")
        return self.config.to_file(self.config_path)

    def get_device(self, name: str) -> Optional[DeviceConfig]:
        return self.config.devices.get(name)

    def add_device(self, name: str, device: DeviceConfig):
        self.config.devices[name] = device

    def remove_device(self, name: str) -> bool:
        return self.config.devices.pop(name, None) is not None

    def list_devices(self) -> Dict[str, DeviceConfig]:
        return self.config.devices.copy()
