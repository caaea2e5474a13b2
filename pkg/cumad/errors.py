"""
异常定义

CUMAD 各模块抛出的异常都继承自 CumadError，CLI 据此统一转换为非零退出码。
"""

from typing import Optional


class CumadError(Exception):
    """CUMAD 基础异常"""


class DatasetError(CumadError):
    """特征 CSV 读取、划分或采样失败"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        self.row = row
        self.column = column
        super().__init__(message)


class FeatureError(CumadError):
    """报文特征提取失败"""

    def __init__(self, message: str, index: Optional[int] = None, timestamp: Optional[float] = None):
        self.index = index
        self.timestamp = timestamp
        super().__init__(message)


class ModelError(CumadError):
    """自编码器结构或输入维度错误"""


class ModelFormatError(ModelError):
    """模型文件格式错误（版本、截断、维度不一致）"""


class TrainingError(CumadError):
    """训练过程失败"""

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)


class CalibrationError(CumadError):
    """阈值或 θ₀ 标定失败"""


class SprtError(CumadError):
    """SPRT 参数或状态错误"""


class DetectorError(CumadError):
    """设备会话错误"""


class UnknownDeviceError(DetectorError):
    """设备未注册"""


class DuplicateDeviceError(DetectorError):
    """设备重复注册"""


class UncalibratedModelError(DetectorError):
    """模型文件缺少标定信息"""


class TerminalSessionError(DetectorError):
    """会话已判定为失陷，需要重新布防"""


class EvaluationError(CumadError):
    """评估输入不合法"""
