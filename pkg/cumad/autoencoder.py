"""
自编码器模块

每台设备一个稠密欠完备自编码器：构建、前向、重构误差、反向传播、
Adam 小批量训练（验证集早停）以及模型文件读写。
隐藏层使用 ReLU，输出层线性；输入先按训练集做标准化，损失在标准化空间计算。
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import FeatureMatrix
from .errors import ModelError, ModelFormatError, TrainingError
from .models.detection import DetectorProfile

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_LAYER_DIMS = (115, 87, 58, 38, 29, 38, 58, 87, 115)
HIDDEN_ACTIVATION = "relu"
OUTPUT_ACTIVATION = "linear"

ArrayLike = Union[np.ndarray, Sequence[float]]


@dataclass
class TrainConfig:
    """训练配置"""

    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise TrainingError(f"学习率不能为负: {self.learning_rate}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size 至少为 1: {self.batch_size}")
        if self.max_epochs < 1:
            raise TrainingError(f"max_epochs 至少为 1: {self.max_epochs}")
        if self.patience < 1:
            raise TrainingError(f"patience 至少为 1: {self.patience}")


@dataclass
class TrainReport:
    """每轮训练/验证 MSE、最佳轮次和停止原因"""

    train_mse: List[float] = field(default_factory=list)
    validation_mse: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.train_mse)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "train_mse": self.train_mse,
            "validation_mse": self.validation_mse,
        }


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    loss: float


class AutoencoderModel:
    """稠密自编码器参数，权重形状为 (fan_in, fan_out)"""

    def __init__(
        self,
        layer_dims: Sequence[int],
        weights: List[np.ndarray],
        biases: List[np.ndarray],
        norm_mean: Optional[np.ndarray] = None,
        norm_std: Optional[np.ndarray] = None,
        seed: int = 0,
    ):
        self.layer_dims = [int(d) for d in layer_dims]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        dim = self.layer_dims[0]
        self.norm_mean = np.zeros(dim) if norm_mean is None else np.asarray(norm_mean, dtype=np.float64)
        self.norm_std = np.ones(dim) if norm_std is None else np.asarray(norm_std, dtype=np.float64)
        self.seed = seed
        self.hidden_activation = HIDDEN_ACTIVATION
        self.output_activation = OUTPUT_ACTIVATION
        self._check_shapes()

    def _check_shapes(self):
        dims = self.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ModelError(f"层数与维度列表不一致: {dims}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ModelError(
                    f"第 {i} 层参数形状 {w.shape}/{b.shape} 与维度 {dims[i]}->{dims[i + 1]} 不一致"
                )
        if self.norm_mean.shape != (dims[0],) or self.norm_std.shape != (dims[0],):
            raise ModelError("标准化参数维度与输入维度不一致")
        if not np.all(self.norm_std > 0):
            raise ModelError("norm_std 必须全部为正")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "AutoencoderModel":
        return copy.deepcopy(self)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.norm_mean) / self.norm_std

    def fit_normalization(self, values: np.ndarray):
        """按训练集拟合标准化参数；标准差为 0 的特征用 1"""
        self.norm_mean = values.mean(axis=0)
        std = values.std(axis=0)
        self.norm_std = np.where(std > 0, std, 1.0)

    def parameters(self) -> List[np.ndarray]:
        return self.weights + self.biases


def _check_dims(layer_dims: Sequence[int]):
    dims = list(layer_dims)
    if len(dims) < 3 or any(int(d) < 1 for d in dims):
        raise ModelError(f"维度列表至少 3 层且均为正: {dims}")
    if dims[0] != dims[-1]:
        raise ModelError(f"输入维度 {dims[0]} 与输出维度 {dims[-1]} 不一致")
    if dims != dims[::-1]:
        raise ModelError(f"维度列表必须关于编码层对称: {dims}")


def init_model(layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS, seed: int = 0) -> AutoencoderModel:
    """按 ±sqrt(6/(fan_in+fan_out)) 均匀初始化权重，偏置为 0"""
    _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderModel(layer_dims, weights, biases, seed=seed)


def _as_input(model: AutoencoderModel, x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim or x.ndim not in (1, 2):
        raise ModelError(f"输入维度 {x.shape} 与模型输入维度 {model.input_dim} 不一致")
    return x


def _propagate(model: AutoencoderModel, xhat: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """返回 (各层输入激活, 各层预激活)"""
    activations = [xhat]
    pre_activations = []
    a = xhat
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre_activations.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return activations, pre_activations


def forward(model: AutoencoderModel, x: ArrayLike) -> np.ndarray:
    """x' = g(f(x))，结果位于标准化空间"""
    x = _as_input(model, x)
    activations, _ = _propagate(model, model.standardize(x))
    return activations[-1]


def reconstruction_error(model: AutoencoderModel, x: ArrayLike) -> Union[float, np.ndarray]:
    """异常分数 s：标准化输入与重构的均方误差；二维输入按行返回"""
    x = _as_input(model, x)
    xhat = model.standardize(x)
    activations, _ = _propagate(model, xhat)
    errors = np.mean((xhat - activations[-1]) ** 2, axis=-1)
    return float(errors) if x.ndim == 1 else errors


def _backprop(model: AutoencoderModel, xhat: np.ndarray) -> Gradients:
    activations, pre_activations = _propagate(model, xhat)
    batch, dim = xhat.shape
    residual = activations[-1] - xhat
    loss = float(np.mean(residual**2))
    delta = 2.0 * residual / (batch * dim)

    grad_w: List[np.ndarray] = [None] * model.n_layers
    grad_b: List[np.ndarray] = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre_activations[i - 1] > 0)
    return Gradients(grad_w, grad_b, loss)


def gradient(model: AutoencoderModel, batch: ArrayLike) -> Gradients:
    """批内平均 MSE 对全部权重和偏置的精确梯度"""
    batch = _as_input(model, batch)
    if batch.ndim == 1:
        batch = batch[np.newaxis, :]
    if batch.shape[0] == 0:
        raise ModelError("梯度计算需要非空批次")
    return _backprop(model, model.standardize(batch))


class AdamOptimizer:
    """Adam 优化器，带偏差修正"""

    def __init__(self, params: List[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        cfg = self.cfg
        self.t += 1
        correction1 = 1.0 - cfg.adam_beta1**self.t
        correction2 = 1.0 - cfg.adam_beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * g * g
            p -= cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_epsilon)


class EarlyStopping:
    """验证误差连续 patience 轮未严格下降即停止"""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """记录一轮结果，返回是否为新的最佳轮次"""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def train(
    model: AutoencoderModel,
    train_set: FeatureMatrix,
    validation_set: Optional[FeatureMatrix],
    cfg: TrainConfig,
) -> Tuple[AutoencoderModel, TrainReport]:
    """Adam 小批量训练，返回验证误差最佳轮次的参数"""
    if len(train_set) == 0:
        raise TrainingError("训练集为空")
    model = model.copy()
    _as_input(model, train_set.values)
    model.fit_normalization(train_set.values)

    x_train = model.standardize(train_set.values)
    x_val = None
    if validation_set is not None and len(validation_set) > 0:
        x_val = model.standardize(_as_input(model, validation_set.values))

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    optimizer = AdamOptimizer(params, cfg)
    stopper = EarlyStopping(cfg.patience)
    report = TrainReport()
    best_params = [p.copy() for p in params]
    n = x_train.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            grads = _backprop(model, x_train[idx])
            if not math.isfinite(grads.loss):
                raise TrainingError(
                    f"第 {epoch} 轮第 {batch_index} 批损失非有限值: {grads.loss}",
                    epoch=epoch,
                    batch=batch_index,
                )
            total += grads.loss * len(idx)
            optimizer.step(params, grads.weights + grads.biases)

        train_mse = total / n
        if x_val is not None:
            activations, _ = _propagate(model, x_val)
            val_mse = float(np.mean((x_val - activations[-1]) ** 2))
        else:
            val_mse = train_mse
        if not math.isfinite(val_mse):
            raise TrainingError(f"第 {epoch} 轮验证损失非有限值", epoch=epoch)
        report.train_mse.append(train_mse)
        report.validation_mse.append(val_mse)
        logger.debug(f"第 {epoch} 轮: 训练 MSE {train_mse:.6f}, 验证 MSE {val_mse:.6f}")

        if stopper.update(epoch, val_mse):
            best_params = [p.copy() for p in params]
        if stopper.should_stop:
            report.stop_reason = "early_stopping"
            break
    else:
        report.stop_reason = "max_epochs"

    for p, best in zip(params, best_params):
        p[...] = best
    report.best_epoch = stopper.best_epoch
    logger.info(
        f"训练完成: {report.epochs_run} 轮, 最佳第 {report.best_epoch} 轮 "
        f"(验证 MSE {stopper.best:.6f}), 停止原因 {report.stop_reason}"
    )
    return model, report


def _profile_to_dict(profile: DetectorProfile) -> dict:
    return profile.model_dump()


def save_model(
    model: AutoencoderModel,
    path: Union[str, Path],
    profile: Optional[DetectorProfile] = None,
) -> Path:
    """写出自描述 JSON 模型文件；浮点数按 repr 精确往返"""
    path = Path(path)
    data = {
        "format_version": FORMAT_VERSION,
        "layer_dims": model.layer_dims,
        "hidden_activation": model.hidden_activation,
        "output_activation": model.output_activation,
        "seed": model.seed,
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    if profile is not None:
        data["calibration"] = _profile_to_dict(profile)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False)
    logger.info(f"模型已保存: {path}{' (含标定信息)' if profile else ''}")
    return path


def load_model(path: Union[str, Path]) -> Tuple[AutoencoderModel, Optional[DetectorProfile]]:
    """读取模型文件，返回 (模型, 标定信息或 None)"""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ModelFormatError(f"模型文件不存在: {path}")
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"模型文件损坏或被截断 {path}: {e}")

    if not isinstance(data, dict) or "format_version" not in data:
        raise ModelFormatError(f"模型文件缺少 format_version: {path}")
    version = data["format_version"]
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise ModelFormatError(f"不支持的模型格式版本 {version}（当前支持 {FORMAT_VERSION}）")
    for key in ("layer_dims", "norm_mean", "norm_std", "weights", "biases"):
        if key not in data:
            raise ModelFormatError(f"模型文件缺少字段 {key}: {path}")
    if data.get("hidden_activation", HIDDEN_ACTIVATION) != HIDDEN_ACTIVATION or data.get(
        "output_activation", OUTPUT_ACTIVATION
    ) != OUTPUT_ACTIVATION:
        raise ModelFormatError("不支持的激活函数")

    try:
        _check_dims(data["layer_dims"])
        model = AutoencoderModel(
            data["layer_dims"],
            [np.array(w, dtype=np.float64) for w in data["weights"]],
            [np.array(b, dtype=np.float64) for b in data["biases"]],
            norm_mean=np.array(data["norm_mean"], dtype=np.float64),
            norm_std=np.array(data["norm_std"], dtype=np.float64),
            seed=data.get("seed", 0),
        )
    except (ModelError, ValueError, TypeError) as e:
        raise ModelFormatError(f"模型参数维度不一致 {path}: {e}")

    profile = None
    if data.get("calibration") is not None:
        try:
            profile = DetectorProfile(**data["calibration"])
        except (ValueError, TypeError) as e:
            raise ModelFormatError(f"标定信息无效 {path}: {e}")
    return model, profile
