"""
标定模块

由训练好的模型和良性数据集 D 计算异常分数阈值 T_as = μ_D + σ_D，
估计良性数据被误判为异常的比例 θ₀，并对单个分数做 0/1 判定。
"""

import logging
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .autoencoder import AutoencoderModel, reconstruction_error
from .dataset import FeatureMatrix
from .errors import CalibrationError
from .models.detection import DetectorProfile

logger = logging.getLogger(__name__)


class ThresholdStats(NamedTuple):
    T_as: float
    mu_D: float
    sigma_D: float


def score_matrix(model: AutoencoderModel, data: FeatureMatrix) -> np.ndarray:
    """逐行异常分数"""
    if len(data) == 0:
        return np.empty(0)
    return np.atleast_1d(reconstruction_error(model, data.values))


def threshold_from_scores(scores: Union[np.ndarray, Sequence[float]]) -> ThresholdStats:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise CalibrationError("标定集为空")
    mu = float(np.mean(scores))
    sigma = float(np.std(scores))
    return ThresholdStats(mu + sigma, mu, sigma)


def calibrate_threshold(model: AutoencoderModel, data: FeatureMatrix) -> ThresholdStats:
    """T_as = μ_D + σ_D（总体标准差）"""
    if len(data) == 0:
        raise CalibrationError("标定集为空")
    return threshold_from_scores(score_matrix(model, data))


def anomaly_proportion(scores: Union[np.ndarray, Sequence[float]], T_as: float) -> float:
    """分数严格大于 T_as 的比例（未截断的 θ₀）"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise CalibrationError("标定集为空")
    return float(np.count_nonzero(scores > T_as)) / scores.size


def clamp_theta0(raw: float, n: int) -> float:
    """截断到 [1/(2n), 1 - 1/(2n)]，保证 SPRT 步长有限"""
    floor = 1.0 / (2 * n)
    return min(max(raw, floor), 1.0 - floor)


def theta0_from_scores(scores: Union[np.ndarray, Sequence[float]], T_as: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    raw = anomaly_proportion(scores, T_as)
    theta0 = clamp_theta0(raw, scores.size)
    if theta0 != raw:
        logger.warning(f"θ₀ 原始估计 {raw} 被截断为 {theta0}")
    return theta0


def estimate_theta0(model: AutoencoderModel, data: FeatureMatrix, T_as: float) -> float:
    if len(data) == 0:
        raise CalibrationError("标定集为空")
    return theta0_from_scores(score_matrix(model, data), T_as)


def classify(s: float, T_as: float) -> int:
    """s > T_as 判为异常（1），否则正常（0）"""
    return 1 if s > T_as else 0


def calibrate(
    model: AutoencoderModel,
    data: FeatureMatrix,
    device_id: str = "",
    theta0_override: Optional[float] = None,
) -> DetectorProfile:
    """在良性集 D 上完成阈值和 θ₀ 标定，可用配置值覆盖 θ₀"""
    scores = score_matrix(model, data)
    stats = threshold_from_scores(scores)
    raw = anomaly_proportion(scores, stats.T_as)
    theta0 = theta0_from_scores(scores, stats.T_as) if theta0_override is None else theta0_override
    profile = DetectorProfile(
        T_as=stats.T_as,
        mu_D=stats.mu_D,
        sigma_D=stats.sigma_D,
        theta0=theta0,
        theta0_raw=raw,
        device_id=device_id or data.device_id,
    )
    logger.info(
        f"标定完成 [{profile.device_id}]: T_as={profile.T_as:.6g} "
        f"(μ_D={profile.mu_D:.6g}, σ_D={profile.sigma_D:.6g}), θ₀={profile.theta0:.4g} "
        f"(原始 {raw:.4g}{', 已覆盖' if theta0_override is not None else ''})"
    )
    return profile
