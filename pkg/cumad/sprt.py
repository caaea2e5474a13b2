"""
序贯概率比检验（SPRT）模块

对 0/1 观测序列维护对数似然比 Λ_n，与下界 A、上界 B 比较：
Λ_n ≥ B 判定设备失陷（终止，等待重新布防），Λ_n ≤ A 判定正常并把 Λ_n 重置为 0 后继续监测。
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import SprtError
from .models.detection import Decision, DecisionKind

logger = logging.getLogger(__name__)

DEFAULT_THETA0 = 0.2
DEFAULT_THETA1 = 0.8
DEFAULT_ALPHA = 0.01
DEFAULT_BETA = 0.01


class Bounds(NamedTuple):
    A: float
    B: float


def _check_error_rates(alpha: float, beta: float):
    if not (0.0 < alpha < 0.5) or not (0.0 < beta < 0.5):
        raise SprtError(f"α、β 必须位于 (0, 0.5): α={alpha}, β={beta}")


def bounds(alpha: float, beta: float) -> Bounds:
    """A = ln(β/(1-α))，B = ln((1-β)/α)"""
    _check_error_rates(alpha, beta)
    return Bounds(math.log(beta / (1.0 - alpha)), math.log((1.0 - beta) / alpha))


@dataclass(frozen=True)
class SprtConfig:
    """SPRT 参数：H₀ θ=θ₀，H₁ θ=θ₁，期望误报率 α 与漏报率 β"""

    theta0: float = DEFAULT_THETA0
    theta1: float = DEFAULT_THETA1
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not (0.0 < self.theta0 < self.theta1 < 1.0):
            raise SprtError(f"需要 0 < θ₀ < θ₁ < 1: θ₀={self.theta0}, θ₁={self.theta1}")
        _check_error_rates(self.alpha, self.beta)

    @property
    def step_anom(self) -> float:
        return math.log(self.theta1 / self.theta0)

    @property
    def step_norm(self) -> float:
        return math.log((1.0 - self.theta1) / (1.0 - self.theta0))

    def with_overrides(self, **overrides: Optional[float]) -> "SprtConfig":
        values = {
            "theta0": self.theta0,
            "theta1": self.theta1,
            "alpha": self.alpha,
            "beta": self.beta,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SprtConfig(**values)


class SprtStatus(str, Enum):
    ACTIVE = "active"
    ACCEPTED_H1 = "accepted_h1"


class SprtState:
    """单台设备的 SPRT 随机游走状态（单写者）"""

    def __init__(self, cfg: SprtConfig):
        self.cfg = cfg
        self.step_anom = cfg.step_anom
        self.step_norm = cfg.step_norm
        self.A, self.B = bounds(cfg.alpha, cfg.beta)
        self.reset()

    def reset(self):
        self.lam = 0.0
        self.n_observations = 0
        self.status = SprtStatus.ACTIVE

    @property
    def is_terminal(self) -> bool:
        return self.status == SprtStatus.ACCEPTED_H1

    def observe(self, o: int) -> Decision:
        """按观测 o 更新 Λ_n 并给出判定"""
        if self.is_terminal:
            raise SprtError("SPRT 已接受 H₁，需重新布防后才能继续观测")
        if o not in (0, 1):
            raise SprtError(f"观测值只能是 0 或 1: {o}")

        self.lam += self.step_anom if o == 1 else self.step_norm
        self.n_observations += 1

        if self.lam >= self.B:
            self.status = SprtStatus.ACCEPTED_H1
            return Decision(
                kind=DecisionKind.ACCEPT_H1,
                lambda_at_decision=self.lam,
                n_used=self.n_observations,
            )
        if self.lam <= self.A:
            decision = Decision(
                kind=DecisionKind.ACCEPT_H0,
                lambda_at_decision=self.lam,
                n_used=self.n_observations,
            )
            self.lam = 0.0
            self.n_observations = 0
            return decision
        return Decision(
            kind=DecisionKind.CONTINUE,
            lambda_at_decision=self.lam,
            n_used=self.n_observations,
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "lambda": self.lam,
            "n_observations": self.n_observations,
            "status": self.status.value,
            "A": self.A,
            "B": self.B,
            "step_anom": self.step_anom,
            "step_norm": self.step_norm,
        }


def new_state(cfg: SprtConfig) -> SprtState:
    return SprtState(cfg)


class SimulationResult(NamedTuple):
    h1_rate: float
    h0_rate: float
    mean_n: float
    trials: int

    def to_dict(self) -> dict:
        return self._asdict()


def simulate_error_rates(
    cfg: SprtConfig, true_theta: float, trials: int, seed: int
) -> SimulationResult:
    """蒙特卡洛：独立 Bernoulli(true_theta) 序列运行到首次判定"""
    if trials < 1:
        raise SprtError(f"trials 至少为 1: {trials}")
    if not (0.0 <= true_theta <= 1.0):
        raise SprtError(f"true_theta 必须位于 [0, 1]: {true_theta}")

    rng = np.random.default_rng(seed)
    A, B = bounds(cfg.alpha, cfg.beta)
    step_anom, step_norm = cfg.step_anom, cfg.step_norm
    h1 = h0 = 0
    total_n = 0
    for _ in range(trials):
        lam = 0.0
        n = 0
        while True:
            n += 1
            lam += step_anom if rng.random() < true_theta else step_norm
            if lam >= B:
                h1 += 1
                break
            if lam <= A:
                h0 += 1
                break
        total_n += n
    result = SimulationResult(h1 / trials, h0 / trials, total_n / trials, trials)
    logger.info(
        f"SPRT 模拟 θ={true_theta}: H₁ 比例 {result.h1_rate:.4f}, "
        f"H₀ 比例 {result.h0_rate:.4f}, 平均观测数 {result.mean_n:.3f}"
    )
    return result


def _wald_exponent(cfg: SprtConfig, theta: float, drift: float) -> float:
    """求 θ·r1^h + (1-θ)·r0^h = 1 的非零根 h"""
    log_r1, log_r0 = cfg.step_anom, cfg.step_norm

    def g(h: float) -> float:
        return theta * math.expm1(h * log_r1) + (1.0 - theta) * math.expm1(h * log_r0)

    sign = 1.0 if drift < 0 else -1.0
    near, far = sign * 1e-12, sign * 1.0
    while g(far) <= 0:
        far *= 2.0
    return brentq(g, near, far) if sign > 0 else brentq(g, far, near)


def operating_characteristic(cfg: SprtConfig, theta: float) -> float:
    """Wald 近似下接受 H₀ 的概率 L(θ)"""
    if theta <= 0.0:
        return 1.0
    if theta >= 1.0:
        return 0.0
    A, B = bounds(cfg.alpha, cfg.beta)
    drift = theta * cfg.step_anom + (1.0 - theta) * cfg.step_norm
    if abs(drift) < 1e-9:
        return B / (B - A)
    h = _wald_exponent(cfg, theta, drift)
    # 指数项全部取非正值，避免溢出
    if h > 0:
        return -math.expm1(-h * B) / -math.expm1(h * (A - B))
    return (math.exp(h * (B - A)) - math.exp(-h * A)) / math.expm1(h * (B - A))


def expected_sample_size(cfg: SprtConfig, theta: float) -> float:
    """Wald 近似下到达判定的期望观测数（忽略越界量）"""
    A, B = bounds(cfg.alpha, cfg.beta)
    drift = theta * cfg.step_anom + (1.0 - theta) * cfg.step_norm
    if abs(drift) < 1e-9:
        second = theta * cfg.step_anom**2 + (1.0 - theta) * cfg.step_norm**2
        return -A * B / second
    oc = operating_characteristic(cfg, theta)
    return (oc * A + (1.0 - oc) * B) / drift
