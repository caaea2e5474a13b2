"""
检测器模块

按设备编排检测流程：重构误差 → 阈值判定 → SPRT → 告警。
注册表按设备维护会话，不同设备可并发处理，同一设备严格顺序处理；
告警以 JSON Lines 追加写入告警日志。
"""

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autoencoder import AutoencoderModel, load_model, reconstruction_error
from .calibration import classify
from .errors import (
    DetectorError,
    DuplicateDeviceError,
    TerminalSessionError,
    UncalibratedModelError,
    UnknownDeviceError,
)
from .models.detection import Alert, DecisionKind, DetectorProfile, Verdict
from .sprt import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_THETA1, SprtConfig, SprtState

logger = logging.getLogger(__name__)

UNKNOWN_FAIL = "fail"
UNKNOWN_SKIP = "skip"


@dataclass
class SprtOverrides:
    """配置文件或命令行中的 SPRT 覆盖值，None 表示沿用默认"""

    theta0: Optional[float] = None
    theta1: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {"theta0": self.theta0, "theta1": self.theta1, "alpha": self.alpha, "beta": self.beta}


@dataclass
class DeviceSession:
    """单台设备的检测会话"""

    device_id: str
    model: AutoencoderModel
    profile: DetectorProfile
    sprt: SprtState
    packets_seen: int = 0
    alerts_emitted: int = 0
    created_at: float = field(default_factory=time.time)
    last_activity: float = field(default_factory=time.time)

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def is_terminal(self) -> bool:
        return self.sprt.is_terminal

    def to_dict(self) -> Dict[str, Any]:
        return {
            "device_id": self.device_id,
            "status": self.sprt.status.value,
            "lambda": self.sprt.lam,
            "n_observations": self.sprt.n_observations,
            "packets_seen": self.packets_seen,
            "alerts_emitted": self.alerts_emitted,
            "T_as": self.profile.T_as,
            "theta0": self.sprt.cfg.theta0,
            "theta1": self.sprt.cfg.theta1,
            "last_activity": self.last_activity,
        }


def process(session: DeviceSession, x: np.ndarray, index: Optional[int] = None) -> Optional[Alert]:
    """对一个特征向量执行完整检测流程，接受 H₁ 时返回告警"""
    with session._lock:
        if session.is_terminal:
            raise TerminalSessionError(f"设备 {session.device_id} 已判定失陷，需重新布防")
        s = reconstruction_error(session.model, x)
        o = classify(s, session.profile.T_as)
        decision = session.sprt.observe(o)
        session.packets_seen += 1
        session.last_activity = time.time()

        if decision.kind == DecisionKind.ACCEPT_H1:
            session.alerts_emitted += 1
            alert = Alert(
                device_id=session.device_id,
                index=session.packets_seen - 1 if index is None else index,
                lambda_at_decision=decision.lambda_at_decision,
                n_observations=decision.n_used,
                verdict=Verdict.COMPROMISED,
            )
            logger.warning(
                f"设备 {session.device_id} 判定失陷: Λ={decision.lambda_at_decision:.4f}, "
                f"观测数 {decision.n_used}, 输入序号 {alert.index}"
            )
            return alert
        if decision.kind == DecisionKind.ACCEPT_H0:
            logger.debug(f"设备 {session.device_id} 判定正常，SPRT 重置")
        return None


def re_arm(session: DeviceSession) -> DeviceSession:
    """处置完成后重新布防：SPRT 回到初始状态，告警计数保留"""
    with session._lock:
        if not session.is_terminal:
            raise DetectorError(f"设备 {session.device_id} 仍在监测中，无需重新布防")
        session.sprt.reset()
        session.last_activity = time.time()
    logger.info(f"设备 {session.device_id} 已重新布防")
    return session


class AlertLog:
    """告警日志：JSON Lines，单写者追加"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.alerts: List[Alert] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, alert: Alert):
        with self._lock:
            self.alerts.append(alert)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(alert.to_log_dict(), ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self.alerts)

    @staticmethod
    def read(path: Union[str, Path]) -> List[Dict[str, Any]]:
        with open(path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


@dataclass
class StreamSummary:
    """检测流处理汇总"""

    records: int = 0
    processed: int = 0
    skipped_unknown: int = 0
    ignored_terminal: int = 0
    alerts: List[Alert] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "records": self.records,
            "processed": self.processed,
            "skipped_unknown": self.skipped_unknown,
            "ignored_terminal": self.ignored_terminal,
            "alerts": len(self.alerts),
        }


class DeviceRegistry:
    """设备会话注册表"""

    def __init__(self, defaults: Optional[SprtOverrides] = None):
        self.sessions: Dict[str, DeviceSession] = {}
        self.defaults = defaults or SprtOverrides()
        self._lock = threading.Lock()

    def add_session(
        self,
        device_id: str,
        model: AutoencoderModel,
        profile: Optional[DetectorProfile],
        overrides: Optional[SprtOverrides] = None,
    ) -> DeviceSession:
        if profile is None:
            raise UncalibratedModelError(f"uncalibrated model: 设备 {device_id} 的模型缺少标定信息")
        cfg = resolve_sprt_config(profile, overrides, self.defaults)
        session = DeviceSession(device_id=device_id, model=model, profile=profile, sprt=SprtState(cfg))
        with self._lock:
            if device_id in self.sessions:
                raise DuplicateDeviceError(f"设备已注册: {device_id}")
            self.sessions[device_id] = session
        logger.info(
            f"设备注册成功: {device_id} (T_as={profile.T_as:.6g}, θ₀={cfg.theta0:.4g}, "
            f"θ₁={cfg.theta1}, α={cfg.alpha}, β={cfg.beta})"
        )
        return session

    def get_session(self, device_id: str) -> Optional[DeviceSession]:
        with self._lock:
            return self.sessions.get(device_id)

    def require_session(self, device_id: str) -> DeviceSession:
        session = self.get_session(device_id)
        if session is None:
            raise UnknownDeviceError(f"未注册的设备: {device_id}")
        return session

    def list_devices(self) -> List[Dict[str, Any]]:
        with self._lock:
            return [s.to_dict() for s in self.sessions.values()]

    def remove_device(self, device_id: str) -> bool:
        with self._lock:
            if device_id in self.sessions:
                del self.sessions[device_id]
                logger.info(f"设备已移除: {device_id}")
                return True
            return False

    def __contains__(self, device_id: str) -> bool:
        with self._lock:
            return device_id in self.sessions

    def __len__(self) -> int:
        with self._lock:
            return len(self.sessions)


def _first(*values: Optional[float]) -> Optional[float]:
    return next((v for v in values if v is not None), None)


def resolve_sprt_config(
    profile: DetectorProfile,
    overrides: Optional[SprtOverrides] = None,
    defaults: Optional[SprtOverrides] = None,
) -> SprtConfig:
    """设备覆盖值 > 全局默认值 > 标定得到的 θ₀ / 内置默认值"""
    overrides = overrides or SprtOverrides()
    defaults = defaults or SprtOverrides()
    return SprtConfig(
        theta0=_first(overrides.theta0, defaults.theta0, profile.theta0),
        theta1=_first(overrides.theta1, defaults.theta1, DEFAULT_THETA1),
        alpha=_first(overrides.alpha, defaults.alpha, DEFAULT_ALPHA),
        beta=_first(overrides.beta, defaults.beta, DEFAULT_BETA),
    )


def register_device(
    registry: DeviceRegistry,
    device_id: str,
    model_file_path: Union[str, Path],
    sprt_overrides: Optional[SprtOverrides] = None,
) -> DeviceSession:
    """从模型文件注册设备；模型必须带标定信息，设备 ID 不可重复"""
    if device_id in registry:
        raise DuplicateDeviceError(f"设备已注册: {device_id}")
    model, profile = load_model(model_file_path)
    return registry.add_session(device_id, model, profile, sprt_overrides)


def _process_device(
    session: DeviceSession, items: Sequence[Tuple[int, np.ndarray]]
) -> Tuple[List[Alert], int, int]:
    alerts, processed, ignored = [], 0, 0
    for index, x in items:
        if session.is_terminal:
            ignored += 1
            continue
        alert = process(session, x, index=index)
        processed += 1
        if alert is not None:
            alerts.append(alert)
    return alerts, processed, ignored


def run_stream(
    registry: DeviceRegistry,
    records: Iterable[Tuple[str, np.ndarray]],
    alert_log: Optional[AlertLog] = None,
    unknown_policy: str = UNKNOWN_FAIL,
    workers: int = 1,
) -> StreamSummary:
    """按输入顺序把记录分派给设备会话，告警按输入顺序写入日志

    未注册设备在处理任何记录之前检查；整个流处理成功后才写告警日志。
    已判定失陷的设备不再监测，其后续记录计入 ignored_terminal。
    """
    if unknown_policy not in (UNKNOWN_FAIL, UNKNOWN_SKIP):
        raise DetectorError(f"未知设备策略只能是 fail 或 skip: {unknown_policy}")
    alert_log = alert_log if alert_log is not None else AlertLog()
    summary = StreamSummary()

    accepted: List[Tuple[int, str, np.ndarray]] = []
    for index, (device_id, x) in enumerate(records):
        summary.records += 1
        if device_id not in registry:
            if unknown_policy == UNKNOWN_FAIL:
                raise UnknownDeviceError(f"第 {index} 条记录的设备未注册: {device_id}")
            summary.skipped_unknown += 1
            logger.warning(f"跳过未注册设备的记录: {device_id} (序号 {index})")
            continue
        accepted.append((index, device_id, x))

    alerts: List[Alert] = []
    if workers <= 1:
        for index, device_id, x in accepted:
            session = registry.require_session(device_id)
            if session.is_terminal:
                summary.ignored_terminal += 1
                continue
            alert = process(session, x, index=index)
            summary.processed += 1
            if alert is not None:
                alerts.append(alert)
    else:
        grouped: Dict[str, List[Tuple[int, np.ndarray]]] = {}
        for index, device_id, x in accepted:
            grouped.setdefault(device_id, []).append((index, x))
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_process_device, registry.require_session(device_id), items)
                for device_id, items in grouped.items()
            ]
            results = [f.result() for f in futures]
        for device_alerts, processed, ignored in results:
            alerts += device_alerts
            summary.processed += processed
            summary.ignored_terminal += ignored

    for alert in sorted(alerts, key=lambda a: a.index):
        alert_log.append(alert)
        summary.alerts.append(alert)
    return summary
