"""
报文特征提取模块

把按时间排序的报文记录流转换为每个报文一个 115 维行为快照。
每个时间窗口按 SrcIP、SrcMAC-IP、Channel、Socket 四个聚合层级输出 23 个统计量，
共 5 个窗口。窗口是精确的时间滑动窗口，事件保存在按键划分的双端队列里。
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, Hashable, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .dataset import FeatureMatrix, FEATURE_DIM
from .errors import FeatureError
from .models.packet import Direction, PacketRecord

logger = logging.getLogger(__name__)

DEFAULT_WINDOWS = (0.1, 0.5, 1.5, 10.0, 60.0)
WINDOW_LABELS = ("100ms", "500ms", "1.5s", "10s", "1min")
TIME_TOLERANCE = 1e-3
PACKET_COLUMNS = [
    "timestamp",
    "src_mac",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "protocol",
    "size",
    "direction",
]

SRCIP_STATS = ("count", "mean", "variance")
CHANNEL_STATS = (
    "count",
    "mean",
    "variance",
    "iat_mean",
    "iat_variance",
    "iat_count",
    "magnitude",
    "radius",
    "covariance",
    "correlation",
)
SOCKET_STATS = ("count", "mean", "variance", "magnitude", "radius", "covariance", "correlation")
STATS_PER_WINDOW = 2 * len(SRCIP_STATS) + len(CHANNEL_STATS) + len(SOCKET_STATS)

# (timestamp, size, direction)
Event = Tuple[float, int, Direction]


@dataclass(frozen=True)
class WindowSpec:
    """五个严格递增的时间窗口（秒）"""

    durations: Tuple[float, ...] = DEFAULT_WINDOWS

    def __post_init__(self):
        if len(self.durations) != 5:
            raise FeatureError(f"需要 5 个时间窗口，实际 {len(self.durations)} 个")
        if any(d <= 0 for d in self.durations):
            raise FeatureError("时间窗口必须为正")
        if any(b <= a for a, b in zip(self.durations, self.durations[1:])):
            raise FeatureError(f"时间窗口必须严格递增: {self.durations}")

    @property
    def largest(self) -> float:
        return self.durations[-1]


def feature_names(spec: WindowSpec = WindowSpec()) -> List[str]:
    """115 个特征列名，窗口优先排列"""
    labels = WINDOW_LABELS if spec.durations == DEFAULT_WINDOWS else [f"{d:g}s" for d in spec.durations]
    names = []
    for label in labels:
        names += [f"{label}_srcip_{s}" for s in SRCIP_STATS]
        names += [f"{label}_srcmacip_{s}" for s in SRCIP_STATS]
        names += [f"{label}_channel_{s}" for s in CHANNEL_STATS]
        names += [f"{label}_socket_{s}" for s in SOCKET_STATS]
    return names


def aggregation_keys(pkt: PacketRecord) -> Dict[str, Hashable]:
    """报文所属的四个聚合键；Channel 与 Socket 使用无序端点对，双向流量落在同一键上"""
    return {
        "srcip": pkt.src_ip,
        "srcmacip": (pkt.src_mac, pkt.src_ip),
        "channel": frozenset((pkt.src_ip, pkt.dst_ip)),
        "socket": frozenset(((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port))),
    }


def _moments(sizes: np.ndarray) -> Tuple[float, float, float]:
    """(count, mean, population variance)，空集合全部为 0"""
    n = sizes.size
    if n == 0:
        return 0.0, 0.0, 0.0
    mean = math.fsum(sizes) / n
    variance = math.fsum((sizes - mean) ** 2) / n
    return float(n), mean, variance


def _pair_stats(out_sizes: np.ndarray, in_sizes: np.ndarray) -> List[float]:
    """magnitude、radius、covariance、correlation，使用两个方向的报文"""
    _, mu_out, var_out = _moments(out_sizes)
    _, mu_in, var_in = _moments(in_sizes)
    magnitude = math.sqrt(mu_out**2 + mu_in**2)
    radius = math.sqrt(var_out**2 + var_in**2)
    m = min(out_sizes.size, in_sizes.size)
    if m == 0:
        return [magnitude, radius, 0.0, 0.0]
    # 两个方向各取最近的 m 个报文按序号配对
    paired_out = out_sizes[-m:][::-1]
    paired_in = in_sizes[-m:][::-1]
    covariance = math.fsum((paired_out - mu_out) * (paired_in - mu_in)) / m
    sigma_out, sigma_in = math.sqrt(var_out), math.sqrt(var_in)
    if sigma_out == 0.0 or sigma_in == 0.0:
        correlation = 0.0
    else:
        correlation = float(np.clip(covariance / (sigma_out * sigma_in), -1.0, 1.0))
    return [magnitude, radius, covariance, correlation]


def _window_stats(
    events: Dict[str, Sequence[Event]], direction: Direction, since: float
) -> List[float]:
    """单个窗口内的 23 个统计量；“出向”指与触发报文同方向"""
    values: List[float] = []
    split = {}
    for name, queue in events.items():
        kept = [(ts, size, d) for ts, size, d in queue if ts > since]
        out_ts = np.array([ts for ts, _, d in kept if d == direction], dtype=np.float64)
        out_sizes = np.array([s for _, s, d in kept if d == direction], dtype=np.float64)
        in_sizes = np.array([s for _, s, d in kept if d != direction], dtype=np.float64)
        split[name] = (out_ts, out_sizes, in_sizes)

    for name in ("srcip", "srcmacip"):
        values += list(_moments(split[name][1]))

    out_ts, out_sizes, in_sizes = split["channel"]
    values += list(_moments(out_sizes))
    gaps = np.diff(out_ts)
    iat_count, iat_mean, iat_variance = _moments(gaps)
    values += [iat_mean, iat_variance, iat_count]
    values += _pair_stats(out_sizes, in_sizes)

    _, out_sizes, in_sizes = split["socket"]
    values += list(_moments(out_sizes))
    values += _pair_stats(out_sizes, in_sizes)
    return values


class FeatureExtractor:
    """单条设备流的提取状态（单写者）"""

    def __init__(self, spec: WindowSpec = WindowSpec()):
        self.spec = spec
        self.queues: Dict[Tuple[str, Hashable], Deque[Event]] = {}
        self.last_timestamp: float = -math.inf
        self.packets_seen = 0

    def _prune(self, now: float):
        horizon = now - self.spec.largest
        for key in list(self.queues):
            queue = self.queues[key]
            while queue and queue[0][0] <= horizon:
                queue.popleft()
            if not queue:
                del self.queues[key]

    def update(self, pkt: PacketRecord) -> np.ndarray:
        """吸收一个报文并返回它的 115 维特征向量"""
        timestamp = pkt.timestamp
        if timestamp < self.last_timestamp:
            if self.last_timestamp - timestamp > TIME_TOLERANCE:
                raise FeatureError(
                    f"报文时间倒退: {timestamp} < {self.last_timestamp}",
                    timestamp=timestamp,
                )
            logger.warning(f"报文时间戳 {timestamp} 在容差内倒退，按 {self.last_timestamp} 处理")
            timestamp = self.last_timestamp
        self.last_timestamp = timestamp

        keys = aggregation_keys(pkt)
        for name, key in keys.items():
            self.queues.setdefault((name, key), deque()).append((timestamp, pkt.size, pkt.direction))
        self._prune(timestamp)
        self.packets_seen += 1

        events = {name: self.queues[(name, key)] for name, key in keys.items()}
        vector: List[float] = []
        for duration in self.spec.durations:
            vector += _window_stats(events, pkt.direction, timestamp - duration)
        return np.array(vector, dtype=np.float64)

    def retained_events(self) -> int:
        return sum(len(q) for q in self.queues.values())


def update(state: FeatureExtractor, pkt: PacketRecord) -> np.ndarray:
    return state.update(pkt)


def batch_oracle(
    packets: Sequence[PacketRecord], index: int, spec: WindowSpec = WindowSpec()
) -> np.ndarray:
    """从原始报文列表重新计算 packets[index] 的 115 个统计量（测试参照实现）"""
    trigger = packets[index]
    now = trigger.timestamp
    keys = aggregation_keys(trigger)
    history = [(p, aggregation_keys(p)) for p in packets[: index + 1]]

    vector: List[float] = []
    for duration in spec.durations:
        since = now - duration
        window = [(p, k) for p, k in history if p.timestamp > since]
        per_key = {}
        for name, key in keys.items():
            members = [p for p, k in window if k[name] == key]
            outgoing = [p for p in members if p.direction == trigger.direction]
            incoming = [p for p in members if p.direction != trigger.direction]
            per_key[name] = (outgoing, incoming)

        for name in ("srcip", "srcmacip"):
            vector += _oracle_moments([p.size for p in per_key[name][0]])

        outgoing, incoming = per_key["channel"]
        vector += _oracle_moments([p.size for p in outgoing])
        times = [p.timestamp for p in outgoing]
        gaps = [b - a for a, b in zip(times, times[1:])]
        count, mean, variance = _oracle_moments(gaps)
        vector += [mean, variance, count]
        vector += _oracle_pair([p.size for p in outgoing], [p.size for p in incoming])

        outgoing, incoming = per_key["socket"]
        vector += _oracle_moments([p.size for p in outgoing])
        vector += _oracle_pair([p.size for p in outgoing], [p.size for p in incoming])
    return np.array(vector, dtype=np.float64)


def _oracle_moments(values: List[float]) -> List[float]:
    if not values:
        return [0.0, 0.0, 0.0]
    n = len(values)
    mean = math.fsum(values) / n
    variance = math.fsum((v - mean) ** 2 for v in values) / n
    return [float(n), mean, variance]


def _oracle_pair(out_sizes: List[float], in_sizes: List[float]) -> List[float]:
    _, mu_out, var_out = _oracle_moments(out_sizes)
    _, mu_in, var_in = _oracle_moments(in_sizes)
    magnitude = math.hypot(mu_out, mu_in)
    radius = math.hypot(var_out, var_in)
    m = min(len(out_sizes), len(in_sizes))
    if m == 0:
        return [magnitude, radius, 0.0, 0.0]
    pairs = zip(reversed(out_sizes), reversed(in_sizes))
    covariance = math.fsum((a - mu_out) * (b - mu_in) for a, b in pairs) / m
    if var_out == 0.0 or var_in == 0.0:
        return [magnitude, radius, covariance, 0.0]
    correlation = covariance / (math.sqrt(var_out) * math.sqrt(var_in))
    return [magnitude, radius, covariance, max(-1.0, min(1.0, correlation))]


def extract_stream(
    packets: Iterable[PacketRecord], spec: WindowSpec = WindowSpec(), device_id: str = ""
) -> FeatureMatrix:
    """每个报文输出一行特征，保持输入顺序"""
    extractor = FeatureExtractor(spec)
    rows = []
    for i, pkt in enumerate(packets):
        try:
            rows.append(extractor.update(pkt))
        except FeatureError as e:
            raise FeatureError(f"第 {i} 个报文: {e}", index=i, timestamp=e.timestamp)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), STATS_PER_WINDOW * len(spec.durations))
    logger.info(f"特征提取完成: {len(rows)} 个报文")
    return FeatureMatrix(values, device_id)


def load_packet_csv(path: Union[str, Path]) -> List[PacketRecord]:
    """读取报文记录 CSV（必须有表头），错误信息带文件行号"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise FeatureError(f"报文文件为空: {path}")
    except pd.errors.ParserError as e:
        raise FeatureError(f"报文文件解析失败 {path}: {e}")

    missing = [c for c in PACKET_COLUMNS if c not in frame.columns]
    if missing:
        raise FeatureError(f"报文文件缺少列: {', '.join(missing)}")

    packets = []
    for row, record in enumerate(frame[PACKET_COLUMNS].to_dict("records")):
        line = row + 2
        if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in record.values()):
            raise FeatureError(f"第 {line} 行列数不足", index=row)
        try:
            packets.append(
                PacketRecord(
                    timestamp=float(record["timestamp"]),
                    src_mac=record["src_mac"],
                    src_ip=record["src_ip"],
                    dst_ip=record["dst_ip"],
                    src_port=int(record["src_port"] or 0),
                    dst_port=int(record["dst_port"] or 0),
                    protocol=record["protocol"],
                    size=int(record["size"]),
                    direction=record["direction"].strip().lower(),
                )
            )
        except (ValueError, ValidationError) as e:
            raise FeatureError(f"第 {line} 行无法解析: {e}", index=row)
    logger.info(f"读取报文文件 {path}: {len(packets)} 个报文")
    return packets


def write_packet_csv(packets: Sequence[PacketRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = pd.DataFrame(
        [p.model_dump(mode="json") for p in packets], columns=PACKET_COLUMNS
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


assert STATS_PER_WINDOW * len(DEFAULT_WINDOWS) == FEATURE_DIM
