"""
评估模块

复现逐点检测、CUMAD 序贯检测与固定窗口多数表决基线的评估：
准确率、召回率、精确率、F1、误报率、平均观测数以及观测数累计分布。
"""

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .autoencoder import AutoencoderModel
from .calibration import score_matrix
from .dataset import FeatureMatrix
from .errors import EvaluationError
from .models.dataset import Label
from .models.detection import DecisionKind, DetectorProfile
from .models.evaluation import MetricsReport
from .sprt import SprtConfig, SprtState, expected_sample_size, operating_characteristic

logger = logging.getLogger(__name__)


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def metrics_from_counts(
    tp: int,
    fp: int,
    tn: int,
    fn: int,
    detection_sizes: Optional[Sequence[int]] = None,
    trials_h1: int = 0,
    trials_h0: int = 0,
) -> MetricsReport:
    """由混淆矩阵计数得到各项指标"""
    total = tp + fp + tn + fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    mean_observations = None
    cdf: List[Tuple[int, float]] = []
    if detection_sizes:
        mean_observations = float(np.mean(detection_sizes))
        cdf = observation_cdf(detection_sizes)
    return MetricsReport(
        accuracy=_ratio(tp + tn, total),
        recall=recall,
        precision=precision,
        f1=f1,
        fpr=_ratio(fp, fp + tn),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        mean_observations=mean_observations,
        observation_cdf=cdf,
        trials_h1=trials_h1,
        trials_h0=trials_h0,
    )


def observation_cdf(sizes: Sequence[int]) -> List[Tuple[int, float]]:
    """右连续阶梯累计分布 [(n, 累计比例)]，末项为 1"""
    counts = Counter(int(s) for s in sizes)
    total = sum(counts.values())
    cdf, running = [], 0
    for n in sorted(counts):
        running += counts[n]
        cdf.append((n, running / total))
    if cdf:
        cdf[-1] = (cdf[-1][0], 1.0)
    return cdf


def _require_labels(data: FeatureMatrix):
    if data.labels is None:
        raise EvaluationError("测试矩阵没有标签")


def point_metrics_from_scores(
    scores: Union[np.ndarray, Sequence[float]], labels: Union[np.ndarray, Sequence[int]], T_as: float
) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    flagged = scores > T_as
    attack = labels == 1
    return metrics_from_counts(
        tp=int(np.count_nonzero(flagged & attack)),
        fp=int(np.count_nonzero(flagged & ~attack)),
        tn=int(np.count_nonzero(~flagged & ~attack)),
        fn=int(np.count_nonzero(~flagged & attack)),
    )


def point_metrics(model: AutoencoderModel, T_as: float, test: FeatureMatrix) -> MetricsReport:
    """逐点检测：每个数据点按 score > T_as 单独判定"""
    _require_labels(test)
    return point_metrics_from_scores(score_matrix(model, test), test.labels, T_as)


def run_trials(observations: Sequence[int], cfg: SprtConfig) -> List[Tuple[DecisionKind, int]]:
    """在同质观测流上反复运行 SPRT，每次判定后重新开始；末尾未判定的观测丢弃"""
    trials = []
    state = SprtState(cfg)
    for o in observations:
        decision = state.observe(int(o))
        if decision.kind != DecisionKind.CONTINUE:
            trials.append((decision.kind, decision.n_used))
            state.reset()
    return trials


def cumad_trial_metrics_from_scores(
    benign_scores: Union[np.ndarray, Sequence[float]],
    attack_scores: Union[np.ndarray, Sequence[float]],
    T_as: float,
    sprt_cfg: SprtConfig,
) -> MetricsReport:
    benign_scores = np.asarray(benign_scores, dtype=np.float64)
    attack_scores = np.asarray(attack_scores, dtype=np.float64)
    if benign_scores.size == 0 or attack_scores.size == 0:
        raise EvaluationError("良性流和攻击流都不能为空")

    benign_trials = run_trials((benign_scores > T_as).astype(int), sprt_cfg)
    attack_trials = run_trials((attack_scores > T_as).astype(int), sprt_cfg)

    tp = sum(1 for kind, _ in attack_trials if kind == DecisionKind.ACCEPT_H1)
    fn = len(attack_trials) - tp
    fp = sum(1 for kind, _ in benign_trials if kind == DecisionKind.ACCEPT_H1)
    tn = len(benign_trials) - fp
    sizes = [n for kind, n in attack_trials if kind == DecisionKind.ACCEPT_H1]
    return metrics_from_counts(
        tp, fp, tn, fn, detection_sizes=sizes, trials_h1=tp + fp, trials_h0=tn + fn
    )


def cumad_trial_metrics(
    model: AutoencoderModel,
    profile: DetectorProfile,
    sprt_cfg: SprtConfig,
    benign_stream: FeatureMatrix,
    attack_stream: FeatureMatrix,
) -> MetricsReport:
    """同质流试验协议：攻击流上接受 H₁ 为真阳性，良性流上接受 H₁ 为假阳性"""
    if len(benign_stream) == 0 or len(attack_stream) == 0:
        raise EvaluationError("良性流和攻击流都不能为空")
    return cumad_trial_metrics_from_scores(
        score_matrix(model, benign_stream),
        score_matrix(model, attack_stream),
        profile.T_as,
        sprt_cfg,
    )


def _window_flags(scores: np.ndarray, T_as: float, window_size: int) -> np.ndarray:
    n_windows = scores.size // window_size
    windows = scores[: n_windows * window_size].reshape(n_windows, window_size)
    return np.count_nonzero(windows > T_as, axis=1) * 2 > window_size


def window_majority_baseline(
    scores: Union[np.ndarray, Sequence[float]],
    labels: Union[np.ndarray, Sequence[int]],
    T_as: float,
    window_size: int,
) -> MetricsReport:
    """固定窗口多数表决：不重叠窗口中严格超过半数的点异常即判定该窗口"""
    if window_size < 1:
        raise EvaluationError(f"窗口大小至少为 1: {window_size}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    benign = scores[labels == 0]
    attack = scores[labels == 1]
    for name, stream in (("良性", benign), ("攻击", attack)):
        if 0 < stream.size < window_size:
            raise EvaluationError(f"{name}流长度 {stream.size} 小于窗口大小 {window_size}")
    if benign.size == 0 and attack.size == 0:
        raise EvaluationError("分数流为空")

    benign_flags = _window_flags(benign, T_as, window_size)
    attack_flags = _window_flags(attack, T_as, window_size)
    return metrics_from_counts(
        tp=int(np.count_nonzero(attack_flags)),
        fp=int(np.count_nonzero(benign_flags)),
        tn=int(np.count_nonzero(~benign_flags)),
        fn=int(np.count_nonzero(~attack_flags)),
    )


def sweep_windows(
    scores: Union[np.ndarray, Sequence[float]],
    labels: Union[np.ndarray, Sequence[int]],
    T_as: float,
    window_sizes: Sequence[int],
) -> Dict[int, MetricsReport]:
    return {w: window_majority_baseline(scores, labels, T_as, w) for w in window_sizes}


def select_window_size(
    benign_scores: Union[np.ndarray, Sequence[float]], T_as: float, max_window: int = 100
) -> int:
    """基线的窗口选择：良性验证分数上不产生任何误报的最小窗口"""
    benign_scores = np.asarray(benign_scores, dtype=np.float64)
    limit = min(max_window, benign_scores.size)
    for w in range(1, limit + 1):
        if not np.any(_window_flags(benign_scores, T_as, w)):
            return w
    return max(limit, 1)


def fpr_comparison_report(point: MetricsReport, cumad: MetricsReport) -> float:
    """逐点误报率与 CUMAD 误报率之比，CUMAD 误报率下限为半个计数"""
    negatives = max(cumad.negatives, 1)
    return point.fpr / max(cumad.fpr, 1.0 / (2 * negatives))


def evaluate_device(
    model: AutoencoderModel,
    profile: DetectorProfile,
    test: FeatureMatrix,
    sprt_cfg: SprtConfig,
    window_sizes: Sequence[int] = (),
    validation: Optional[FeatureMatrix] = None,
) -> Dict[str, Any]:
    """
    单台设备的完整评估报告

    给出良性验证集时，额外用 select_window_size 选出基线窗口并加入扫描。
    """
    _require_labels(test)
    scores = score_matrix(model, test)
    labels = test.labels
    point = point_metrics_from_scores(scores, labels, profile.T_as)
    cumad = cumad_trial_metrics_from_scores(
        scores[labels == Label.BENIGN.code], scores[labels == Label.ATTACK.code], profile.T_as, sprt_cfg
    )
    windows = set(window_sizes)
    selected = None
    if validation is not None and len(validation) > 0:
        selected = select_window_size(score_matrix(model, validation), profile.T_as)
        windows.add(selected)
    window_sizes = sorted(windows)
    baseline = {
        str(w): m.model_dump() for w, m in sweep_windows(scores, labels, profile.T_as, window_sizes).items()
    }
    ratio = fpr_comparison_report(point, cumad)
    logger.info(
        f"评估完成 [{profile.device_id}]: 逐点 FPR {point.fpr:.4f}, CUMAD FPR {cumad.fpr:.4f}, "
        f"改善倍数 {ratio:.2f}, 平均观测数 {cumad.mean_observations}"
    )
    return {
        "device_id": profile.device_id or test.device_id,
        "config": {
            "T_as": profile.T_as,
            "mu_D": profile.mu_D,
            "sigma_D": profile.sigma_D,
            "theta0": sprt_cfg.theta0,
            "theta1": sprt_cfg.theta1,
            "alpha": sprt_cfg.alpha,
            "beta": sprt_cfg.beta,
            "window_sizes": window_sizes,
            "selected_window": selected,
            "test_rows": len(test),
        },
        "point": point.model_dump(),
        "cumad": cumad.model_dump(),
        "baseline": baseline,
        "fpr_improvement": ratio,
        "wald": {
            "oc_at_theta0": operating_characteristic(sprt_cfg, sprt_cfg.theta0),
            "oc_at_theta1": operating_characteristic(sprt_cfg, sprt_cfg.theta1),
            "asn_at_theta0": expected_sample_size(sprt_cfg, sprt_cfg.theta0),
            "asn_at_theta1": expected_sample_size(sprt_cfg, sprt_cfg.theta1),
        },
    }


def summarize_devices(reports: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """多设备汇总：逐设备表格与平均值"""
    if not reports:
        raise EvaluationError("没有可汇总的评估报告")
    rows = []
    for report in reports:
        cumad = report["cumad"]
        rows.append(
            {
                "device_id": report["device_id"],
                "mean_size": cumad["mean_observations"],
                "accuracy": cumad["accuracy"],
                "recall": cumad["recall"],
                "f1": cumad["f1"],
                "point_fpr": report["point"]["fpr"],
                "cumad_fpr": cumad["fpr"],
                "fpr_improvement": report["fpr_improvement"],
            }
        )
    table = pd.DataFrame(rows)
    averages = table.drop(columns=["device_id"]).mean(numeric_only=True).to_dict()
    return {"devices": rows, "average": averages}


def write_report(report: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, ensure_ascii=False)
    logger.info(f"评估报告已写出: {path}")
    return path


def write_cdf_csv(cdf: Sequence[Tuple[int, float]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(cdf), columns=["n_observations", "cumulative_fraction"]).to_csv(
        path, index=False, float_format="%.17g"
    )
    return path
