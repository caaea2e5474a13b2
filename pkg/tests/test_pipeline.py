"""
端到端流程测试：合成数据上的训练、标定、检测与评估

运行较慢，可用 pytest -m "not slow" 跳过。
设置 CUMAD_NBAIOT_DIR 指向 N-BaIoT 数据目录（每台设备一个子目录，含 benign_traffic.csv
与攻击流量 CSV）时，额外在真实数据上验证。
"""

import os
from pathlib import Path

import numpy as np
import pytest

from cumad.autoencoder import TrainConfig, init_model, train
from cumad.calibration import calibrate, score_matrix
from cumad.cli import SEED_INIT, SEED_PARTITION, SEED_TEST, SEED_TRAIN
from cumad.config import DEFAULT_SEED
from cumad.dataset import (
    FeatureMatrix,
    build_balanced_test,
    concat,
    generate_synthetic,
    load_feature_csv,
    partition_benign,
)
from cumad.detector import DeviceRegistry, SprtOverrides, resolve_sprt_config, run_stream
from cumad.evaluation import evaluate_device
from cumad.models.dataset import Label, SyntheticSpec

pytestmark = pytest.mark.slow


# 运行点：θ₀ = 0.2，θ₁ = 0.8，α = β = 0.01
OPERATING_POINT = SprtOverrides(theta0=0.2)


def _run_pipeline(benign, attack, device_id, seed=DEFAULT_SEED):
    split = partition_benign(benign, seed + SEED_PARTITION)
    model = init_model(seed=seed + SEED_INIT)
    model, report = train(model, split.train, split.validation, TrainConfig(seed=seed + SEED_TRAIN))
    profile = calibrate(model, split.calibration_set, device_id)
    test = build_balanced_test(split.holdout_benign, attack, seed + SEED_TEST)
    return model, profile, split, test


@pytest.fixture(scope="module")
def synthetic_run():
    # 3000 行良性：训练与验证各 1000 行，保留 1000 行与 1000 行攻击组成测试集
    spec = SyntheticSpec(
        n_benign=3000, n_attack=3000, benign_correlation=0.8, attack_shift=4.0, seed=DEFAULT_SEED, device_id="synthetic"
    )
    benign, attack = generate_synthetic(spec)
    model, profile, split, test = _run_pipeline(benign, attack, "synthetic")
    sprt_cfg = resolve_sprt_config(profile, OPERATING_POINT)
    report = evaluate_device(
        model, profile, test, sprt_cfg, window_sizes=range(20, 83), validation=split.validation
    )
    return model, profile, split, test, report


class TestSyntheticPipeline:
    """Desk-scale reproduction on correlated Gaussian data"""

    def test_point_fpr_range(self, synthetic_run):
        report = synthetic_run[-1]
        assert 0.005 <= report["point"]["fpr"] <= 0.25

    def test_cumad_reduces_fpr(self, synthetic_run):
        report = synthetic_run[-1]
        assert report["cumad"]["fpr"] <= report["point"]["fpr"] / 5

    def test_cumad_recall(self, synthetic_run):
        report = synthetic_run[-1]
        assert report["cumad"]["recall"] >= 0.99

    def test_attack_points_flagged(self, synthetic_run):
        model, profile, _, test, _ = synthetic_run
        attack = test.values[test.labels == Label.ATTACK.code]
        flagged = np.mean(score_matrix(model, FeatureMatrix(attack, "synthetic")) > profile.T_as)
        assert flagged >= 0.95

    def test_calibrated_theta0_recall(self, synthetic_run):
        model, profile, _, test, _ = synthetic_run
        report = evaluate_device(model, profile, test, resolve_sprt_config(profile))
        assert report["cumad"]["recall"] >= 0.99

    def test_few_observations_per_detection(self, synthetic_run):
        report = synthetic_run[-1]
        cdf = dict(report["cumad"]["observation_cdf"])
        within_ten = max((fraction for n, fraction in cdf.items() if n <= 10), default=0.0)
        assert within_ten >= 0.9
        assert report["cumad"]["mean_observations"] <= 6

    def test_window_sweep(self, synthetic_run):
        report = synthetic_run[-1]
        windows = [int(w) for w in report["baseline"]]
        assert set(range(20, 83)) <= set(windows)
        assert report["config"]["selected_window"] in windows

    def test_benign_streams_rarely_alert(self, synthetic_run):
        model, profile, split, _, _ = synthetic_run
        holdout = split.holdout_benign.values
        quiet = 0
        for seed in range(100):
            rows = np.random.default_rng(seed).choice(len(holdout), size=20, replace=False)
            registry = DeviceRegistry()
            registry.add_session("synthetic", model, profile, OPERATING_POINT)
            summary = run_stream(registry, [("synthetic", holdout[i]) for i in rows])
            quiet += not summary.alerts
        assert quiet >= 95


def _nbaiot_devices():
    root = os.getenv("CUMAD_NBAIOT_DIR")
    if not root:
        return []
    return sorted(p for p in Path(root).iterdir() if (p / "benign_traffic.csv").is_file())


@pytest.mark.skipif(not os.getenv("CUMAD_NBAIOT_DIR"), reason="CUMAD_NBAIOT_DIR 未设置")
@pytest.mark.parametrize("device_dir", _nbaiot_devices(), ids=lambda p: p.name)
def test_nbaiot_device(device_dir):
    device_id = device_dir.name
    benign = load_feature_csv(device_dir / "benign_traffic.csv", Label.BENIGN, device_id)
    attack_files = sorted(p for p in device_dir.rglob("*.csv") if p.name != "benign_traffic.csv")
    attack = concat([load_feature_csv(p, Label.ATTACK, device_id) for p in attack_files])

    model, profile, _, test = _run_pipeline(benign, attack, device_id)
    report = evaluate_device(model, profile, test, resolve_sprt_config(profile))
    assert report["cumad"]["recall"] >= 0.99
    assert 3 <= report["cumad"]["mean_observations"] <= 8
