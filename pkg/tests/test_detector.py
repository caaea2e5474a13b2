"""
检测器测试：设备注册、逐条处理、重新布防与多设备检测流
"""

import json

import numpy as np
import pytest

from cumad.autoencoder import save_model
from cumad.detector import (
    UNKNOWN_SKIP,
    AlertLog,
    DeviceRegistry,
    DeviceSession,
    SprtOverrides,
    process,
    re_arm,
    register_device,
    resolve_sprt_config,
    run_stream,
)
from cumad.errors import (
    DetectorError,
    DuplicateDeviceError,
    ModelFormatError,
    TerminalSessionError,
    UncalibratedModelError,
    UnknownDeviceError,
)
from cumad.models.detection import DecisionKind
from cumad.sprt import SprtConfig, SprtState


@pytest.fixture
def session(toy_model, fixed_profile):
    return DeviceSession(
        device_id="dev", model=toy_model, profile=fixed_profile, sprt=SprtState(SprtConfig(theta0=0.2))
    )


@pytest.fixture
def scripted_scores(mocker):
    """按脚本返回异常分数，绕开模型"""

    def install(scores):
        return mocker.patch("cumad.detector.reconstruction_error", side_effect=list(scores))

    return install


class TestRegistration:
    """Test device registration"""

    def test_valid_model_file(self, toy_model_file):
        registry = DeviceRegistry()
        session = register_device(registry, "cam", toy_model_file)
        assert session.sprt.lam == 0.0
        assert not session.is_terminal
        assert "cam" in registry
        assert len(registry) == 1

    def test_uncalibrated_model(self, tmp_path, toy_model):
        path = save_model(toy_model, tmp_path / "raw.json")
        with pytest.raises(UncalibratedModelError) as exc:
            register_device(DeviceRegistry(), "cam", path)
        assert "uncalibrated model" in str(exc.value)

    def test_duplicate(self, toy_model_file):
        registry = DeviceRegistry()
        register_device(registry, "cam", toy_model_file)
        with pytest.raises(DuplicateDeviceError):
            register_device(registry, "cam", toy_model_file)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFormatError):
            register_device(DeviceRegistry(), "cam", tmp_path / "absent.json")

    def test_list_and_remove(self, toy_model_file):
        registry = DeviceRegistry()
        register_device(registry, "cam", toy_model_file)
        listing = registry.list_devices()
        assert listing[0]["device_id"] == "cam"
        assert listing[0]["status"] == "active"
        assert registry.remove_device("cam")
        assert not registry.remove_device("cam")
        assert registry.get_session("cam") is None
        with pytest.raises(UnknownDeviceError):
            registry.require_session("cam")


class TestSprtResolution:
    """Test SPRT parameter precedence"""

    def test_calibrated_theta0_by_default(self, fixed_profile):
        cfg = resolve_sprt_config(fixed_profile)
        assert cfg == SprtConfig(theta0=0.2, theta1=0.8, alpha=0.01, beta=0.01)

    def test_device_override_beats_defaults(self, fixed_profile):
        cfg = resolve_sprt_config(
            fixed_profile,
            overrides=SprtOverrides(theta0=0.1),
            defaults=SprtOverrides(theta0=0.3, alpha=0.05),
        )
        assert cfg.theta0 == 0.1
        assert cfg.alpha == 0.05
        assert cfg.theta1 == 0.8


class TestProcess:
    """Test per-record processing"""

    def test_four_anomalies_raise_alert(self, session, scripted_scores):
        scripted_scores([2.0] * 4)
        results = [process(session, np.zeros(6)) for _ in range(4)]
        assert results[:3] == [None, None, None]
        alert = results[3]
        assert alert.n_observations == 4
        assert alert.index == 3
        assert alert.device_id == "dev"
        assert session.is_terminal
        assert session.alerts_emitted == 1

    def test_stage_composition(self, session, mocker):
        score = mocker.patch("cumad.detector.reconstruction_error", return_value=0.3)
        classify = mocker.patch("cumad.detector.classify", return_value=1)
        x = np.ones(6)
        process(session, x)
        score.assert_called_once_with(session.model, x)
        classify.assert_called_once_with(0.3, 1.0)
        assert session.sprt.n_observations == 1

    def test_threshold_is_strict(self, session, scripted_scores):
        scripted_scores([1.0] * 4)
        assert all(process(session, np.zeros(6)) is None for _ in range(4))
        assert session.sprt.lam == 0.0

    def test_alternating_scores_never_alert(self, session, scripted_scores):
        scripted_scores([2.0, 0.1] * 200)
        assert all(process(session, np.zeros(6)) is None for _ in range(400))
        assert not session.is_terminal

    def test_benign_streak_resets(self, session, scripted_scores):
        scripted_scores([0.1] * 4 + [2.0])
        for _ in range(4):
            assert process(session, np.zeros(6)) is None
        assert session.sprt.n_observations == 0
        process(session, np.zeros(6))
        assert session.sprt.n_observations == 1

    def test_terminal_session_rejects_input(self, session, scripted_scores):
        scripted_scores([2.0] * 4)
        for _ in range(4):
            process(session, np.zeros(6))
        with pytest.raises(TerminalSessionError):
            process(session, np.zeros(6))

    def test_real_model_scores(self, toy_model_file, toy_data):
        registry = DeviceRegistry()
        session = register_device(registry, "cam", toy_model_file)
        _, attack = toy_data
        alert = None
        for x in attack.values[:50]:
            alert = process(session, x)
            if alert is not None:
                break
        assert alert is not None
        assert session.is_terminal


class TestReArm:
    """Test re-arming after an alert"""

    def test_re_arm(self, session, scripted_scores):
        scripted_scores([2.0] * 8)
        for _ in range(4):
            process(session, np.zeros(6))
        re_arm(session)
        assert not session.is_terminal
        assert session.sprt.lam == 0.0
        assert session.alerts_emitted == 1
        results = [process(session, np.zeros(6)) for _ in range(4)]
        assert results[3] is not None
        assert session.alerts_emitted == 2

    def test_active_session(self, session):
        with pytest.raises(DetectorError):
            re_arm(session)


class TestRunStream:
    """Test multi-device stream processing"""

    @pytest.fixture
    def registry(self, toy_model, fixed_profile):
        registry = DeviceRegistry()
        registry.add_session("cam", toy_model, fixed_profile)
        registry.add_session("bell", toy_model.copy(), fixed_profile)
        return registry

    @pytest.fixture
    def scores_by_marker(self, mocker):
        # 用特征向量首元素作为异常分数
        mocker.patch("cumad.detector.reconstruction_error", side_effect=lambda model, x: float(x[0]))

    def _records(self, pattern):
        return [(device, np.full(6, score)) for device, score in pattern]

    def test_one_compromised_device(self, registry, scores_by_marker, tmp_path):
        pattern = [("cam", 0.1), ("bell", 5.0)] * 10
        log = AlertLog(tmp_path / "alerts.jsonl")
        summary = run_stream(registry, self._records(pattern), log)
        assert [a.device_id for a in summary.alerts] == ["bell"]
        assert summary.alerts[0].index == 7
        assert summary.ignored_terminal == 6
        lines = AlertLog.read(tmp_path / "alerts.jsonl")
        assert lines == [
            {
                "device_id": "bell",
                "index": 7,
                "lambda": summary.alerts[0].lambda_at_decision,
                "n_observations": 4,
                "verdict": "compromised",
            }
        ]

    def test_empty_stream(self, registry, tmp_path):
        log = AlertLog(tmp_path / "alerts.jsonl")
        summary = run_stream(registry, [], log)
        assert summary.records == 0
        assert len(log) == 0

    def test_unknown_device_fails_by_default(self, registry, scores_by_marker):
        with pytest.raises(UnknownDeviceError):
            run_stream(registry, self._records([("cam", 0.1), ("tv", 0.1)]))

    def test_unknown_device_skip(self, registry, scores_by_marker):
        summary = run_stream(
            registry, self._records([("cam", 0.1), ("tv", 0.1)]), unknown_policy=UNKNOWN_SKIP
        )
        assert summary.skipped_unknown == 1
        assert summary.processed == 1

    def test_invalid_policy(self, registry):
        with pytest.raises(DetectorError):
            run_stream(registry, [], unknown_policy="ignore")

    def test_parallel_matches_sequential(self, toy_model, fixed_profile, scores_by_marker, tmp_path):
        rng = np.random.default_rng(0)
        devices = [f"dev{i}" for i in range(4)]
        pattern = [(devices[int(rng.integers(4))], float(rng.choice([0.1, 5.0], p=[0.4, 0.6]))) for _ in range(400)]

        def run(workers, name):
            registry = DeviceRegistry()
            for device in devices:
                registry.add_session(device, toy_model, fixed_profile)
            log = AlertLog(tmp_path / name)
            return run_stream(registry, self._records(pattern), log, workers=workers)

        sequential = run(1, "seq.jsonl")
        parallel = run(4, "par.jsonl")
        assert [a.to_log_dict() for a in sequential.alerts] == [a.to_log_dict() for a in parallel.alerts]
        assert sequential.to_dict() == parallel.to_dict()
        assert (tmp_path / "seq.jsonl").read_bytes() == (tmp_path / "par.jsonl").read_bytes()

    def test_alert_log_is_json_lines(self, registry, scores_by_marker, tmp_path):
        path = tmp_path / "alerts.jsonl"
        run_stream(registry, self._records([("cam", 5.0)] * 4 + [("bell", 5.0)] * 4), AlertLog(path))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["device_id"] for line in lines] == ["cam", "bell"]

    @pytest.mark.parametrize("workers", [1, 2])
    def test_unknown_device_leaves_log_untouched(self, registry, scores_by_marker, tmp_path, workers):
        path = tmp_path / "alerts.jsonl"
        path.write_text("", encoding="utf-8")
        records = self._records([("cam", 5.0)] * 4 + [("ghost", 5.0)])
        with pytest.raises(UnknownDeviceError):
            run_stream(registry, records, AlertLog(path), workers=workers)
        assert AlertLog.read(path) == []
        assert registry.get_session("cam").sprt.n_observations == 0
        assert not registry.get_session("cam").is_terminal

    @pytest.mark.parametrize("workers", [1, 3])
    def test_alerts_only_when_upper_bound_reached(
        self, toy_model, fixed_profile, scores_by_marker, tmp_path, workers
    ):
        rng = np.random.default_rng(7)
        devices = ["a", "b", "c"]
        pattern = [(devices[int(rng.integers(3))], float(rng.choice([0.1, 5.0], p=[0.5, 0.5]))) for _ in range(300)]
        registry = DeviceRegistry()
        for device in devices:
            registry.add_session(device, toy_model, fixed_profile)
        path = tmp_path / "alerts.jsonl"
        run_stream(registry, self._records(pattern), AlertLog(path), workers=workers)

        # 逐设备重放同一观测序列，记录首次越过上界 B 的位置
        expected = {}
        states = {device: SprtState(resolve_sprt_config(fixed_profile)) for device in devices}
        for index, (device, score) in enumerate(pattern):
            state = states[device]
            if state.is_terminal:
                continue
            decision = state.observe(1 if score > fixed_profile.T_as else 0)
            if decision.kind == DecisionKind.ACCEPT_H1:
                expected[device] = (index, decision.lambda_at_decision)

        logged = AlertLog.read(path)
        assert {line["device_id"]: (line["index"], line["lambda"]) for line in logged} == expected
        assert all(line["lambda"] >= states[line["device_id"]].B for line in logged)
