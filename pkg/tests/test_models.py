import pytest
from pydantic import ValidationError

from cumad.models.dataset import Label, SyntheticSpec
from cumad.models.detection import Alert, Decision, DecisionKind, DetectorProfile, Verdict
from cumad.models.evaluation import MetricsReport
from cumad.models.packet import Direction, PacketRecord, Protocol


class TestPacketModels:
    """Test packet record model"""

    def test_packet_record_creation(self):
        """Test PacketRecord model creation"""
        pkt = PacketRecord(
            timestamp=12.5,
            src_ip="192.168.1.10",
            dst_ip="8.8.8.8",
            src_port=40000,
            dst_port=53,
            protocol="UDP",
            size=74,
            direction="outgoing",
        )

        assert pkt.protocol == Protocol.UDP
        assert pkt.direction == Direction.OUTGOING
        assert pkt.is_outgoing
        assert pkt.src_mac == ""

    def test_unknown_protocol(self):
        """Unknown protocols map to OTHER"""
        pkt = PacketRecord(timestamp=0.0, src_ip="a", dst_ip="b", protocol="icmp", size=60, direction="incoming")
        assert pkt.protocol == Protocol.OTHER
        assert pkt.src_port == 0

    @pytest.mark.parametrize(
        "changes",
        [
            {"size": 0},
            {"timestamp": float("inf")},
            {"dst_port": 70000},
            {"direction": "sideways"},
        ],
    )
    def test_packet_record_validation(self, changes):
        """Test PacketRecord model validation"""
        data = {"timestamp": 1.0, "src_ip": "a", "dst_ip": "b", "size": 60, "direction": "outgoing"}
        with pytest.raises(ValidationError):
            PacketRecord(**{**data, **changes})

    def test_frozen(self):
        pkt = PacketRecord(timestamp=1.0, src_ip="a", dst_ip="b", size=60, direction="outgoing")
        with pytest.raises(ValidationError):
            pkt.size = 61


class TestDatasetModels:
    """Test dataset models"""

    def test_label_codes(self):
        assert Label.BENIGN.code == 0
        assert Label.ATTACK.code == 1
        assert Label("attack") is Label.ATTACK

    def test_synthetic_spec_defaults(self):
        spec = SyntheticSpec(n_benign=10, n_attack=5)
        assert spec.dim == 115
        assert spec.attack_shift == 4.0

    def test_synthetic_spec_validation(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(n_benign=10, n_attack=5, benign_correlation=1.0)
        with pytest.raises(ValidationError):
            SyntheticSpec(n_benign=0, n_attack=5)


class TestDetectionModels:
    """Test detection-related data models"""

    def test_detector_profile(self):
        profile = DetectorProfile(T_as=0.75, mu_D=0.5, sigma_D=0.25, theta0=0.16)
        assert profile.theta0_raw is None
        assert profile.device_id == ""

    def test_detector_profile_theta0_range(self):
        with pytest.raises(ValidationError):
            DetectorProfile(T_as=0.75, mu_D=0.5, sigma_D=0.25, theta0=0.0)

    def test_decision(self):
        decision = Decision(kind=DecisionKind.ACCEPT_H1, lambda_at_decision=5.5, n_used=4)
        assert decision.is_accept
        assert not Decision(kind=DecisionKind.CONTINUE, lambda_at_decision=0.0, n_used=0).is_accept

    def test_accept_needs_observations(self):
        with pytest.raises(ValidationError):
            Decision(kind=DecisionKind.ACCEPT_H0, lambda_at_decision=-5.0, n_used=0)

    def test_alert_log_dict(self):
        alert = Alert(device_id="cam", index=41, lambda_at_decision=5.545, n_observations=4)
        assert alert.verdict == Verdict.COMPROMISED
        assert alert.to_log_dict() == {
            "device_id": "cam",
            "index": 41,
            "lambda": 5.545,
            "n_observations": 4,
            "verdict": "compromised",
        }
        assert alert.model_dump(by_alias=True)["lambda"] == 5.545


class TestEvaluationModels:
    """Test metrics report model"""

    def test_metrics_report(self):
        report = MetricsReport(accuracy=0.9, recall=1.0, precision=0.8, f1=0.89, fpr=0.2, fp=2, tn=8)
        assert report.negatives == 10
        assert report.confusion() == {"tp": 0, "fp": 2, "tn": 8, "fn": 0}

    def test_rates_are_fractions(self):
        with pytest.raises(ValidationError):
            MetricsReport(accuracy=1.5, recall=1.0, precision=1.0, f1=1.0, fpr=0.0)

    def test_cdf_must_not_decrease(self):
        with pytest.raises(ValidationError):
            MetricsReport(
                accuracy=1, recall=1, precision=1, f1=1, fpr=0, observation_cdf=[(4, 0.8), (5, 0.6), (6, 1.0)]
            )
