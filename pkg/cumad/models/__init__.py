from .packet import PacketRecord, Protocol, Direction
from .dataset import Label, SyntheticSpec
from .detection import Alert, Decision, DecisionKind, DetectorProfile, Verdict
from .evaluation import MetricsReport

__all__ = [
    "PacketRecord",
    "Protocol",
    "Direction",
    "Label",
    "SyntheticSpec",
    "Alert",
    "Decision",
    "DecisionKind",
    "DetectorProfile",
    "Verdict",
    "MetricsReport",
]
