from enum import Enum
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


class DecisionKind(str, Enum):
    CONTINUE = "continue"
    ACCEPT_H0 = "accept_h0"
    ACCEPT_H1 = "accept_h1"


class Verdict(str, Enum):
    COMPROMISED = "compromised"


class DetectorProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    T_as: float = Field(..., description="Anomaly score threshold")
    mu_D: float = Field(..., description="Mean benign reconstruction error")
    sigma_D: float = Field(..., ge=0.0, description="Population std of benign errors")
    theta0: float = Field(..., gt=0.0, lt=1.0, description="Benign anomaly probability")
    theta0_raw: Optional[float] = Field(
        default=None, ge=0.0, le=1.0, description="Flagged proportion before clamping"
    )
    device_id: str = Field(default="", description="Device identifier")

    @model_validator(mode="after")
    def _threshold_rule(self):
        if self.T_as != self.mu_D + self.sigma_D:
            raise ValueError("T_as must equal mu_D + sigma_D")
        return self


class Decision(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: DecisionKind
    lambda_at_decision: float
    n_used: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _accept_uses_observations(self):
        if self.kind != DecisionKind.CONTINUE and self.n_used < 1:
            raise ValueError("accept decisions need at least one observation")
        return self

    @property
    def is_accept(self) -> bool:
        return self.kind != DecisionKind.CONTINUE


class Alert(BaseModel):
    device_id: str = Field(..., description="Device identifier")
    index: int = Field(..., description="Input index of the deciding record")
    lambda_at_decision: float = Field(..., serialization_alias="lambda")
    n_observations: int = Field(..., ge=1)
    verdict: Verdict = Field(default=Verdict.COMPROMISED)

    def to_log_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "index": self.index,
            "lambda": self.lambda_at_decision,
            "n_observations": self.n_observations,
            "verdict": self.verdict.value,
        }
