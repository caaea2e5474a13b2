from typing import List, Optional, Tuple
from pydantic import BaseModel, Field, field_validator


class MetricsReport(BaseModel):
    accuracy: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    precision: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)
    fpr: float = Field(..., ge=0.0, le=1.0)
    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    mean_observations: Optional[float] = Field(
        default=None, description="Mean observations per H1 detection (sequential only)"
    )
    observation_cdf: List[Tuple[int, float]] = Field(default_factory=list)
    trials_h1: int = Field(default=0, ge=0)
    trials_h0: int = Field(default=0, ge=0)

    @field_validator("observation_cdf")
    @classmethod
    def _cdf_shape(cls, value):
        previous = 0.0
        for _, fraction in value:
            if fraction < previous:
                raise ValueError("cdf must be nondecreasing")
            previous = fraction
        if value and abs(value[-1][1] - 1.0) > 1e-12:
            raise ValueError("cdf must end at 1")
        return value

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    def confusion(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}
