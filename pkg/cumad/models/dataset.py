from enum import Enum
from pydantic import BaseModel, Field


class Label(str, Enum):
    BENIGN = "benign"
    ATTACK = "attack"

    @property
    def code(self) -> int:
        return 0 if self is Label.BENIGN else 1


class SyntheticSpec(BaseModel):
    n_benign: int = Field(..., gt=0, description="Number of benign rows")
    n_attack: int = Field(..., gt=0, description="Number of attack rows")
    dim: int = Field(default=115, gt=0, description="Feature dimension")
    benign_correlation: float = Field(
        default=0.5, ge=0.0, lt=1.0, description="Pairwise correlation of benign features"
    )
    attack_shift: float = Field(
        default=4.0, ge=0.0, description="Per-feature mean offset in benign-std units"
    )
    seed: int = Field(default=1, description="Generator seed")
    device_id: str = Field(default="synthetic", description="Device identifier")
