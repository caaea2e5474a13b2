from enum import Enum
from pydantic import BaseModel, ConfigDict, Field, field_validator
import math


class Protocol(str, Enum):
    TCP = "tcp"
    UDP = "udp"
    OTHER = "other"


class Direction(str, Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"


class PacketRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    timestamp: float = Field(..., description="Arrival time in seconds since epoch")
    src_mac: str = Field(default="", description="Source MAC address")
    src_ip: str = Field(..., description="Source IP address")
    dst_ip: str = Field(..., description="Destination IP address")
    src_port: int = Field(default=0, ge=0, le=65535, description="Source port")
    dst_port: int = Field(default=0, ge=0, le=65535, description="Destination port")
    protocol: Protocol = Field(default=Protocol.OTHER)
    size: int = Field(..., ge=1, description="Packet size in bytes")
    direction: Direction = Field(
        ..., description="Direction relative to the monitored device"
    )

    @field_validator("timestamp")
    @classmethod
    def _finite_timestamp(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("timestamp must be finite")
        return value

    @field_validator("protocol", mode="before")
    @classmethod
    def _normalize_protocol(cls, value):
        if isinstance(value, str):
            value = value.strip().lower()
            if value not in {p.value for p in Protocol}:
                return Protocol.OTHER
        return value

    @property
    def is_outgoing(self) -> bool:
        return self.direction == Direction.OUTGOING
