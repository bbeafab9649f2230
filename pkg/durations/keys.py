from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator


class Transition(str, Enum):
    ACK_TO_START = "ack_to_start"
    START_TO_COMPLETE = "start_to_complete"


class TransitionKey(BaseModel):
    """Index of a learned distribution: one per (device, action, transition)."""

    model_config = ConfigDict(frozen=True)

    device_id: str = Field(description="Device identifier")
    action_kind: str = Field(description="Action identifier, e.g. 'close'")
    transition: Transition

    @field_validator("device_id", "action_kind")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value or not value.strip():
            raise ValueError("must be non-empty")
        return value.strip()

    def __str__(self) -> str:
        return f"{self.device_id}/{self.action_kind}/{self.transition.value}"

    @classmethod
    def parse(cls, text: str) -> "TransitionKey":
        parts = text.split("/")
        if len(parts) != 3:
            raise ValueError(f"Malformed transition key: {text!r}")
        return cls(device_id=parts[0], action_kind=parts[1], transition=Transition(parts[2]))
