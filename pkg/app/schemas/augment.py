# app/schemas/augment.py
from typing import Literal

from pydantic import BaseModel, ConfigDict


class TransformSpec(BaseModel):
    """Horizontal flip (applied first) followed by a counter-clockwise right-angle rotation."""

    model_config = ConfigDict(frozen=True)

    horizontal_flip: bool = False
    rotation: Literal[0, 90, 180, 270] = 0

    @property
    def is_identity(self) -> bool:
        return not self.horizontal_flip and self.rotation == 0
