# app/schemas/model.py
from typing import List, Literal, Tuple

from pydantic import BaseModel, Field, field_validator

# (out_channels, kernel, stride); padding is kernel // 2
ConvStage = Tuple[int, int, int]


class ModelConfig(BaseModel):
    input_size: int = Field(32, ge=1)
    channels: Literal[3] = 3
    conv_stages: List[ConvStage] = [(8, 3, 2), (16, 3, 2), (32, 3, 2)]
    hidden_units: int = Field(384, ge=0)  # 0 -> pooled features feed the output layer directly
    num_classes: int = Field(2, ge=2)
    running_stats: bool = True

    @field_validator("conv_stages")
    @classmethod
    def _stages_positive(cls, stages: List[ConvStage]) -> List[ConvStage]:
        if not stages:
            raise ValueError("at least one conv stage is required")
        for out_channels, kernel, stride in stages:
            if out_channels < 1 or kernel < 1 or stride < 1:
                raise ValueError(f"invalid conv stage {(out_channels, kernel, stride)}")
        return stages

    def spatial_sizes(self) -> List[int]:
        """Spatial extent after each conv stage (may be <= 0 for unusable configs)."""
        sizes = []
        size = self.input_size
        for _, kernel, stride in self.conv_stages:
            size = (size + 2 * (kernel // 2) - kernel) // stride + 1
            sizes.append(size)
        return sizes
