# app/schemas/optimizer.py
from typing import Tuple

from pydantic import BaseModel, Field, field_validator


class OptimizerConfig(BaseModel):
    max_lr: float = Field(1e-5, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    total_steps: int = Field(1, ge=1)
    # (warmup, anneal) shares of total_steps
    cycle_fractions: Tuple[float, float] = (0.3, 0.7)
    div_factor: float = Field(25.0, gt=0)          # start lr = max_lr / div_factor
    final_div_factor: float = Field(1e4, gt=0)     # end lr = max_lr / final_div_factor

    @field_validator("cycle_fractions")
    @classmethod
    def _fractions_sum_to_one(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        warmup, anneal = v
        if warmup < 0 or anneal < 0 or abs(warmup + anneal - 1.0) > 1e-9:
            raise ValueError("cycle_fractions must be non-negative and sum to 1")
        return v

    @property
    def warmup_steps(self) -> int:
        """Integer step at which the schedule peaks; at least 1 so step 0 starts at max_lr / div_factor."""
        return min(max(1, round(self.cycle_fractions[0] * self.total_steps)), self.total_steps)
