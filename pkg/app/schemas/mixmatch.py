# app/schemas/mixmatch.py
from pydantic import BaseModel, Field


class MixMatchConfig(BaseModel):
    k: int = Field(2, ge=1)                        # augmentations per unlabelled image
    temperature: float = Field(0.5, gt=0)          # sharpening temperature
    alpha: float = Field(0.75, gt=0)               # Beta(alpha, alpha) for MixUp
    gamma: float = Field(100.0, ge=0)              # unlabelled term weight
    rampup_horizon: int = Field(3000, gt=0)        # r(t) = min(t / horizon, 1), t in optimizer steps
