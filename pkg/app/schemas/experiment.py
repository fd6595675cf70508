# app/schemas/experiment.py
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.mixmatch import MixMatchConfig
from app.schemas.model import ModelConfig


class MethodId(str, Enum):
    SUPERVISED = "supervised"
    SUPERVISED_BALANCED = "supervised_balanced"   # class weights on the supervised cross-entropy only
    MIXMATCH = "mixmatch"
    MIXMATCH_PBC = "mixmatch_pbc"

    @property
    def semi_supervised(self) -> bool:
        return self in (MethodId.MIXMATCH, MethodId.MIXMATCH_PBC)

    @property
    def balanced(self) -> bool:
        return self in (MethodId.SUPERVISED_BALANCED, MethodId.MIXMATCH_PBC)


class TrainingConfig(BaseModel):
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(12, ge=1)
    max_lr: float = Field(1e-5, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    model: ModelConfig = ModelConfig()
    mixmatch: MixMatchConfig = MixMatchConfig()


class RunResult(BaseModel):
    method: MethodId
    neg_fraction: float
    n_l: int
    seed: int
    val_curve: List[float] = Field(default_factory=list)
    best_val_acc: float = Field(0.0, ge=0, le=1)
    failed: bool = False
    failed_epoch: Optional[int] = None
    error: Optional[str] = None

    @model_validator(mode="after")
    def _best_is_curve_max(self):
        if self.val_curve and self.best_val_acc != max(self.val_curve):
            raise ValueError("best_val_acc must equal the maximum of val_curve")
        return self

    @property
    def key(self) -> tuple:
        return (self.neg_fraction, self.n_l, self.seed, self.method.value)


class GridConfig(BaseModel):
    seeds: List[int]
    methods: List[MethodId] = list(MethodId)
    neg_fractions: List[float] = [0.5, 0.7, 0.8]
    n_ls: List[int] = [10, 15, 20]
    total_sample: int = 204
    val_fraction: float = 0.30
    training: TrainingConfig = TrainingConfig()
    data_source: str = "synthetic"
    jobs: int = Field(1, ge=1)

    @field_validator("seeds", "methods", "neg_fractions", "n_ls")
    @classmethod
    def _non_empty(cls, v: list) -> list:
        if not v:
            raise ValueError("grid axes must be non-empty")
        return v

    def compatibility_key(self) -> dict:
        """Everything that changes a run's outcome; jobs and the seed/method lists may differ on resume."""
        return self.model_dump(mode="json", exclude={"jobs", "seeds", "methods", "neg_fractions", "n_ls"})


class SummaryCell(BaseModel):
    method: MethodId
    neg_fraction: float
    n_l: int
    mean: float
    std: float
    n: int
    failed: int = 0


class GainRow(BaseModel):
    neg_fraction: float
    n_l: int
    comparison: str
    gain: float
    p_value: Optional[float] = None
    significant: bool = False


class SummaryTable(BaseModel):
    cells: List[SummaryCell]
    gains: List[GainRow]
    significance: float = 0.1
