# app/schemas/scenario.py
from decimal import ROUND_FLOOR, ROUND_HALF_UP, Decimal
from typing import Tuple

from pydantic import BaseModel, Field, model_validator


def _round_half_up(value: Decimal) -> int:
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


class ScenarioConfig(BaseModel):
    total_sample: int = Field(204, ge=4)
    val_fraction: float = Field(0.30, gt=0, lt=1)
    n_l: int = Field(20, ge=2)
    neg_fraction: float = Field(0.8, gt=0, lt=1)   # share of class 0 in the labelled split
    seed: int = 0

    @property
    def val_size(self) -> int:
        return int((Decimal(str(self.val_fraction)) * self.total_sample).to_integral_value(rounding=ROUND_FLOOR))

    @property
    def val_counts(self) -> Tuple[int, int]:
        """(class 0, class 1); class 0 takes the odd observation."""
        neg = (self.val_size + 1) // 2
        return neg, self.val_size - neg

    @property
    def labelled_counts(self) -> Tuple[int, int]:
        neg = _round_half_up(Decimal(str(self.neg_fraction)) * self.n_l)
        return neg, self.n_l - neg

    @property
    def unlabelled_size(self) -> int:
        return self.total_sample - self.val_size - self.n_l

    @model_validator(mode="after")
    def _check_counts(self):
        neg, pos = self.labelled_counts
        if neg < 1 or pos < 1:
            raise ValueError(
                f"n_l={self.n_l} at neg_fraction={self.neg_fraction} leaves a class without labelled observations"
            )
        if self.n_l + self.val_size > self.total_sample:
            raise ValueError(
                f"n_l={self.n_l} plus validation size {self.val_size} exceeds total_sample={self.total_sample}"
            )
        return self
