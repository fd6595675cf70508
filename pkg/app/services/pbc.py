# app/services/pbc.py
# Pseudo-label based balance correction: inverse-frequency class weights from the labelled
# split, selected per observation by the argmax of its (mixed / pseudo) label and applied to
# both MixMatch loss terms.

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from app.core.exceptions import ConfigError, DimensionError
from app.services.autodiff import Tensor, cross_entropy, mse_distance, scale_rows
from app.services.mixmatch import MixedBatch, combine_terms, mixed_predictions
from app.services.model import ModelParams


@dataclass(frozen=True)
class ClassWeightVector:
    values: tuple[float, ...]

    def __post_init__(self):
        if any(v < 0 for v in self.values):
            raise ConfigError(f"class weights must be non-negative, got {self.values}")
        if abs(sum(self.values) - 1.0) > 1e-12:
            raise ConfigError(f"class weights must sum to 1, got {self.values}")

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, idx: int) -> float:
        return self.values[idx]


def class_weights(counts: Sequence[int]) -> ClassWeightVector:
    """c_i = (1 / n_i) / sum_j (1 / n_j), evaluated in exact rational arithmetic."""
    counts = [int(n) for n in counts]
    if len(counts) < 2:
        raise ConfigError(f"need counts for at least 2 classes, got {counts}")
    missing = [idx for idx, n in enumerate(counts) if n < 1]
    if missing:
        raise ConfigError(f"classes {missing} have no labelled observations; weight is undefined")
    inverse = [Fraction(1, n) for n in counts]
    total = sum(inverse)
    return ClassWeightVector(tuple(float(v / total) for v in inverse))


def label_to_index(y: np.ndarray) -> int:
    """argmax of a label row; ties go to the lowest class index."""
    return int(np.argmax(np.asarray(y)))


def labels_to_indices(rows: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(rows), axis=1)


def observation_weights(rows: np.ndarray, c: ClassWeightVector) -> np.ndarray:
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != len(c):
        raise DimensionError(f"label rows {rows.shape} do not match {len(c)} class weights")
    return c.as_array()[labels_to_indices(rows)]


def weighted_cross_entropy(targets: np.ndarray, pred: Tensor, c: ClassWeightVector) -> Tensor:
    return cross_entropy(targets, pred, weights=observation_weights(targets, c))


def weighted_distance(targets: np.ndarray, pred: Tensor, c: ClassWeightVector) -> Tensor:
    # ||c_b (y - f)||^2 = c_b^2 ||y - f||^2
    return mse_distance(targets, pred, weights=observation_weights(targets, c) ** 2)


def literal_weighted_cross_entropy(targets: np.ndarray, pred: Tensor, c: ClassWeightVector) -> Tensor:
    """CE(c_b * y, c_b * f) exactly as written; differs from c_b * CE(y, f) by a parameter-free offset."""
    w = observation_weights(targets, c)
    return cross_entropy(np.asarray(targets) * w[:, None], scale_rows(pred, w))


def weighted_labeled_loss(
    params: ModelParams, mixed: MixedBatch, c: ClassWeightVector, training: bool = False
) -> Tensor:
    pred_l, _ = mixed_predictions(params, mixed, training=training)
    return weighted_cross_entropy(mixed.labelled_targets, pred_l, c)


def weighted_unlabeled_loss(
    params: ModelParams, mixed: MixedBatch, c: ClassWeightVector, training: bool = False
) -> Tensor:
    _, pred_u = mixed_predictions(params, mixed, training=training)
    return weighted_distance(mixed.unlabelled_targets, pred_u, c)


def pbc_loss_from_predictions(
    pred_l: Tensor,
    targets_l: np.ndarray,
    pred_u: Tensor,
    targets_u: np.ndarray,
    c: ClassWeightVector,
    gamma: float,
    r: float,
) -> Tensor:
    return combine_terms(
        weighted_cross_entropy(targets_l, pred_l, c),
        weighted_distance(targets_u, pred_u, c),
        gamma,
        r,
    )


def pbc_mixmatch_loss(
    params: ModelParams,
    mixed: MixedBatch,
    c: ClassWeightVector,
    gamma: float,
    r: float,
    training: bool = False,
) -> Tensor:
    pred_l, pred_u = mixed_predictions(params, mixed, training=training)
    return pbc_loss_from_predictions(
        pred_l, mixed.labelled_targets, pred_u, mixed.unlabelled_targets, c, gamma, r
    )
