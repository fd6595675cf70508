# app/services/mixmatch.py
# MixMatch batch construction and the unweighted objective.
#
# Pipeline per optimizer step:
#   1. K augmented views of each unlabelled image; pseudo-label = mean model output over the views
#   2. sharpen pseudo-labels with the temperature
#   3. one augmentation per labelled image
#   4. pool = shuffle(labelled + K-expanded unlabelled); entry i is mixed with pool[i], lambda' >= 0.5
#   5. loss = CE(labelled part) + gamma * r(t) * MSE(unlabelled part)

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.exceptions import ContractViolation, DimensionError
from app.schemas.mixmatch import MixMatchConfig
from app.services import model as model_service
from app.services.augment import augment_batch, k_augmentations
from app.services.autodiff import Tensor, add, cross_entropy, mse_distance, mul, no_grad, take_rows
from app.services.model import ModelParams

logger = logging.getLogger("sslb.mixmatch")

SIMPLEX_TOL = 1e-9


@dataclass
class MixedBatch:
    labelled_images: np.ndarray
    labelled_targets: np.ndarray
    unlabelled_images: np.ndarray
    unlabelled_targets: np.ndarray

    @property
    def sizes(self) -> Tuple[int, int]:
        return len(self.labelled_images), len(self.unlabelled_images)

    def check_simplex(self) -> None:
        for name, rows in (("labelled", self.labelled_targets), ("unlabelled", self.unlabelled_targets)):
            if len(rows) and (np.any(rows < -SIMPLEX_TOL) or np.any(np.abs(rows.sum(axis=1) - 1.0) > SIMPLEX_TOL)):
                raise ContractViolation(f"{name} targets left the probability simplex")


def augment_views(x_u: np.ndarray, K: int, rng: np.random.Generator) -> List[np.ndarray]:
    """K views of a batch; view k holds an independently augmented copy of every image."""
    per_image = [k_augmentations(img, K, rng) for img in x_u]
    return [np.stack([views[k] for views in per_image]) for k in range(K)]


def pseudo_label_from_views(params: ModelParams, views: List[np.ndarray]) -> np.ndarray:
    with no_grad():
        outputs = [model_service.model_forward(params, view, training=False).data for view in views]
    return np.mean(outputs, axis=0)


def pseudo_label(params: ModelParams, x_u: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Average prediction over K sampled transforms; one probability row per image.

    A single image [3, s, s] gives a single row.
    """
    single = np.asarray(x_u).ndim == 3
    batch = np.asarray(x_u)[None] if single else np.asarray(x_u)
    rows = pseudo_label_from_views(params, augment_views(batch, K, rng))
    return rows[0] if single else rows


def sharpen(y: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ContractViolation(f"temperature must be > 0, got {temperature}")
    y = np.asarray(y, dtype=np.float64)
    rows = np.atleast_2d(y)
    if np.any(rows.sum(axis=1) <= 0):
        raise ContractViolation("cannot sharpen an all-zero label row")
    # scale by the row max first so y ** (1 / T) cannot underflow for small T
    powered = (rows / rows.max(axis=1, keepdims=True)) ** (1.0 / temperature)
    out = powered / powered.sum(axis=1, keepdims=True)
    return out.reshape(y.shape)


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    return float(rng.beta(alpha, alpha))


def sample_mixup_lambda(alpha: float, rng: np.random.Generator) -> float:
    if alpha <= 0:
        raise ContractViolation(f"alpha must be > 0, got {alpha}")
    lam = sample_beta(alpha, rng)
    return max(lam, 1.0 - lam)


def mixup_pair(
    a: Tuple[np.ndarray, np.ndarray],
    b: Tuple[np.ndarray, np.ndarray],
    lam: float,
) -> Tuple[np.ndarray, np.ndarray]:
    x_a, y_a = (np.asarray(v, dtype=np.float64) for v in a)
    x_b, y_b = (np.asarray(v, dtype=np.float64) for v in b)
    if x_a.shape != x_b.shape or y_a.shape != y_b.shape:
        raise DimensionError(
            f"mixup_pair: ({x_a.shape}, {y_a.shape}) vs ({x_b.shape}, {y_b.shape})"
        )
    return lam * x_a + (1.0 - lam) * x_b, lam * y_a + (1.0 - lam) * y_b


def build_mixed_batch(
    params: ModelParams,
    labelled_batch: Tuple[np.ndarray, np.ndarray],
    unlabelled_batch: np.ndarray,
    config: MixMatchConfig,
    rng: np.random.Generator,
) -> MixedBatch:
    x_l, y_l = labelled_batch
    if len(x_l) == 0 or len(unlabelled_batch) == 0:
        raise ContractViolation("build_mixed_batch needs non-empty labelled and unlabelled batches")

    views = augment_views(unlabelled_batch, config.k, rng)
    guessed = sharpen(pseudo_label_from_views(params, views), config.temperature)

    x_l_aug = augment_batch(x_l, rng)
    x_u_all = np.concatenate(views, axis=0)
    y_u_all = np.concatenate([guessed] * config.k, axis=0)

    originals_x = np.concatenate([x_l_aug, x_u_all], axis=0)
    originals_y = np.concatenate([np.asarray(y_l, dtype=np.float64), y_u_all], axis=0)
    order = rng.permutation(len(originals_x))
    pool_x, pool_y = originals_x[order], originals_y[order]

    mixed_x = np.empty_like(originals_x)
    mixed_y = np.empty_like(originals_y)
    for i in range(len(originals_x)):
        lam = sample_mixup_lambda(config.alpha, rng)
        mixed_x[i], mixed_y[i] = mixup_pair((originals_x[i], originals_y[i]), (pool_x[i], pool_y[i]), lam)

    n_l = len(x_l)
    mixed = MixedBatch(
        labelled_images=mixed_x[:n_l],
        labelled_targets=mixed_y[:n_l],
        unlabelled_images=mixed_x[n_l:],
        unlabelled_targets=mixed_y[n_l:],
    )
    mixed.check_simplex()
    return mixed


def ramp_up(step: int, horizon: int) -> float:
    if step < 0:
        raise ContractViolation(f"ramp-up step must be >= 0, got {step}")
    return min(step / horizon, 1.0)


def mixed_predictions(params: ModelParams, mixed: MixedBatch, training: bool = False) -> Tuple[Tensor, Tensor]:
    """One forward pass over both parts, split back into (labelled, unlabelled) predictions."""
    n_l, n_u = mixed.sizes
    images = np.concatenate([mixed.labelled_images, mixed.unlabelled_images], axis=0)
    probs = model_service.model_forward(params, images, training=training)
    return take_rows(probs, 0, n_l), take_rows(probs, n_l, n_l + n_u)


def combine_terms(labelled_term: Tensor, unlabelled_term: Tensor, gamma: float, r: float) -> Tensor:
    if not 0.0 <= r <= 1.0:
        raise ContractViolation(f"ramp-up value must lie in [0, 1], got {r}")
    return add(labelled_term, mul(unlabelled_term, gamma * r))


def mixmatch_loss_from_predictions(
    pred_l: Tensor,
    targets_l: np.ndarray,
    pred_u: Tensor,
    targets_u: np.ndarray,
    gamma: float,
    r: float,
) -> Tensor:
    return combine_terms(cross_entropy(targets_l, pred_l), mse_distance(targets_u, pred_u), gamma, r)


def mixmatch_loss_unweighted(
    params: ModelParams,
    mixed: MixedBatch,
    gamma: float,
    r: float,
    training: bool = False,
) -> Tensor:
    pred_l, pred_u = mixed_predictions(params, mixed, training=training)
    return mixmatch_loss_from_predictions(
        pred_l, mixed.labelled_targets, pred_u, mixed.unlabelled_targets, gamma, r
    )
