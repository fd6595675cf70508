# app/services/training.py
# One training run: a method on a scenario for a fixed number of epochs, validation
# accuracy after each epoch, best accuracy as the reported score.

import logging
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from app.core.exceptions import NumericError
from app.schemas.experiment import MethodId, RunResult, TrainingConfig
from app.schemas.optimizer import OptimizerConfig
from app.services import model as model_service
from app.services.augment import augment_batch
from app.services.autodiff import Tape, Tensor, backward, cross_entropy
from app.services.mixmatch import (
    build_mixed_batch,
    mixed_predictions,
    mixmatch_loss_from_predictions,
    ramp_up,
)
from app.services.optimizer import adam_step, init_state, one_cycle_lr
from app.services.pbc import ClassWeightVector, class_weights, pbc_loss_from_predictions, weighted_cross_entropy
from app.services.scenario import Scenario

logger = logging.getLogger("sslb.training")

EpochCallback = Callable[[int, float], None]


class BatchCycler:
    """Endless fixed-size index batches over reshuffled permutations of range(n)."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        out = []
        while len(out) < self.batch_size:
            if self._pos == self.n:
                self._order = self.rng.permutation(self.n)
                self._pos = 0
            take = min(self.batch_size - len(out), self.n - self._pos)
            out.extend(self._order[self._pos:self._pos + take])
            self._pos += take
        return np.asarray(out, dtype=int)


def steps_per_epoch(scenario: Scenario, batch_size: int) -> int:
    return max(1, math.ceil(len(scenario.unlabelled) / batch_size))


def _supervised_loss(
    params: model_service.ModelParams,
    x_l: np.ndarray,
    y_l: np.ndarray,
    c: Optional[ClassWeightVector],
    rng: np.random.Generator,
) -> Tensor:
    pred = model_service.model_forward(params, augment_batch(x_l, rng), training=True)
    return cross_entropy(y_l, pred) if c is None else weighted_cross_entropy(y_l, pred, c)


def run_training(
    scenario: Scenario,
    method: MethodId,
    epochs: int,
    seed: int,
    config: TrainingConfig,
    on_epoch: Optional[EpochCallback] = None,
    checkpoint_path: Optional[Path] = None,
) -> RunResult:
    """Train from scratch and return the validation curve.

    With checkpoint_path set, the parameters of the best epoch so far are saved there.

    Divergence (non-finite loss or gradient) ends the run early; the result is marked
    failed with the 1-based epoch it happened in, and keeps the curve up to that point.
    """
    method = MethodId(method)
    rng = np.random.default_rng(seed)
    params = model_service.model_init(config.model, seed)
    weights = class_weights(scenario.labelled.class_counts()) if method.balanced else None

    per_epoch = steps_per_epoch(scenario, config.batch_size)
    opt_config = OptimizerConfig(
        max_lr=config.max_lr, weight_decay=config.weight_decay, total_steps=epochs * per_epoch
    )
    state = init_state(params.parameters())
    labelled = BatchCycler(len(scenario.labelled), config.batch_size, rng)
    unlabelled = BatchCycler(len(scenario.unlabelled), config.batch_size, rng) if method.semi_supervised else None
    mm = config.mixmatch
    val_labels = scenario.validation.classes

    curve = []
    step = 0
    base = dict(method=method, neg_fraction=scenario.config.neg_fraction, n_l=scenario.config.n_l, seed=seed)
    for epoch in range(1, epochs + 1):
        try:
            for _ in range(per_epoch):
                idx = labelled.next()
                x_l, y_l = scenario.labelled.images[idx], scenario.labelled.targets[idx]
                with Tape() as tape:
                    if unlabelled is None:
                        loss = _supervised_loss(params, x_l, y_l, weights, rng)
                    else:
                        x_u = scenario.unlabelled.images[unlabelled.next()]
                        mixed = build_mixed_batch(params, (x_l, y_l), x_u, mm, rng)
                        r = ramp_up(step, mm.rampup_horizon)
                        pred_l, pred_u = mixed_predictions(params, mixed, training=True)
                        if weights is None:
                            loss = mixmatch_loss_from_predictions(
                                pred_l, mixed.labelled_targets, pred_u, mixed.unlabelled_targets, mm.gamma, r
                            )
                        else:
                            loss = pbc_loss_from_predictions(
                                pred_l, mixed.labelled_targets, pred_u, mixed.unlabelled_targets,
                                weights, mm.gamma, r,
                            )
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at step {step + 1}", step=step + 1)
                backward(loss, tape)
                params_list = params.parameters()
                adam_step(params_list, [p.grad for p in params_list], state, one_cycle_lr(step, opt_config), opt_config)
                params.zero_grad()
                step += 1
        except NumericError as exc:
            logger.error("%s seed=%s diverged in epoch %s: %s", method.value, seed, epoch, exc)
            return RunResult(
                **base,
                val_curve=curve,
                best_val_acc=max(curve) if curve else 0.0,
                failed=True,
                failed_epoch=epoch,
                error=str(exc),
            )

        acc = model_service.accuracy(params, scenario.validation.images, val_labels)
        if checkpoint_path is not None and (not curve or acc > max(curve)):
            model_service.save_checkpoint(params, checkpoint_path)
        curve.append(acc)
        logger.debug("%s seed=%s epoch %s/%s val_acc=%.4f", method.value, seed, epoch, epochs, acc)
        if on_epoch is not None:
            on_epoch(epoch, acc)

    result = RunResult(**base, val_curve=curve, best_val_acc=max(curve))
    logger.info(
        "%s neg_fraction=%s n_l=%s seed=%s best_val_acc=%.4f",
        method.value, base["neg_fraction"], base["n_l"], seed, result.best_val_acc,
    )
    return result
