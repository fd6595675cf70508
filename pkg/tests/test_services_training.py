import numpy as np
import pytest

from app.schemas.experiment import MethodId, TrainingConfig
from app.schemas.mixmatch import MixMatchConfig
from app.schemas.scenario import ScenarioConfig
from app.services import training
from app.services.autodiff import Tensor
from app.services.datasets import generate_synthetic
from app.services.scenario import sample_scenario
from app.services.statistics import wilcoxon_signed_rank
from app.services.training import BatchCycler, run_training, steps_per_epoch


@pytest.fixture
def fast_config(tiny_config):
    return TrainingConfig(
        epochs=2, batch_size=8, max_lr=1e-3, model=tiny_config,
        mixmatch=MixMatchConfig(k=1, gamma=10.0, rampup_horizon=10),
    )


def test_batch_cycler_covers_every_index_per_pass():
    cycler = BatchCycler(10, 4, np.random.default_rng(0))
    seen = np.concatenate([cycler.next() for _ in range(5)])
    assert len(seen) == 20
    assert sorted(seen[:10]) == list(range(10))
    assert sorted(seen[10:]) == list(range(10))


def test_batch_cycler_caps_batch_at_set_size():
    assert len(BatchCycler(3, 12, np.random.default_rng(0)).next()) == 3


def test_steps_per_epoch(small_scenario):
    assert len(small_scenario.unlabelled) == 50
    assert steps_per_epoch(small_scenario, 8) == 7
    assert steps_per_epoch(small_scenario, 100) == 1


@pytest.mark.parametrize("method", list(MethodId))
def test_run_training_curve(small_scenario, fast_config, method):
    epochs = []
    result = run_training(small_scenario, method, 2, seed=1, config=fast_config,
                          on_epoch=lambda e, acc: epochs.append((e, acc)))
    assert not result.failed
    assert len(result.val_curve) == 2
    assert result.best_val_acc == max(result.val_curve)
    assert all(0.0 <= acc <= 1.0 for acc in result.val_curve)
    assert [e for e, _ in epochs] == [1, 2]
    assert result.method == method
    assert (result.neg_fraction, result.n_l, result.seed) == (0.8, 10, 1)


def test_run_training_is_deterministic(small_scenario, fast_config):
    a = run_training(small_scenario, MethodId.MIXMATCH_PBC, 2, seed=3, config=fast_config)
    b = run_training(small_scenario, MethodId.MIXMATCH_PBC, 2, seed=3, config=fast_config)
    assert a.val_curve == b.val_curve


def test_divergence_marks_run_failed(small_scenario, fast_config, monkeypatch):
    real = training.cross_entropy
    calls = {"n": 0}

    def exploding(y, pred):
        calls["n"] += 1
        if calls["n"] > steps_per_epoch(small_scenario, fast_config.batch_size):
            return Tensor(np.nan)
        return real(y, pred)

    monkeypatch.setattr(training, "cross_entropy", exploding)
    result = run_training(small_scenario, MethodId.SUPERVISED, 3, seed=0, config=fast_config)
    assert result.failed
    assert result.failed_epoch == 2
    assert len(result.val_curve) == 1
    assert "non-finite" in result.error


# peak learning rate for from-scratch runs at 32x32
DESK_LR = 1e-2


def _scenario(difficulty, n_l, neg_fraction, seed):
    pool = generate_synthetic(seed=0, n_per_class=150, size=32, difficulty=difficulty)
    return sample_scenario(pool.of_class(1), pool.of_class(0),
                           ScenarioConfig(n_l=n_l, neg_fraction=neg_fraction, seed=seed))


@pytest.mark.slow
def test_supervised_reaches_plausible_accuracy():
    scenario = _scenario(0.3, n_l=20, neg_fraction=0.5, seed=0)
    config = TrainingConfig(epochs=50, max_lr=DESK_LR)
    result = run_training(scenario, MethodId.SUPERVISED, config.epochs, seed=0, config=config)
    assert result.best_val_acc >= 0.75


@pytest.mark.slow
def test_mixmatch_without_unlabelled_term_tracks_supervised():
    config = TrainingConfig(epochs=30, max_lr=DESK_LR, mixmatch=MixMatchConfig(gamma=0.0))
    gaps = []
    for seed in range(3):
        scenario = _scenario(0.1, n_l=20, neg_fraction=0.5, seed=seed)
        supervised = run_training(scenario, MethodId.SUPERVISED, config.epochs, seed, config)
        mixmatch = run_training(scenario, MethodId.MIXMATCH, config.epochs, seed, config)
        gaps.append(mixmatch.best_val_acc - supervised.best_val_acc)
    assert abs(np.mean(gaps)) <= 0.05


@pytest.mark.slow
def test_balance_correction_beats_plain_mixmatch_on_imbalanced_labels():
    config = TrainingConfig(epochs=50, max_lr=DESK_LR)
    scores = {MethodId.MIXMATCH: [], MethodId.MIXMATCH_PBC: []}
    for seed in range(20):
        scenario = _scenario(0.5, n_l=20, neg_fraction=0.8, seed=seed)
        for method, accs in scores.items():
            accs.append(run_training(scenario, method, config.epochs, seed, config).best_val_acc)

    pbc, mm = scores[MethodId.MIXMATCH_PBC], scores[MethodId.MIXMATCH]
    assert np.mean(pbc) - np.mean(mm) > 0
    assert wilcoxon_signed_rank(pbc, mm).p_value < 0.1
