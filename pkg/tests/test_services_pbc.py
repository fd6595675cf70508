import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.schemas.mixmatch import MixMatchConfig
from app.schemas.model import ModelConfig
from app.services import model as model_service
from app.services.autodiff import (
    Tape,
    Tensor,
    backward,
    cross_entropy,
    dense_forward,
    finite_difference_check,
    mse_distance,
    softmax,
)
from app.services.mixmatch import MixedBatch, build_mixed_batch, mixmatch_loss_unweighted
from app.services.model import model_init
from app.services.pbc import (
    ClassWeightVector,
    class_weights,
    label_to_index,
    literal_weighted_cross_entropy,
    pbc_mixmatch_loss,
    weighted_cross_entropy,
    weighted_distance,
    weighted_labeled_loss,
    weighted_unlabeled_loss,
)


def test_class_weight_examples():
    assert class_weights([50, 50]).values == (0.5, 0.5)
    assert np.allclose(class_weights([80, 20]).as_array(), [0.2, 0.8], atol=1e-12)
    assert np.allclose(class_weights([16, 4]).as_array(), [0.2, 0.8], atol=1e-12)


def test_class_weights_are_scale_invariant_and_normalised():
    rng = np.random.default_rng(0)
    for _ in range(50):
        counts = rng.integers(1, 200, size=int(rng.integers(2, 5)))
        base = class_weights(counts)
        assert abs(sum(base.values) - 1.0) <= 1e-12
        for k in range(1, 11):
            assert class_weights(counts * k).values == base.values


def test_class_weights_are_monotone():
    c = class_weights([10, 3, 7])
    assert c[1] > c[2] > c[0]


def test_class_weights_reject_empty_class():
    with pytest.raises(ConfigError):
        class_weights([5, 0])
    with pytest.raises(ConfigError):
        class_weights([5])


def test_class_weight_vector_validates():
    with pytest.raises(ConfigError):
        ClassWeightVector((0.7, 0.7))
    with pytest.raises(ConfigError):
        ClassWeightVector((1.2, -0.2))


def test_label_to_index():
    assert label_to_index([1.0, 0.0]) == 0
    assert label_to_index([0.3, 0.7]) == 1
    assert label_to_index([0.5, 0.5]) == 0


def test_weighted_labelled_examples():
    c = class_weights([80, 20])
    half = Tensor([[0.5, 0.5]])
    assert weighted_cross_entropy(np.array([[1.0, 0.0]]), half, c).item() == pytest.approx(0.2 * np.log(2), abs=1e-4)
    assert weighted_cross_entropy(np.array([[0.0, 1.0]]), half, c).item() == pytest.approx(0.8 * np.log(2), abs=1e-4)


def test_uniform_weights_factor_out(rng):
    c = class_weights([5, 5])
    targets = rng.dirichlet([1, 1], size=6)
    pred = Tensor(rng.dirichlet([1, 1], size=6))
    assert weighted_cross_entropy(targets, pred, c).item() == pytest.approx(0.5 * cross_entropy(targets, pred).item())
    assert weighted_distance(targets, pred, c).item() == pytest.approx(0.25 * mse_distance(targets, pred).item())


def test_weighted_unlabelled_examples():
    c = class_weights([80, 20])
    assert weighted_distance(np.array([[1.0, 0.0]]), Tensor([[0.0, 1.0]]), c).item() == pytest.approx(0.08)
    assert weighted_distance(np.array([[0.3, 0.7]]), Tensor([[0.3, 0.7]]), c).item() == 0.0


def test_weighting_never_changes_selected_class(rng):
    c = class_weights([16, 4])
    rows = rng.dirichlet([1, 1], size=200)
    picked = rows.argmax(axis=1)
    weights = c.as_array()[picked]
    assert np.array_equal((rows * weights[:, None]).argmax(axis=1), picked)


def test_literal_and_implemented_labelled_loss_have_identical_gradients():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = Tensor(rng.normal(size=(1, 4)))
        y = rng.dirichlet([1, 1], size=1)
        c = class_weights(rng.integers(1, 50, size=2))
        W_init = rng.normal(size=(4, 2))
        grads = []
        for loss_fn in (weighted_cross_entropy, literal_weighted_cross_entropy):
            W = Tensor(W_init, requires_grad=True)
            with Tape() as tape:
                loss = loss_fn(y, softmax(dense_forward(x, W, Tensor(np.zeros(2)))), c)
            backward(loss, tape)
            grads.append(W.grad.copy())
        assert np.allclose(grads[0], grads[1], rtol=0, atol=1e-10)


def _batch(rng, n_l=3, n_u=4):
    return MixedBatch(
        labelled_images=rng.random((n_l, 3, 8, 8)),
        labelled_targets=rng.dirichlet([1, 1], size=n_l),
        unlabelled_images=rng.random((n_u, 3, 8, 8)),
        unlabelled_targets=rng.dirichlet([1, 1], size=n_u),
    )


def test_pbc_loss_with_uniform_weights_rescales_each_term(tiny_params, rng):
    mixed = _batch(rng)
    c = class_weights([7, 7])
    plain_l = mixmatch_loss_unweighted(tiny_params, mixed, 0.0, 1.0).item()
    plain_u = (mixmatch_loss_unweighted(tiny_params, mixed, 1.0, 1.0).item() - plain_l)
    assert weighted_labeled_loss(tiny_params, mixed, c).item() == pytest.approx(0.5 * plain_l)
    assert weighted_unlabeled_loss(tiny_params, mixed, c).item() == pytest.approx(0.25 * plain_u)
    combined = pbc_mixmatch_loss(tiny_params, mixed, c, 10.0, 0.3).item()
    assert combined == pytest.approx(0.5 * plain_l + 3.0 * 0.25 * plain_u)


def test_pbc_loss_with_zero_gamma_is_labelled_term(tiny_params, rng):
    mixed = _batch(rng)
    c = class_weights([16, 4])
    assert pbc_mixmatch_loss(tiny_params, mixed, c, 0.0, 0.8).item() == pytest.approx(
        weighted_labeled_loss(tiny_params, mixed, c).item()
    )


def test_pbc_loss_gradients_on_random_tiny_networks():
    config = ModelConfig(input_size=4, conv_stages=[(2, 3, 2)], hidden_units=0)
    mm = MixMatchConfig(k=1, gamma=2.0)
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        params = model_init(config, seed)
        c = class_weights(rng.integers(1, 20, size=2))
        x_l = rng.random((2, 3, 4, 4))
        y_l = np.eye(2)[[0, 1]]
        mixed = build_mixed_batch(params, (x_l, y_l), rng.random((2, 3, 4, 4)), mm, rng)
        for name in params.tensors:
            err = finite_difference_check(
                lambda _: pbc_mixmatch_loss(params, mixed, c, mm.gamma, 0.5),
                params.tensors[name],
                h=1e-6,
            )
            assert err <= 1e-4, (seed, name, err)


def test_pbc_loss_uses_mixed_predictions(monkeypatch):
    mixed = MixedBatch(
        labelled_images=np.zeros((1, 3, 4, 4)),
        labelled_targets=np.array([[1.0, 0.0]]),
        unlabelled_images=np.zeros((1, 3, 4, 4)),
        unlabelled_targets=np.array([[1.0, 0.0]]),
    )
    preds = np.array([[0.5, 0.5], [0.0, 1.0]])
    monkeypatch.setattr(model_service, "model_forward", lambda params, x, training=False: Tensor(preds))
    c = class_weights([80, 20])
    loss = pbc_mixmatch_loss(None, mixed, c, gamma=1.0, r=1.0).item()
    assert loss == pytest.approx(0.2 * np.log(2) + 0.08)
