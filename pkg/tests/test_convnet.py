import numpy as np
import pytest

from utils import TagNoiseError, ShapeError
from network.convnet import (
    ArchSpec,
    arch_preset,
    init_params,
    tensor_names,
    forward,
    backward,
    loss,
    loss_and_gradients,
    batchnorm_forward,
    bce_with_logits,
    maxpool_forward,
    gradient_check
)


@pytest.fixture
def tiny():
    return arch_preset("tiny", nOutputs=3)


def batch_of(arch, n, seed=0):
    return np.random.default_rng(seed).normal(size=(n,) + arch.inputShape)


def test_block_shapes_use_ceil_pooling():
    arch = arch_preset("full", 50)
    assert [shape[1:] for shape in arch.block_shapes()] == [(48, 340), (12, 85), (3, 17), (2, 5), (1, 2)]
    assert arch.block_shapes()[-1][0] == 32
    assert arch.embeddingSize == 32


def test_arch_validation():
    with pytest.raises(TagNoiseError):
        ArchSpec(nBlocks=2, channels=(4,), pools=((2, 2), (2, 2)))
    with pytest.raises(TagNoiseError):
        ArchSpec(nBlocks=1, channels=4, kernel=(2, 3), pools=((2, 2),))
    with pytest.raises(TagNoiseError):
        arch_preset("huge")


def test_init_is_seeded(tiny):
    a = init_params(tiny, seed=3)
    b = init_params(tiny, seed=3)
    c = init_params(tiny, seed=4)
    assert list(a.tensors) == tensor_names(tiny)
    assert all(np.array_equal(a.tensors[name], b.tensors[name]) for name in a.tensors)
    assert not np.array_equal(a.tensors["dense.w"], c.tensors["dense.w"])
    assert np.all(a.tensors["block1.bn_gain"] == 1)
    assert a.tensors["dense.w"].shape == (4, 3)


def test_forward_outputs_probabilities(tiny):
    params = init_params(tiny, seed=0)
    probabilities = forward(params, batch_of(tiny, 5))
    assert probabilities.shape == (5, 3)
    assert np.all((probabilities > 0) & (probabilities < 1))
    # Eval mode treats rows independently
    single = forward(params, batch_of(tiny, 5)[2:3])
    assert np.allclose(single, probabilities[2:3], atol=1e-6)


def test_forward_does_not_mutate_params(tiny):
    params = init_params(tiny, seed=0)
    before = {name: value.copy() for name, value in params.tensors.items()}
    forward(params, batch_of(tiny, 4), mode="train")
    assert all(np.array_equal(before[name], params.tensors[name]) for name in before)


def test_forward_rejects_wrong_shape(tiny):
    params = init_params(tiny, seed=0)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 1, 8, 9)))
    with pytest.raises(ValueError):
        forward(params, batch_of(tiny, 2), mode="predict")


def test_maxpool_ceil_mode_handles_partial_windows():
    x = np.arange(15, dtype=np.float64).reshape(1, 1, 3, 5)
    out, _ = maxpool_forward(x, (2, 2))
    assert out.shape == (1, 1, 2, 3)
    assert out[0, 0].tolist() == [[6, 8, 9], [11, 13, 14]]


def test_loss_is_stable_and_matches_formula():
    targets = np.array([[1.0, 0.0]])
    probabilities = np.array([[0.8, 0.3]])
    expected = -(np.log(0.8) + np.log(0.7)) / 2
    assert loss(probabilities, targets) == pytest.approx(expected)
    value, grad = bce_with_logits(np.array([[800.0, -800.0]]), np.array([[1.0, 0.0]]))
    assert np.isfinite(value) and value == pytest.approx(0.0)
    assert np.all(np.isfinite(grad))
    with pytest.raises(ShapeError):
        loss(probabilities, np.zeros((1, 3)))


def test_analytic_gradients_match_finite_differences(tiny):
    params = init_params(tiny, seed=1, dtype=np.float64)
    batch = batch_of(tiny, 3, seed=2)
    targets = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=np.float64)
    errors = gradient_check(params, batch, targets)
    assert set(errors) == set(params.trainable())
    assert max(errors.values()) <= 1e-5


def test_single_block_forward_by_hand():
    arch = ArchSpec(nBlocks=1, channels=1, pools=((4, 4),), nOutputs=1, inputShape=(1, 4, 4))
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    params = init_params(arch, seed=0, dtype=np.float64).with_tensors({
        "block1.conv_w": kernel,
        "block1.conv_b": np.array([0.25]),
        "block1.bn_mean": np.array([0.5]),
        "block1.bn_var": np.array([4.0]),
        "dense.w": np.array([[2.0]]),
        "dense.b": np.array([-1.0]),
    })
    x = (np.arange(16, dtype=np.float64) / 8 - 1).reshape(1, 1, 4, 4)
    # identity conv, then the largest input 0.875 survives both max-pools
    peak = (0.875 + 0.25 - 0.5) / np.sqrt(4.0 + 1e-5)
    expected = 1.0 / (1.0 + np.exp(-(2.0 * peak - 1.0)))
    assert forward(params, x)[0, 0] == pytest.approx(expected, abs=1e-12)

    # all inputs negative: the ELU branch sets the maximum
    low = (-np.ones(16, dtype=np.float64) - 2.0).reshape(1, 1, 4, 4)
    trough = (-3.0 + 0.25 - 0.5) / np.sqrt(4.0 + 1e-5)
    expected = 1.0 / (1.0 + np.exp(-(2.0 * np.expm1(trough) - 1.0)))
    assert forward(params, low)[0, 0] == pytest.approx(expected, abs=1e-12)


def test_zero_input_gives_one_half(tiny):
    params = init_params(tiny, seed=5)
    zeros = np.zeros((3,) + tiny.inputShape)
    assert np.allclose(forward(params, zeros), 0.5)
    assert np.allclose(forward(params, zeros, mode="train"), 0.5)


def test_train_mode_batchnorm_standardizes_channels():
    x = np.random.default_rng(8).normal(loc=3.0, scale=2.5, size=(6, 4, 5, 7))
    out, _, update = batchnorm_forward(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), "train")
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)
    assert np.allclose(update[0], 0.1 * x.mean(axis=(0, 2, 3)))


def test_eval_forward_is_repeatable(tiny):
    params = init_params(tiny, seed=2)
    batch = batch_of(tiny, 4, seed=6)
    before = {name: value.copy() for name, value in params.tensors.items()}
    first = forward(params, batch)
    for _ in range(3):
        assert np.array_equal(forward(params, batch), first)
    assert all(np.array_equal(before[name], params.tensors[name]) for name in before)


def test_dense_bias_gradient_closed_form(tiny):
    params = init_params(tiny, seed=3, dtype=np.float64)
    batch = batch_of(tiny, 5, seed=4)
    targets = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0], [0, 1, 0], [1, 1, 1]], dtype=np.float64)
    grads = backward(params, batch, targets)
    probabilities = forward(params, batch, mode="train")
    assert np.allclose(grads["dense.b"], (probabilities - targets).sum(axis=0) / targets.size, atol=1e-12)


def test_predictions_equal_to_targets_give_zero_gradients(tiny):
    params = init_params(tiny, seed=3, dtype=np.float64)
    batch = batch_of(tiny, 4, seed=9)
    targets = forward(params, batch, mode="train")
    value, grads, _ = loss_and_gradients(params, batch, targets)
    assert set(grads) == set(params.trainable())
    for name, grad in grads.items():
        assert np.allclose(grad, 0.0, atol=1e-12), name
    assert value > 0
