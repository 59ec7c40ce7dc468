"""Model tests: finite-difference gradient oracle, freezing, serialization."""

import numpy as np
import pytest

from fedhet import nnet
from fedhet.nnet import (
    Batch,
    LayoutMismatchError,
    ModelSpec,
    ParamVector,
    derive_image_model,
    forward,
    frozen_slice,
    init_params,
    layout_for,
    load_params,
    loss_and_grad,
    predict_proba,
    save_params,
    sgd_step,
)

TINY_PATCH = ModelSpec(kind=nnet.PATCH_CLASSIFIER, conv_blocks=((3, 3, 2),))
TINY_IMAGE = ModelSpec(
    kind=nnet.WHOLE_IMAGE_CLASSIFIER,
    conv_blocks=((3, 3, 2), (4, 3, 2)),
    hidden=(4,),
    n_outputs=1,
)
TINY_FROZEN = ModelSpec(
    kind=nnet.WHOLE_IMAGE_CLASSIFIER,
    conv_blocks=((3, 3, 2), (4, 3, 2)),
    hidden=(4,),
    n_outputs=1,
    frozen_prefix=2,
)


def make_batch(spec, n=6, size=8, seed=0):
    rng = np.random.default_rng(seed)
    inputs = rng.normal(0, 1, (n, size, size))
    high = 5 if spec.kind == nnet.PATCH_CLASSIFIER else 2
    labels = rng.integers(0, high, n)
    labels[:2] = [0, 1]
    return Batch(inputs, labels)


def numeric_gradient(spec, params, batch, indices, eps=1e-5):
    """Central finite differences at selected flat coordinates."""
    out = np.empty(len(indices))
    for pos, idx in enumerate(indices):
        bumped = params.copy()
        bumped.values[idx] += eps
        lo_plus, _ = loss_and_grad(spec, bumped, batch)
        bumped.values[idx] -= 2 * eps
        lo_minus, _ = loss_and_grad(spec, bumped, batch)
        out[pos] = (lo_plus - lo_minus) / (2 * eps)
    return out


# ---------------------------------------------------------------------------
# spec / layout / init
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(kind="mlp")
    with pytest.raises(ValueError):
        ModelSpec(kind=nnet.PATCH_CLASSIFIER, n_outputs=2)
    with pytest.raises(ValueError):
        ModelSpec(kind=nnet.WHOLE_IMAGE_CLASSIFIER, n_outputs=5)
    with pytest.raises(ValueError):
        ModelSpec(kind=nnet.PATCH_CLASSIFIER, conv_blocks=((3, 3, 2),), frozen_prefix=4)


def test_layout_offsets_are_contiguous():
    layout = layout_for(TINY_IMAGE)
    expected = 0
    for _name, shape, offset in layout:
        assert offset == expected
        expected += int(np.prod(shape))
    names = [n for n, _, _ in layout]
    assert names == ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "res_w", "res_b", "fc1_w", "fc1_b", "out_w", "out_b"]


def test_init_deterministic_and_bounded():
    a = init_params(TINY_PATCH, seed=7)
    b = init_params(TINY_PATCH, seed=7)
    c = init_params(TINY_PATCH, seed=8)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    for name, shape, _ in a.layout:
        if name.endswith("_b"):
            assert np.all(a.view(name) == 0.0)
        else:
            bound = np.sqrt(1.0 / np.prod(shape[1:]))
            assert np.abs(a.view(name)).max() < bound


def test_param_vector_layout_mismatch():
    layout = layout_for(TINY_PATCH)
    with pytest.raises(LayoutMismatchError):
        ParamVector(np.zeros(3), layout)


def test_frozen_slice_extent():
    sl = frozen_slice(TINY_FROZEN)
    layout = layout_for(TINY_FROZEN)
    # prefix of 2 tensors = conv1_w + conv1_b
    assert sl == slice(0, layout[2][2])
    assert frozen_slice(TINY_PATCH) == slice(0, 0)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_zero_params_patch_loss_is_ln5():
    params = init_params(TINY_PATCH, 0)
    params.values[:] = 0.0
    batch = make_batch(TINY_PATCH)
    loss, grad = loss_and_grad(TINY_PATCH, params, batch)
    assert loss == pytest.approx(np.log(5.0), abs=1e-12)
    logits = forward(TINY_PATCH, params, batch)
    assert np.all(logits == 0.0)


def test_zero_params_image_loss_is_ln2():
    params = init_params(TINY_IMAGE, 0)
    params.values[:] = 0.0
    batch = make_batch(TINY_IMAGE)
    loss, _ = loss_and_grad(TINY_IMAGE, params, batch)
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_forward_rows_independent():
    params = init_params(TINY_PATCH, 1)
    batch = make_batch(TINY_PATCH, n=5)
    logits = forward(TINY_PATCH, params, batch)
    for i in range(5):
        one = forward(TINY_PATCH, params, Batch(batch.inputs[i : i + 1], batch.labels[i : i + 1]))
        assert np.allclose(one[0], logits[i], atol=1e-12)


def test_predict_proba_normalized():
    params = init_params(TINY_PATCH, 2)
    batch = make_batch(TINY_PATCH)
    proba = predict_proba(TINY_PATCH, params, batch.inputs)
    assert proba.shape == (6, 5)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    img_params = init_params(TINY_IMAGE, 2)
    proba = predict_proba(TINY_IMAGE, params=img_params, inputs=batch.inputs)
    assert proba.shape == (6, 1)
    assert np.all((proba > 0) & (proba < 1))


def test_forward_rejects_bad_shapes():
    params = init_params(TINY_PATCH, 0)
    with pytest.raises(ValueError):
        forward(TINY_PATCH, params, Batch(np.zeros((2, 7, 7)), np.zeros(2, dtype=int)))
    wrong = init_params(TINY_IMAGE, 0)
    batch = make_batch(TINY_PATCH)
    with pytest.raises(LayoutMismatchError):
        forward(TINY_PATCH, wrong, batch)


def test_bad_labels_rejected():
    params = init_params(TINY_PATCH, 0)
    with pytest.raises(ValueError):
        loss_and_grad(TINY_PATCH, params, Batch(np.zeros((2, 8, 8)), np.array([0, 7])))
    img = init_params(TINY_IMAGE, 0)
    with pytest.raises(ValueError):
        loss_and_grad(TINY_IMAGE, img, Batch(np.zeros((2, 8, 8)), np.array([0, 3])))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("spec", [TINY_PATCH, TINY_IMAGE, TINY_FROZEN], ids=["patch", "image", "frozen"])
def test_gradient_matches_finite_differences(spec):
    rng = np.random.default_rng(123)
    params = init_params(spec, seed=5)
    batch = make_batch(spec, seed=9)
    _, grad = loss_and_grad(spec, params, batch)
    frozen = frozen_slice(spec)
    trainable = np.arange(frozen.stop, params.values.size)
    indices = rng.choice(trainable, size=40, replace=False)
    numeric = numeric_gradient(spec, params, batch, indices)
    analytic = grad.values[indices]
    denom = np.maximum(np.abs(numeric), 1e-8)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-5


def test_frozen_gradient_entries_zero():
    params = init_params(TINY_FROZEN, 3)
    batch = make_batch(TINY_FROZEN, seed=4)
    _, grad = loss_and_grad(TINY_FROZEN, params, batch)
    sl = frozen_slice(TINY_FROZEN)
    assert np.all(grad.values[sl] == 0.0)
    assert np.any(grad.values[sl.stop :] != 0.0)


def test_sgd_step_preserves_frozen_bits():
    params = init_params(TINY_FROZEN, 3)
    before = params.values[frozen_slice(TINY_FROZEN)].copy()
    batch = make_batch(TINY_FROZEN, seed=4)
    for _ in range(5):
        _, grad = loss_and_grad(TINY_FROZEN, params, batch)
        params = sgd_step(params, grad, 0.1)
    after = params.values[frozen_slice(TINY_FROZEN)]
    assert np.array_equal(before, after)


def test_sgd_step_arithmetic():
    params = init_params(TINY_PATCH, 0)
    grad = params.zeros_like()
    grad.values[:] = 2.0
    stepped = sgd_step(params, grad, 0.25)
    assert np.array_equal(stepped.values, params.values - 0.5)


def test_gradient_descent_reduces_loss():
    params = init_params(TINY_PATCH, 11)
    batch = make_batch(TINY_PATCH, n=12, seed=13)
    loss0, grad = loss_and_grad(TINY_PATCH, params, batch)
    for _ in range(20):
        loss, grad = loss_and_grad(TINY_PATCH, params, batch)
        params = sgd_step(params, grad, 0.2)
    loss_end, _ = loss_and_grad(TINY_PATCH, params, batch)
    assert loss_end < loss0


# ---------------------------------------------------------------------------
# whole-image derivation
# ---------------------------------------------------------------------------


def test_derive_image_model_copies_trunk():
    patch_params = init_params(TINY_PATCH_2 := ModelSpec(kind=nnet.PATCH_CLASSIFIER, conv_blocks=((3, 3, 2), (4, 3, 2))), seed=0)
    spec, params = derive_image_model(TINY_PATCH_2, patch_params, seed=1, hidden=(4,))
    assert spec.kind == nnet.WHOLE_IMAGE_CLASSIFIER
    assert spec.frozen_prefix == 2
    for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b"):
        assert np.array_equal(params.view(name), patch_params.view(name))
    assert "res_w" in params.names()
    assert params.view("out_w").shape[0] == 1


def test_derive_image_model_rejects_image_spec():
    params = init_params(TINY_IMAGE, 0)
    with pytest.raises(ValueError):
        derive_image_model(TINY_IMAGE, params, seed=0)


def test_derived_model_trains_only_unfrozen():
    patch_spec = ModelSpec(kind=nnet.PATCH_CLASSIFIER, conv_blocks=((3, 3, 2), (4, 3, 2)))
    patch_params = init_params(patch_spec, 0)
    spec, params = derive_image_model(patch_spec, patch_params, seed=1, hidden=(4,))
    batch = make_batch(spec, seed=2)
    _, grad = loss_and_grad(spec, params, batch)
    stepped = sgd_step(params, grad, 0.1)
    assert np.array_equal(stepped.view("conv1_w"), patch_params.view("conv1_w"))
    assert not np.array_equal(stepped.view("conv2_w"), params.view("conv2_w"))


# ---------------------------------------------------------------------------
# pooling edge cases
# ---------------------------------------------------------------------------


def test_pool_rejects_indivisible_size():
    params = init_params(TINY_PATCH, 0)
    batch = Batch(np.zeros((1, 7, 7)), np.zeros(1, dtype=int))
    with pytest.raises(ValueError):
        forward(TINY_PATCH, params, batch)


def test_pool_forward_backward_roundtrip():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    out, cache = nnet._pool_forward(x, 2)
    assert np.array_equal(out[0, 0], [[5, 7], [13, 15]])
    dout = np.ones_like(out)
    dx = nnet._pool_backward(dout, cache, 2)
    assert dx.sum() == 4.0
    assert np.array_equal((dx != 0), (x == np.repeat(np.repeat(out, 2, 2), 2, 3)))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(TINY_IMAGE, 42)
    path = tmp_path / "model.fhw"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.layout == params.layout
    # storage is float32, so roundtrip equals the float32 projection
    assert np.array_equal(loaded.values, params.values.astype("<f4").astype(np.float64))
    save_params(loaded, path)
    again = load_params(path)
    assert np.array_equal(again.values, loaded.values)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.fhw"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_params(path)
