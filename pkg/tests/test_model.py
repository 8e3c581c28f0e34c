import numpy as np
import pytest

from smadp.data import Dataset, gen_synthetic
from smadp.errors import ParameterError
from smadp.model import (
    batch_loss,
    clipped_group_sums,
    evaluate,
    init_model,
    per_example_grads,
)
from smadp.numerics import RandomStream


def _model(arch, dim=4, hidden=5, classes=3, seed=0, clip=1.0):
    return init_model(RandomStream(seed), arch, dim, hidden, classes, clip, 1.0)


def test_init_shapes_logreg():
    model = _model("logreg", dim=4, classes=3)
    (group,) = model.groups
    assert group.weight.shape == (3, 4)
    assert group.bias.shape == (3,)
    assert group.stage_tag == "classifier"


def test_init_shapes_mlp1():
    model = _model("mlp1", dim=4, hidden=8, classes=3)
    g0, g1 = model.groups
    assert g0.weight.shape == (8, 4) and g0.bias.shape == (8,)
    assert g1.weight.shape == (3, 8) and g1.bias.shape == (3,)
    assert [g.stage_tag for g in model.groups] == ["hidden", "classifier"]


def test_init_deterministic():
    a = _model("mlp1", seed=3)
    b = _model("mlp1", seed=3)
    for ga, gb in zip(a.groups, b.groups):
        assert np.array_equal(ga.weight, gb.weight)
        assert np.array_equal(ga.bias, gb.bias)


def test_init_rejects_unknown_arch():
    with pytest.raises(ParameterError):
        _model("resnet")


def test_logreg_zero_weight_gradient_closed_form():
    model = _model("logreg", dim=3, classes=2)
    model.groups[0].weight[:] = 0.0
    x = np.array([0.5, -1.0, 2.0])
    (grad,) = per_example_grads(model, x, 1)
    # softmax at zero logits is (0.5, 0.5); delta = (0.5, -0.5)
    expected_w = np.outer([0.5, -0.5], x).ravel()
    expected_b = np.array([0.5, -0.5])
    assert np.allclose(grad.flat, np.concatenate([expected_w, expected_b]), atol=1e-12)


def _fd_gradient(model, x, label, group_id, h=1e-5):
    """Central finite differences of the single-example loss."""
    data = Dataset(x[None, :], np.array([label]),
                   num_classes=model.num_classes, name="fd")
    group = model.group(group_id)
    base = group.flat()
    grad = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        group.set_flat(bumped)
        up = batch_loss(model, data)
        bumped[i] = base[i] - h
        group.set_flat(bumped)
        down = batch_loss(model, data)
        grad[i] = (up - down) / (2 * h)
    group.set_flat(base)
    return grad


@pytest.mark.parametrize("arch", ["logreg", "mlp1"])
def test_per_example_grads_match_finite_differences(arch):
    model = _model(arch, dim=3, hidden=4, classes=3, seed=9)
    rng = np.random.default_rng(5)
    x = rng.normal(size=3)
    grads = per_example_grads(model, x, 2)
    for grad in grads:
        fd = _fd_gradient(model, x, 2, grad.group_id)
        scale = max(1.0, np.linalg.norm(fd))
        assert np.linalg.norm(grad.flat - fd) / scale <= 1e-4


@pytest.mark.parametrize("arch", ["logreg", "mlp1"])
def test_full_batch_step_decreases_loss(arch):
    data = gen_synthetic(RandomStream(2), 200, 3, 2)
    model = init_model(RandomStream(2), arch, 3, 4, 2, 1e9, 1.0)
    before = batch_loss(model, data)
    sums = clipped_group_sums(model, data, np.arange(len(data)))
    for group, direction in zip(model.groups, sums):
        group.set_flat(group.flat() - 1e-3 * direction)
    assert batch_loss(model, data) < before


@pytest.mark.parametrize("arch", ["logreg", "mlp1"])
def test_per_example_additivity(arch):
    # sum of per-example gradients equals the unclipped batch sum
    data = gen_synthetic(RandomStream(8), 12, 3, 3)
    model = init_model(RandomStream(8), arch, 3, 4, 3, 1e12, 1.0)
    indices = np.arange(len(data))
    batch_sums = clipped_group_sums(model, data, indices)
    manual = [np.zeros(g.size) for g in model.groups]
    for i in indices:
        for grad in per_example_grads(model, data.features[i], int(data.labels[i])):
            manual[grad.group_id] += grad.flat
    for got, want in zip(batch_sums, manual):
        assert np.linalg.norm(got - want) <= 1e-10 * max(1.0, np.linalg.norm(want))


def test_clipped_sums_empty_batch_is_zero():
    data = gen_synthetic(RandomStream(0), 10, 3, 2)
    model = _model("mlp1", dim=3)
    for s in clipped_group_sums(model, data, np.array([], dtype=int)):
        assert not s.any()


def test_evaluate_uniform_predictor():
    data = gen_synthetic(RandomStream(3), 100, 4, 2)
    model = _model("logreg", dim=4, classes=2)
    model.groups[0].weight[:] = 0.0
    result = evaluate(model, data)
    assert result.loss == pytest.approx(np.log(2.0), abs=1e-12)
    # argmax ties break to class 0, and labels are balanced
    assert result.accuracy == 0.5


def test_evaluate_perfect_fit_reaches_one():
    data = gen_synthetic(RandomStream(6), 50, 2, 2)
    model = _model("logreg", dim=2, classes=2)
    # place huge weights along the true class directions
    model.groups[0].weight[:] = 100.0 * np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert evaluate(model, data).accuracy == 1.0


def test_evaluate_random_labels_near_chance():
    rng = np.random.default_rng(11)
    features = rng.normal(size=(5000, 6))
    labels = rng.integers(0, 10, size=5000)
    data = Dataset(features, labels, num_classes=10, name="random")
    model = _model("logreg", dim=6, classes=10, seed=13)
    accuracy = evaluate(model, data).accuracy
    assert abs(accuracy - 0.1) <= 0.03


def test_per_example_grads_rejects_bad_label():
    model = _model("logreg", dim=3, classes=2)
    with pytest.raises(ParameterError):
        per_example_grads(model, np.zeros(3), 5)
