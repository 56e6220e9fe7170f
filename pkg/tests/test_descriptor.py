import dataclasses
import math

import numpy as np
import pytest
import torch

from core.config import DescriptorConfig
from core.errors import NonFiniteActivation
from modules.descriptor.field import (
    backward,
    best_match,
    field_from_array,
    forward,
    random_field,
    similarities,
    similarity,
)
from modules.descriptor.network import build_model
from modules.percept.observation import PointCloudObs
from modules.training.losses import loss_cd

SMALL = DescriptorConfig(feature_dim=8, encoder_width=8, stage_widths=(8, 8), head_width=8, neighbors=6)


@pytest.fixture
def cloud():
    points = np.random.default_rng(7).uniform(-0.3, 0.3, size=(64, 3))
    return PointCloudObs(points=points, trace=np.arange(64), mesh_id="cloud")


def test_features_are_unit_rows(cloud):
    field = forward(build_model(SMALL, seed=1), cloud)
    assert field.features.shape == (64, 8)
    assert np.allclose(np.linalg.norm(field.numpy(), axis=1), 1.0)
    assert not field.features.requires_grad


def test_seeded_build():
    a, b = build_model(SMALL, seed=2), build_model(SMALL, seed=2)
    assert np.array_equal(a.flat_parameters(), b.flat_parameters())
    assert not np.array_equal(a.flat_parameters(), build_model(SMALL, seed=3).flat_parameters())


def test_permutation_equivariance(cloud):
    model = build_model(SMALL, seed=1)
    order = np.random.default_rng(0).permutation(len(cloud))
    base = forward(model, cloud).numpy()
    permuted = forward(model, cloud.permuted(order)).numpy()
    assert np.allclose(permuted, base[order], atol=1e-10)


def test_translation_invariance(cloud):
    model = build_model(SMALL, seed=1)
    base = forward(model, cloud).numpy()
    moved = forward(model, cloud.translated(np.array([0.4, -1.2, 0.3]))).numpy()
    assert np.allclose(moved, base, atol=1e-9)


def test_gradient_wrt_points(cloud):
    model = build_model(SMALL, seed=1)
    points = torch.as_tensor(cloud.points[:32]).clone().requires_grad_(True)
    neighbors = torch.as_tensor(PointCloudObs(points=cloud.points[:32], trace=np.arange(32),
                                              mesh_id="cloud").neighbors(SMALL.neighbors))
    assert torch.autograd.gradcheck(lambda p: model(p, neighbors), (points,), eps=1e-6, atol=1e-5)


def test_backward_matches_finite_difference(cloud):
    model = build_model(SMALL, seed=4)
    upstream = np.random.default_rng(1).normal(size=(64, 8))
    grad = backward(model, cloud, upstream)
    assert grad.shape == (model.parameter_count(),)

    theta = model.flat_parameters()
    direction = np.random.default_rng(2).normal(size=theta.shape)
    eps = 1e-6

    def objective(vector):
        model.load_flat_parameters(vector)
        return float((forward(model, cloud).numpy() * upstream).sum())

    numeric = (objective(theta + eps * direction) - objective(theta - eps * direction)) / (2 * eps)
    model.load_flat_parameters(theta)
    assert grad @ direction == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_backward_zero_and_radial_upstream(cloud):
    model = build_model(SMALL, seed=4)
    zero = backward(model, cloud, np.zeros((64, 8)))
    assert zero.shape == (model.parameter_count(),)
    assert not zero.any()
    # unit rows: moving along the row itself does not change them
    radial = backward(model, cloud, forward(model, cloud).numpy())
    assert np.allclose(radial, 0.0, atol=1e-9)
    with pytest.raises(ValueError):
        backward(model, cloud, np.zeros((64, 3)))


def test_too_few_points():
    obs = PointCloudObs(points=np.zeros((3, 3)), trace=np.arange(3), mesh_id="x")
    with pytest.raises(ValueError):
        forward(build_model(SMALL), obs)


def test_non_finite_input_reports_layer(cloud):
    points = cloud.points.copy()
    points[0, 0] = np.inf
    obs = PointCloudObs(points=points, trace=cloud.trace, mesh_id="cloud")
    model = build_model(SMALL)
    with pytest.raises(NonFiniteActivation):
        model(torch.as_tensor(obs.points), torch.as_tensor(cloud.neighbors(SMALL.neighbors)))


def test_best_match_ties_go_to_lowest_index():
    field = field_from_array(np.tile([1.0, 0.0], (5, 1)))
    assert best_match(field, 3, field) == 0
    with pytest.raises(ValueError):
        best_match(field, 0, field_from_array(np.zeros((0, 2))))


def test_best_match_against_brute_force(cloud):
    a = random_field(cloud, dim=8, seed=0)
    b = random_field(cloud, dim=8, seed=1)
    fa, fb = a.numpy(), b.numpy()
    for i in range(0, 64, 7):
        scores = [float(fa[i] @ fb[j]) for j in range(64)]
        assert best_match(a, i, b) == int(np.argmax(scores))
        assert similarity(a, i, b, 5) == pytest.approx(scores[5])
        assert np.allclose(similarities(a, i, b), scores)


def test_similarity_is_clamped():
    field = field_from_array(np.array([[1.0 + 1e-12, 0.0]]))
    assert similarity(field, 0, field, 0) == 1.0
    assert similarities(field, 0, field).max() <= 1.0


@pytest.mark.parametrize("dim,size", [
    (16, 64),
    pytest.param(64, 256, marks=pytest.mark.slow),
])
def test_gradcheck_across_sizes(dim, size):
    config = DescriptorConfig(feature_dim=dim, encoder_width=8, stage_widths=(16, 16), head_width=dim, neighbors=8)
    model = build_model(config, seed=5)
    raw = np.random.default_rng(size).uniform(-0.3, 0.3, size=(size, 3))
    neighbors = torch.as_tensor(PointCloudObs(points=raw, trace=np.arange(size), mesh_id="g").neighbors(8))
    points = torch.as_tensor(raw).clone().requires_grad_(True)
    assert torch.autograd.gradcheck(lambda p: model(p, neighbors), (points,), eps=1e-6, atol=1e-5,
                                    fast_mode=True)


def test_dead_relu_channel_gets_no_gradient(cloud):
    config = dataclasses.replace(SMALL, activation="relu")
    model = build_model(config, seed=1)
    channel = 3
    with torch.no_grad():
        model.stage1.weight[channel] = 0.0
        model.stage1.bias[channel] = -1e3
    out = model(torch.as_tensor(cloud.points), torch.as_tensor(cloud.neighbors(config.neighbors)))
    upstream = torch.as_tensor(np.random.default_rng(0).normal(size=tuple(out.shape)))
    (out * upstream).sum().backward()
    assert not model.stage1.weight.grad[channel].any()
    assert float(model.stage1.bias.grad[channel]) == 0.0
    assert model.stage1.weight.grad.any()


def test_constant_head_gives_identical_rows(cloud):
    model = build_model(SMALL, seed=1)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.copy_(torch.arange(1.0, SMALL.feature_dim + 1))
    field = forward(model, cloud)
    rows = field.numpy()
    assert np.allclose(rows, rows[0], atol=1e-15)
    assert np.allclose(similarities(field, 0, field), 1.0)

    m = 30
    loss = loss_cd(rows[0], rows[1], rows[2:2 + m], 0.07)
    assert loss.value == pytest.approx(math.log(m + 1), abs=1e-9)


def test_best_match_ignores_global_scale(cloud):
    a = random_field(cloud, dim=8, seed=3)
    b = random_field(cloud, dim=8, seed=4)
    scaled_a = field_from_array(0.25 * a.numpy(), cloud)
    scaled_b = field_from_array(0.25 * b.numpy(), cloud)
    for i in range(0, 64, 5):
        assert best_match(scaled_a, i, scaled_b) == best_match(a, i, b)
        assert best_match(scaled_a, i, b) == best_match(a, i, b)
