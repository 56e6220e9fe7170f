import dataclasses

import numpy as np
import pytest
import torch

from core.config import DescriptorConfig, SkeletonConfig
from core.errors import ConfigError
from modules.garment.generator import GarmentSpec, analytic_skeleton, generate_garment
from modules.percept.observation import PointCloudObs
from modules.percept.render import render_partial
from modules.skeleton.merger import (
    SkeletonModel,
    coverage_loss,
    load_skeleton_model,
    predict_skeleton,
    save_skeleton_model,
    train_skeleton,
)
from modules.skeleton.projection import project_skeleton
from modules.skeleton.skeleton import Skeleton, activations_from_edges, pair_count, pair_index
from modules.sim.state import SimState, build_constraints
from tests.conftest import observations, shifted
from validation.correspondence_eval import skeleton_error


def test_pair_index_is_dense():
    s = 6
    seen = sorted(pair_index(i, j, s) for i in range(s) for j in range(i + 1, s))
    assert seen == list(range(pair_count(s)))
    assert pair_index(4, 1, s) == pair_index(1, 4, s)
    with pytest.raises(IndexError):
        pair_index(2, 2, s)


def test_skeleton_validation():
    with pytest.raises(ValueError, match="keypoint count"):
        Skeleton(["a"], np.zeros((1, 3)), np.zeros(1), np.zeros(0))
    with pytest.raises(ValueError, match="activations"):
        Skeleton(["a", "b"], np.zeros((2, 3)), np.zeros(2), np.array([1.5]))


def test_matrix_and_edges():
    skeleton = Skeleton(["a", "b", "c"], np.zeros((3, 3)), np.arange(3),
                        activations_from_edges(3, [(0, 2)]))
    m = skeleton.matrix()
    assert np.array_equal(m, m.T)
    assert m[0, 2] == 1.0 and m[0, 1] == 0.0
    assert skeleton.edges() == [(0, 2)]
    assert Skeleton.from_dict(skeleton.to_dict()).edges() == [(0, 2)]


def test_projection_is_tracing(top, flat, config):
    state, _ = flat
    skeleton = analytic_skeleton(top)
    moved = shifted(state, (0.03, 0.01, 0.2))
    projected = project_skeleton(top, skeleton, moved, render=config.render)
    assert np.array_equal(projected.positions, moved.positions[skeleton.vertex_ids])


def test_projection_visibility_from_observation(top, flat, config):
    state, _ = flat
    skeleton = analytic_skeleton(top)
    obs = observations(top, config, count=1)[0]
    keep = obs.trace != skeleton.vertex_ids[0]
    partial = type(obs)(points=obs.points[keep], trace=obs.trace[keep], mesh_id=obs.mesh_id)
    projected = project_skeleton(top, skeleton, state, obs=partial)
    assert not projected.visible[0]
    assert projected.visible[1:].all()
    assert 0 not in projected.visible_indices()


def test_coverage_loss_zero_when_points_on_active_edge():
    samples = torch.linspace(0, 1, 16, dtype=torch.float64)[None, :, None] * torch.tensor([1.0, 0.0, 0.0],
                                                                                         dtype=torch.float64)
    points = samples[0, [0, 5, 15]]
    assert float(coverage_loss(points, samples, torch.ones(1, dtype=torch.float64))) == pytest.approx(0.0, abs=1e-12)
    assert float(coverage_loss(points, samples, torch.zeros(1, dtype=torch.float64))) == pytest.approx(1.0)


def test_training_needs_four_garments(top, config):
    flat_obs = observations(top, config, count=3)
    with pytest.raises(ValueError, match="at least 4"):
        train_skeleton(flat_obs, 10, config.skeleton)


@pytest.mark.slow
def test_train_and_predict(tmp_path, top, config):
    flat_obs = observations(top, config, count=4)
    anchor = analytic_skeleton(top)
    losses = []
    model = train_skeleton(flat_obs, anchor.size, config.skeleton, seed=0, anchor=anchor,
                           on_step=lambda i, loss: losses.append(loss))
    assert len(losses) == config.skeleton.steps
    assert np.all(np.isfinite(losses))
    assert model.names == anchor.names

    predicted = predict_skeleton(model, flat_obs[0])
    assert predicted.size == anchor.size
    assert np.isin(predicted.vertex_ids, flat_obs[0].trace).all()
    assert np.all((predicted.activations >= 0) & (predicted.activations <= 1))

    path = save_skeleton_model(model, str(tmp_path / "skel.ckpt"))
    loaded = load_skeleton_model(path)
    assert np.array_equal(loaded.flat_parameters(), model.flat_parameters())
    assert loaded.names == model.names


def test_keypoint_count_is_bounded():
    with pytest.raises(ConfigError):
        SkeletonConfig(keypoints=51)


@pytest.mark.slow
def test_line_keypoints_stay_on_the_line():
    rng = np.random.default_rng(0)
    lines = []
    for _ in range(4):
        x = np.sort(rng.uniform(0.0, 1.0, 200))
        points = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
        lines.append(PointCloudObs(points=points, trace=np.arange(200), mesh_id="line"))
    config = SkeletonConfig(keypoints=2, points=128, steps=400, encoder=DescriptorConfig(
        feature_dim=8, encoder_width=8, stage_widths=(8, 8), head_width=8, neighbors=8))
    losses = []
    model = train_skeleton(lines, 2, config, on_step=lambda i, loss: losses.append(loss))
    assert losses[-1] < losses[0]
    predicted = predict_skeleton(model, lines[0])
    assert np.all(predicted.keypoints[:, 1:] == 0.0)
    assert predicted.names == ["k0", "k1"]
    x = lines[0].points[:, 0]
    low, high = np.sort(predicted.keypoints[:, 0])
    assert low - x.min() < 0.05
    assert x.max() - high < 0.05
    assert predicted.activations[pair_index(0, 1, 2)] > 0.9


@pytest.mark.slow
def test_learned_top_keypoints_near_landmarks(top, other_top, config):
    tops = [top, other_top,
            generate_garment(GarmentSpec(edge_length=0.05, body_width=0.48, sleeve_length=0.22, seed=2)),
            generate_garment(GarmentSpec(edge_length=0.05, body_height=0.62, sleeve_width=0.16, seed=3))]
    flat_obs = [observations(mesh, config, count=1)[0] for mesh in tops]
    anchor = analytic_skeleton(top)
    skeleton_config = dataclasses.replace(config.skeleton, steps=300)
    model = train_skeleton(flat_obs, anchor.size, skeleton_config, seed=0, anchor=anchor)
    state = SimState.flat(top, build_constraints(top, config.sim))
    unseen = render_partial(state, top, seed=9, render=config.render)
    assert skeleton_error(predict_skeleton(model, unseen), top) <= 0.1
