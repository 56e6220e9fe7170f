import numpy as np
import pytest

from core.config import RenderConfig
from core.errors import MeshMismatchError, VisibilityError
from modules.garment.templates import grid_spacing
from modules.percept.camera import Camera
from modules.percept.observation import PointCloudObs, load_observation, save_observation
from modules.percept.render import render_partial, visible_vertices
from modules.percept.tracing import canonical_distance, trace_correspondence
from tests.conftest import shifted


def test_flat_garment_fully_visible(top, flat, config):
    state, _ = flat
    assert visible_vertices(state, top, render=config.render).all()


def test_render_has_exactly_n_points(top, flat, config):
    state, _ = flat
    obs = render_partial(state, top, n=config.render.points, render=config.render)
    assert len(obs) == config.render.points
    assert config.render.points > top.vertex_count
    assert set(obs.trace.tolist()) == set(range(top.vertex_count))
    assert np.array_equal(obs.points, state.positions[obs.trace])


def test_render_fewer_points_than_visible(top, flat, config):
    state, _ = flat
    obs = render_partial(state, top, n=100, render=config.render)
    assert len(np.unique(obs.trace)) == 100


def test_render_is_seeded(top, flat, config):
    state, _ = flat
    a = render_partial(state, top, seed=3, render=config.render)
    b = render_partial(state, top, seed=3, render=config.render)
    c = render_partial(state, top, seed=4, render=config.render)
    assert np.array_equal(a.trace, b.trace)
    assert not np.array_equal(a.trace, c.trace)


def test_render_rejects_small_n(top, flat, config):
    state, _ = flat
    with pytest.raises(ValueError):
        render_partial(state, top, n=10, render=config.render)


def test_nothing_visible_outside_the_view(top, flat, config):
    state, _ = flat
    far = shifted(state, (5.0, 0.0, 0.0))
    with pytest.raises(VisibilityError):
        render_partial(far, top, render=config.render)


def test_folded_in_half_hides_bottom_layer(top, flat, config):
    state, _ = flat
    folded = state.copy()
    lower = top.vertices[:, 1] < 0
    folded.positions[lower, 1] *= -1
    folded.positions[lower, 2] = 0.01
    a = grid_spacing(top.spec.edge_length)
    x, y = top.vertices[:, 0], top.vertices[:, 1]
    covered = ~lower & (np.abs(x) <= 4.1 * a) & (y > 1.4 * a) & (y < 6.6 * a)
    assert covered.any()

    mask = visible_vertices(folded, top, render=config.render)
    assert not mask[covered].any()
    assert mask[lower].all()
    obs = render_partial(folded, top, render=config.render)
    assert not np.isin(obs.trace, np.flatnonzero(covered)).any()


def test_trace_identity_and_translation(top, flat, config):
    state, _ = flat
    obs1 = render_partial(state, top, seed=0, render=config.render)
    obs2 = render_partial(shifted(state, (0.1, -0.05, 0.0)), top, seed=1, render=config.render)
    for idx in (0, 17, 100):
        assert trace_correspondence(obs1, obs1, idx) == obs1.first_index[int(obs1.trace[idx])]
        j = trace_correspondence(obs1, obs2, idx)
        assert obs2.trace[j] == obs1.trace[idx]
        assert np.allclose(obs2.points[j] - obs1.points[idx], (0.1, -0.05, 0.0))


def test_trace_rejects_other_mesh(top, other_top, flat, config):
    state, _ = flat
    obs = render_partial(state, top, render=config.render)
    other = PointCloudObs(points=obs.points, trace=obs.trace, mesh_id=other_top.mesh_id)
    with pytest.raises(MeshMismatchError):
        trace_correspondence(obs, other, 0)


def test_unobserved_vertex_has_no_counterpart(top, flat, config):
    state, _ = flat
    obs = render_partial(state, top, render=config.render)
    missing = obs.trace != obs.trace[0]
    partial = PointCloudObs(points=obs.points[missing], trace=obs.trace[missing], mesh_id=obs.mesh_id)
    assert trace_correspondence(obs, partial, 0) is None


def test_canonical_distance_ignores_deformation(top):
    a, b = top.landmarks["hem-L"], top.landmarks["hem-R"]
    assert canonical_distance(top, a, b) == pytest.approx(abs(top.vertices[a, 0] - top.vertices[b, 0]))


def test_observation_files(tmp_path, top, flat, config):
    state, _ = flat
    obs = render_partial(state, top, render=config.render)
    path = save_observation(obs, str(tmp_path / "x.obs.ugmc"), extra={"state": "flat"})
    loaded = load_observation(path)
    assert loaded.mesh_id == obs.mesh_id
    assert np.array_equal(loaded.trace, obs.trace)
    assert np.allclose(loaded.points, obs.points, atol=1e-6)
    assert np.array_equal(loaded.visible, obs.visible)


def test_camera_defaults():
    camera = Camera.from_config(RenderConfig())
    u, v, depth = camera.project(np.array([[0.0, 0.0, 0.0]]))
    assert depth[0] == pytest.approx(2.0)
    assert u[0] == pytest.approx(v[0])
