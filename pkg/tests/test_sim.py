import dataclasses

import numpy as np
import pytest

from core.config import SimConfig
from core.errors import MeshMismatchError, SimulationError
from modules.sim.primitives import (
    DualPickPlace,
    Fling,
    PickPlace,
    default_rack,
    drop,
    execute_fling,
    execute_pick_place,
    hang_attempt,
    random_self_play,
    settle,
)
from modules.sim.recorder import EpisodeRecorder
from modules.sim.solver import Capsule, effective_stiffness, project_tethers, step
from modules.sim.state import ConstraintSet, SimState, TetherTable, build_constraints, color_constraints
from validation.task_metrics import coverage_ratio


def single_particle(z: float = 1.0):
    rest = np.array([[0.0, 0.0, z]])
    cs = ConstraintSet.from_pairs(rest, np.zeros((0, 2)))
    state = SimState(positions=rest.copy(), velocities=np.zeros((1, 3)), inv_mass=np.ones(1), mesh_id="p")
    return state, cs


def test_free_fall_one_step():
    state, cs = single_particle()
    config = SimConfig(dt=0.01)
    out = step(state, cs, config=config)
    assert out.velocities[0, 2] == pytest.approx(-0.098, abs=1e-12)
    assert out.positions[0, 2] == pytest.approx(1.0 - 9.8e-4, abs=1e-12)
    assert out.positions[0, :2].tolist() == [0.0, 0.0]
    assert out.time == pytest.approx(0.01)


def test_ground_clamps_with_friction():
    state, cs = single_particle(z=0.0)
    state.velocities[0] = (1.0, 0.0, 0.0)
    out = step(state, cs, config=SimConfig(dt=0.01, ground_friction=0.5))
    assert out.positions[0, 2] == 0.0
    assert out.positions[0, 0] == pytest.approx(0.005)


def test_flat_rest_is_unchanged(flat, config):
    state, cs = flat
    out = step(state, cs, config=config.sim)
    assert np.allclose(out.positions, state.positions, atol=1e-12)
    assert np.allclose(out.velocities, 0.0, atol=1e-12)


def test_pinned_particles_do_not_move(top, flat, config):
    state, cs = flat
    state = state.copy()
    pinned = [top.landmarks["shoulder-L"], top.landmarks["shoulder-R"]]
    state.positions[:, 2] += 0.3
    state.inv_mass[pinned] = 0.0
    before = state.positions[pinned].copy()
    for _ in range(5):
        state = step(state, cs, config=config.sim)
    assert np.array_equal(state.positions[pinned], before)
    assert state.positions[:, 2].min() < 0.3


def test_step_rejects_bad_parameters(flat):
    state, cs = flat
    with pytest.raises(SimulationError):
        step(state, cs, dt=0.05)
    with pytest.raises(SimulationError):
        step(state, cs, iterations=0)
    broken = state.copy()
    broken.positions[0, 0] = np.nan
    with pytest.raises(SimulationError):
        step(broken, cs)


def test_colouring_separates_shared_particles(flat):
    _, cs = flat
    for color in color_constraints(cs.stretch):
        ids = cs.stretch[color].ravel()
        assert len(ids) == len(np.unique(ids))


def test_effective_stiffness():
    assert effective_stiffness(1.0, 20) == 1.0
    assert effective_stiffness(0.0, 20) == 0.0
    k = effective_stiffness(0.5, 4)
    assert 1 - (1 - k) ** 4 == pytest.approx(0.5)


def test_capsule_pushes_points_out():
    capsule = Capsule((-1.0, 0.0, 1.0), (1.0, 0.0, 1.0), radius=0.1, friction=0.0)
    predicted = np.array([[0.2, 0.0, 1.05]])
    capsule.project(predicted, predicted.copy(), np.array([True]))
    assert np.linalg.norm(predicted[0] - (0.2, 0.0, 1.0)) == pytest.approx(0.1)


def test_tether_distances_follow_the_cloth(top):
    table = TetherTable(top.vertices, top.edges(), top.faces)
    marks = top.landmarks
    euclid = np.linalg.norm(top.vertices - top.vertices[marks["cuff-L"]], axis=1)
    d = table.distances(marks["cuff-L"])
    assert d[marks["cuff-L"]] == 0.0
    assert np.all(np.isfinite(d))
    assert np.all(d >= euclid - 1e-9)
    assert d[marks["hem-R"]] > euclid[marks["hem-R"]] + 0.01
    across = table.distances(marks["shoulder-L"])[marks["shoulder-R"]]
    straight = np.linalg.norm(top.vertices[marks["shoulder-L"]] - top.vertices[marks["shoulder-R"]])
    assert across == pytest.approx(straight, rel=1e-6)
    assert len(table) == 2


def test_tether_graph_fallback_and_projection():
    rest = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    cs = ConstraintSet.from_pairs(rest, [[0, 1], [1, 2]])
    cs.tethers = TetherTable(rest, cs.stretch)
    assert cs.tethers.distances(0).tolist() == [0.0, 1.0, 2.0]
    p = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [5.0, 0.0, 0.0]])
    project_tethers(p, np.array([0.0, 1.0, 1.0]), cs)
    assert p[1].tolist() == [0.5, 0.0, 0.0]
    assert p[2] == pytest.approx([2.0, 0.0, 0.0])
    untouched = p.copy()
    project_tethers(p, np.ones(3), cs)
    assert np.array_equal(p, untouched)


def test_tethers_follow_config(top, config):
    assert build_constraints(top, config.sim).tethers is not None
    off = dataclasses.replace(config.sim, tethers=False)
    assert build_constraints(top, off).tethers is None


def test_same_place_pick_place_is_noop(top, flat, config):
    state, cs = flat
    state = state.copy()
    state.floor[:] = 0.05
    state.positions[:, 2] = 0.05
    v = top.landmarks["hem-L"]
    out = execute_pick_place(state, PickPlace(pick=v, place=tuple(state.positions[v])), cs, config.sim)
    assert out.state_hash() == state.state_hash()
    assert out.settled


def test_place_below_ground_rejected(top, flat, config):
    state, cs = flat
    with pytest.raises(SimulationError):
        execute_pick_place(state, PickPlace(pick=0, place=(0.0, 0.0, -0.1)), cs, config.sim)
    with pytest.raises(SimulationError):
        execute_pick_place(state, PickPlace(pick=0, place=(0.0, 0.0, 0.0)), cs, config.sim)
    with pytest.raises(SimulationError):
        execute_pick_place(state, PickPlace(pick=top.vertex_count, place=(0.0, 0.0, 0.1)), cs, config.sim)


def test_primitive_validation():
    with pytest.raises(SimulationError):
        Fling(picks=(3, 3))
    with pytest.raises(SimulationError):
        DualPickPlace(picks=(1,), places=((0.0, 0.0, 0.0),))


def test_drop_height_range(flat, config):
    state, cs = flat
    with pytest.raises(SimulationError):
        drop(state, cs, 1.5, config=config.sim)


def test_state_mesh_check(top, other_top, flat):
    state, _ = flat
    state.check_mesh(top)
    with pytest.raises(MeshMismatchError):
        state.check_mesh(other_top)


def test_settle_flags_cap(flat, config):
    state, cs = flat
    lifted = state.copy()
    lifted.positions[:, 2] += 0.5
    out = settle(lifted, cs, config.sim, cap=3)
    assert not out.settled


@pytest.mark.slow
def test_hanging_cloth_stretch_below_two_percent(top, config):
    sim = config.sim
    cs = build_constraints(top, sim)
    state = SimState.flat(top, cs)
    state.positions[:, [1, 2]] = state.positions[:, [2, 1]]
    state.positions[:, 2] += 1.0 - state.positions[:, 2].min()
    pinned = [top.landmarks["shoulder-L"], top.landmarks["shoulder-R"]]
    state.inv_mass[pinned] = 0.0
    before = state.positions[pinned].copy()
    for _ in range(500):
        state = step(state, cs, config=sim)
    assert np.array_equal(state.positions[pinned], before)
    assert cs.max_relative_stretch(state.positions) < 0.02


@pytest.mark.slow
def test_self_play_is_deterministic_and_recorded(top, config):
    cs = build_constraints(top, config.sim)
    runs = []
    for _ in range(2):
        recorder = EpisodeRecorder(top.mesh_id, seed=5, stride=10)
        actions = []
        state = random_self_play(SimState.flat(top, cs), cs, top, 1, 5, config.sim, config.render,
                                 hook=recorder.record, actions=actions)
        runs.append((state.state_hash(), actions, len(recorder.frames)))
    assert runs[0] == runs[1]
    assert len(runs[0][1]) == 1
    assert runs[0][2] > 0


def upright(state: SimState, bottom: float = 1.0) -> SimState:
    """The flat garment turned into the x-z plane, hem at height ``bottom``."""
    state = state.copy()
    state.positions[:, [1, 2]] = state.positions[:, [2, 1]]
    state.positions[:, 2] += bottom - state.positions[:, 2].min()
    return state


@pytest.mark.slow
def test_low_flat_drop_stays_flat(top, flat, config):
    state, cs = flat
    out = drop(state, cs, 0.1, config=config.sim, identity=True)
    assert coverage_ratio(out, top) > 0.8


def test_hang_preconditions(top, flat, config):
    state, cs = flat
    lifted = state.copy()
    lifted.positions[:, 2] += 1.0
    with pytest.raises(SimulationError, match="below the garment"):
        hang_attempt(lifted, cs, top.landmarks["collar-C"], default_rack(config.task, config.sim), config.sim)
    grounded = Capsule((-0.4, 0.5, 0.0), (0.4, 0.5, 0.0), radius=0.015)
    with pytest.raises(SimulationError, match="above the ground"):
        hang_attempt(state, cs, top.landmarks["collar-C"], grounded, config.sim)


@pytest.mark.slow
def test_pick_cuff_onto_other_cuff(top, flat, config):
    state, cs = flat
    target = state.positions[top.landmarks["cuff-R"]].copy()
    target[2] = config.sim.place_height
    out = execute_pick_place(state, PickPlace(pick=top.landmarks["cuff-L"], place=tuple(target)), cs, config.sim)
    assert np.linalg.norm(out.positions[top.landmarks["cuff-L"], :2] - target[:2]) < 0.03


@pytest.mark.slow
def test_dual_hem_to_shoulder_half_fold(top, flat, config):
    state, cs = flat
    hems = (top.landmarks["hem-L"], top.landmarks["hem-R"])
    places = []
    for name in ("shoulder-L", "shoulder-R"):
        place = state.positions[top.landmarks[name]].copy()
        place[2] = config.sim.place_height
        places.append(tuple(place))
    out = execute_pick_place(state, DualPickPlace(picks=hems, places=tuple(places)), cs, config.sim)
    for vertex, place in zip(hems, places):
        assert np.linalg.norm(out.positions[vertex, :2] - np.asarray(place)[:2]) < 0.03
    assert coverage_ratio(out, top) < 0.75


@pytest.mark.slow
def test_high_drop_crumples_and_fling_spreads(top, flat, config):
    state, cs = flat
    collapsed = drop(upright(state), cs, 1.0, config=config.sim, identity=True)
    before = coverage_ratio(collapsed, top)
    assert before < 0.7
    shoulders = Fling(picks=(top.landmarks["shoulder-L"], top.landmarks["shoulder-R"]))
    spread = execute_fling(collapsed, shoulders, cs, config.sim)
    assert coverage_ratio(spread, top) > before


@pytest.mark.slow
def test_flat_fling_keeps_most_coverage(top, flat, config):
    state, cs = flat
    shoulders = Fling(picks=(top.landmarks["shoulder-L"], top.landmarks["shoulder-R"]))
    out = execute_fling(state, shoulders, cs, config.sim)
    assert coverage_ratio(out, top) >= 0.7


@pytest.mark.slow
def test_self_play_deforms_and_depends_on_seed(top, flat, config):
    state, cs = flat
    runs = [random_self_play(state, cs, top, 3, seed, config.sim, config.render) for seed in (1, 2)]
    assert coverage_ratio(runs[0], top) < 1.0
    assert runs[0].state_hash() != runs[1].state_hash()


@pytest.mark.slow
def test_hang_by_collar_and_on_a_low_rack(top, flat, config):
    state, cs = flat
    collar = top.landmarks["collar-C"]
    rack = default_rack(config.task, config.sim)
    hung = hang_attempt(state, cs, collar, rack, config.sim)
    assert hung
    assert hung.lowest > 0.05
    low = Capsule((-0.4, 0.5, 0.3), (0.4, 0.5, 0.3), radius=0.015, friction=config.sim.rack_friction)
    dragged = hang_attempt(state, cs, collar, low, config.sim)
    assert not dragged
    assert dragged.lowest <= 0.05
