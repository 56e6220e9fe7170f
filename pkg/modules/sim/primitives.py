"""Scripted manipulation primitives: pick-place, fling, drop, hang, self-play.

Grasped particles get inverse mass 0 and follow a waypoint path at bounded
speed while the solver steps; on release their masses are restored and the
cloth settles until the fastest particle is slower than the settle threshold
or the step cap is hit (the state is then flagged unsettled).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.neighbors import NearestNeighbors

from core.config import RenderConfig, SimConfig, TaskConfig
from core.errors import SimulationError
from core.log import get_logger
from modules.garment.generator import GarmentMesh
from modules.sim.solver import Capsule, step
from modules.sim.state import ConstraintSet, SimState

logger = get_logger("sim")

StepHook = Optional[Callable[[SimState], None]]


# =============================================================================
# ACTIONS
# =============================================================================

@dataclass(frozen=True)
class PickPlace:
    pick: int
    place: Tuple[float, float, float]
    kind: str = field(default="pick_place", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "pick": int(self.pick), "place": [float(c) for c in self.place]}


@dataclass(frozen=True)
class DualPickPlace:
    picks: Tuple[int, int]
    places: Tuple[Tuple[float, float, float], Tuple[float, float, float]]
    kind: str = field(default="dual_pick_place", init=False)

    def __post_init__(self):
        if len(self.picks) != 2 or len(self.places) != 2:
            raise SimulationError("DualPickPlace needs exactly two picks and two places")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "picks": [int(p) for p in self.picks],
                "places": [[float(c) for c in q] for q in self.places]}


@dataclass(frozen=True)
class Fling:
    picks: Tuple[int, int]
    kind: str = field(default="fling", init=False)

    def __post_init__(self):
        if len(self.picks) != 2 or self.picks[0] == self.picks[1]:
            raise SimulationError(f"Fling needs two different pick ids, got {self.picks}")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "picks": [int(p) for p in self.picks]}


@dataclass(frozen=True)
class Drop:
    height: float
    kind: str = field(default="drop", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "height": float(self.height)}


@dataclass(frozen=True)
class Hang:
    pick: int
    kind: str = field(default="hang", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "pick": int(self.pick)}


ActionPrimitive = Union[PickPlace, DualPickPlace, Fling, Drop, Hang]


@dataclass
class HangResult:
    """Outcome of hang_attempt; truthy when the garment stays on the rack."""
    success: bool
    state: SimState
    lowest: float

    def __bool__(self) -> bool:
        return self.success


def default_rack(config: Optional[TaskConfig] = None, sim: Optional[SimConfig] = None) -> Capsule:
    config = config or TaskConfig()
    sim = sim or SimConfig()
    return Capsule(tuple(config.rack_start), tuple(config.rack_end), config.rack_radius,
                   friction=sim.rack_friction)


# =============================================================================
# STEPPING HELPERS
# =============================================================================

def _check_ids(state: SimState, ids: Sequence[int]) -> None:
    bad = [int(i) for i in ids if not 0 <= int(i) < state.particle_count]
    if bad:
        raise SimulationError(f"Pick ids out of range 0..{state.particle_count - 1}: {bad}")


def _step(state: SimState, cs: ConstraintSet, config: SimConfig,
          colliders: Sequence[Capsule], hook: StepHook) -> SimState:
    state = step(state, cs, config.dt, config.iterations, config, colliders)
    if hook is not None:
        hook(state)
    return state


def move_grasps(
    state: SimState,
    cs: ConstraintSet,
    ids: Sequence[int],
    targets: np.ndarray,
    config: SimConfig,
    speed: Optional[float] = None,
    colliders: Sequence[Capsule] = (),
    hook: StepHook = None,
) -> SimState:
    """Move grasped particles in a straight line to ``targets``, stepping the cloth."""
    ids = np.asarray(ids, dtype=np.int64)
    start = state.positions[ids].copy()
    targets = np.asarray(targets, dtype=np.float64).reshape(start.shape)
    travel = float(np.linalg.norm(targets - start, axis=1).max(initial=0.0))
    if travel <= 0:
        return state
    speed = speed or config.gripper_speed
    n = max(1, int(math.ceil(travel / (speed * config.dt))))
    for s in range(1, n + 1):
        state.positions[ids] = start + (targets - start) * (s / n)
        state.velocities[ids] = 0.0
        state = _step(state, cs, config, colliders, hook)
    return state


def settle(
    state: SimState,
    cs: ConstraintSet,
    config: Optional[SimConfig] = None,
    colliders: Sequence[Capsule] = (),
    hook: StepHook = None,
    cap: Optional[int] = None,
) -> SimState:
    """Step until max particle speed < settle_speed or the cap is hit."""
    config = config or SimConfig()
    cap = cap or config.settle_cap
    for _ in range(cap):
        state = _step(state, cs, config, colliders, hook)
        if state.max_speed() < config.settle_speed:
            state.settled = True
            return state
    logger.warning("Settling hit the %d-step cap (max speed %.2e m/s)", cap, state.max_speed())
    state.settled = False
    return state


def _grasp(state: SimState, ids: Sequence[int]) -> SimState:
    state = state.copy()
    state.inv_mass[np.asarray(ids)] = 0.0
    state.velocities[np.asarray(ids)] = 0.0
    return state


def _release(state: SimState, cs: ConstraintSet, ids: Sequence[int]) -> SimState:
    ids = np.asarray(ids)
    state.inv_mass[ids] = cs.inv_mass[ids]
    return state


def assign_layers(state: SimState, before: np.ndarray, cs: ConstraintSet, config: SimConfig) -> None:
    """Lift the floor of moved cloth lying over unmoved cloth by the layer offset."""
    moved = np.linalg.norm(state.positions - before, axis=1) > config.layer_move_threshold
    if not np.any(moved):
        return
    state.floor[moved] = 0.0
    if np.all(moved):
        return
    still = np.flatnonzero(~moved)
    radius = 1.5 * cs.mean_edge
    nn = NearestNeighbors(radius=radius, algorithm="kd_tree").fit(state.positions[still, :2])
    neighborhoods = nn.radius_neighbors(state.positions[moved, :2], return_distance=False)
    heights = state.positions[still, 2]
    for k, idx in zip(np.flatnonzero(moved), neighborhoods):
        if len(idx):
            state.floor[k] = float(heights[idx].max()) + config.layer_offset


# =============================================================================
# PRIMITIVES
# =============================================================================

def execute_pick_place(
    state: SimState,
    action: Union[PickPlace, DualPickPlace],
    constraints: ConstraintSet,
    config: Optional[SimConfig] = None,
    hook: StepHook = None,
) -> SimState:
    """Lift, translate and lower the grasped particle(s), release and settle.

    Args:
        state: Initial state (not modified)
        action: PickPlace or DualPickPlace
        constraints: Garment constraints
        config: Simulation parameters
        hook: Called with every stepped state (episode recording)

    Returns:
        Settled state (``settled`` False if the step cap was hit)

    Raises:
        SimulationError: Invalid pick ids or a place position below the ground
    """
    config = config or SimConfig()
    if isinstance(action, PickPlace):
        ids = [int(action.pick)]
        places = np.array([action.place], dtype=np.float64)
    else:
        ids = [int(p) for p in action.picks]
        places = np.array(action.places, dtype=np.float64)
    _check_ids(state, ids)
    if np.any(places[:, 2] <= 0):
        raise SimulationError(f"Place positions must be above the ground: {places.tolist()}")

    before = state.positions.copy()
    start = state.positions[ids]
    if np.array_equal(start, places):
        return settle(state.copy(), constraints, config, hook=hook)

    state = _grasp(state, ids)
    height = max(start[:, 2].max(), places[:, 2].max()) + config.lift_height
    lifted = start.copy()
    lifted[:, 2] = height
    above = places.copy()
    above[:, 2] = height
    for targets in (lifted, above, places):
        state = move_grasps(state, constraints, ids, targets, config, hook=hook)
    state = _release(state, constraints, ids)
    assign_layers(state, before, constraints, config)
    return settle(state, constraints, config, hook=hook)


def execute_fling(
    state: SimState,
    action: Fling,
    constraints: ConstraintSet,
    config: Optional[SimConfig] = None,
    hook: StepHook = None,
) -> SimState:
    """Lift two points, stretch them apart, swing forward then back and down, release."""
    config = config or SimConfig()
    ids = [int(p) for p in action.picks]
    _check_ids(state, ids)
    state = _grasp(state, ids)

    start = state.positions[ids].copy()
    lifted = start.copy()
    lifted[:, 2] = config.fling_height
    state = move_grasps(state, constraints, ids, lifted, config, hook=hook)

    rest = constraints.rest_positions[ids]
    span = config.fling_stretch * float(np.linalg.norm(rest[1] - rest[0]))
    mid = lifted.mean(axis=0)
    axis = lifted[1, :2] - lifted[0, :2]
    norm = float(np.linalg.norm(axis))
    axis = axis / norm if norm > 1e-9 else np.array([1.0, 0.0])
    direction = np.array([axis[0], axis[1], 0.0])
    forward = np.array([-axis[1], axis[0], 0.0])

    stretched = np.stack([mid - direction * span / 2, mid + direction * span / 2])
    state = move_grasps(state, constraints, ids, stretched, config, hook=hook)

    swing = forward * config.fling_swing
    state = move_grasps(state, constraints, ids, stretched + swing, config,
                        speed=config.fling_speed, hook=hook)
    back = stretched - swing
    back[:, 2] = config.place_height
    state = move_grasps(state, constraints, ids, back, config,
                        speed=config.fling_speed, hook=hook)

    state = _release(state, constraints, ids)
    state.floor[:] = 0.0
    return settle(state, constraints, config, hook=hook)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix from a normalised Gaussian quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def drop(
    state: SimState,
    constraints: ConstraintSet,
    height: float,
    seed: int = 0,
    config: Optional[SimConfig] = None,
    identity: bool = False,
    hook: StepHook = None,
) -> SimState:
    """Lift the garment rigidly so its lowest point is at ``height``, release and settle.

    Args:
        height: Drop height in [0.1, 1.0] m
        seed: Orientation seed
        identity: Keep the current orientation instead of a random one
    """
    config = config or SimConfig()
    if not 0.1 <= height <= 1.0:
        raise SimulationError(f"Drop height must be in [0.1, 1.0] m, got {height}")
    state = state.copy()
    centre = state.positions.mean(axis=0)
    rotation = np.eye(3) if identity else random_rotation(np.random.default_rng(seed))
    positions = (state.positions - centre) @ rotation.T
    positions[:, 2] += height - positions[:, 2].min()
    positions[:, :2] += centre[:2]
    state.positions = positions
    state.velocities[:] = 0.0
    state.inv_mass = constraints.inv_mass.copy()
    state.floor[:] = 0.0
    return settle(state, constraints, config, hook=hook)


def hang_attempt(
    state: SimState,
    constraints: ConstraintSet,
    pick: int,
    rack: Capsule,
    config: Optional[SimConfig] = None,
    hook: StepHook = None,
) -> HangResult:
    """Carry one point over the rack, lower it on the far side, release and settle.

    Success: after settling some particle is above the bar's centre line and
    the lowest particle is more than 5 cm above the ground.

    Raises:
        SimulationError: Rack not above the ground or below the garment's lowest point
    """
    config = config or SimConfig()
    _check_ids(state, [pick])
    bar_low = min(rack.start[2], rack.end[2]) - rack.radius
    if bar_low <= 0:
        raise SimulationError("Rack must be above the ground")
    if bar_low <= state.positions[:, 2].min():
        raise SimulationError("Rack is below the garment's lowest point")

    colliders = [rack]
    state = _grasp(state, [pick])
    here = state.positions[[pick]].copy()
    nearest = rack.closest(here)[0]
    bar = np.asarray(rack.end, dtype=np.float64) - np.asarray(rack.start, dtype=np.float64)
    across = np.array([-bar[1], bar[0], 0.0])
    norm = float(np.linalg.norm(across))
    across = across / norm if norm > 1e-9 else np.array([0.0, 1.0, 0.0])
    if np.dot(nearest[:2] - here[0, :2], across[:2]) < 0:
        across = -across

    carry = rack.top + config.hang_clearance
    lifted = here.copy()
    lifted[0, 2] = carry
    near = nearest - across * config.hang_clearance
    near[2] = carry
    far = nearest + across * config.hang_clearance
    far[2] = carry
    lowered = far.copy()
    lowered[2] = carry - config.hang_drop
    for target in (lifted, near[None], far[None], lowered[None]):
        state = move_grasps(state, constraints, [pick], target, config,
                            colliders=colliders, hook=hook)

    state = _release(state, constraints, [pick])
    state.floor[:] = 0.0
    state = settle(state, constraints, config, colliders=colliders, hook=hook)
    lowest = float(state.positions[:, 2].min())
    success = bool(np.any(state.positions[:, 2] > rack.top - rack.radius) and lowest > 0.05)
    logger.info("Hang from vertex %d: lowest %.3f m, success=%s", pick, lowest, success)
    return HangResult(success=success, state=state, lowest=lowest)


# =============================================================================
# SELF-PLAY AND INITIAL STATES
# =============================================================================

def sample_self_play_action(
    state: SimState,
    mesh: GarmentMesh,
    rng: np.random.Generator,
    config: SimConfig,
    render: Optional[RenderConfig] = None,
) -> PickPlace:
    """Uniform visible pick vertex, uniform place inside the workspace disk."""
    from modules.percept.render import visible_vertices

    visible = np.flatnonzero(visible_vertices(state, mesh, render=render))
    if not len(visible):
        visible = np.arange(state.particle_count)
    pick = int(visible[rng.integers(len(visible))])
    radius = config.workspace_radius * math.sqrt(rng.uniform())
    angle = rng.uniform(0.0, 2.0 * math.pi)
    place = (radius * math.cos(angle), radius * math.sin(angle), config.place_height)
    return PickPlace(pick=pick, place=place)


def random_self_play(
    state: SimState,
    constraints: ConstraintSet,
    mesh: GarmentMesh,
    k: int,
    seed: int,
    config: Optional[SimConfig] = None,
    render: Optional[RenderConfig] = None,
    hook: StepHook = None,
    actions: Optional[List[ActionPrimitive]] = None,
) -> SimState:
    """Apply k random pick-place actions; deterministic given the seed.

    Args:
        actions: If given, the executed actions are appended to it
    """
    if k < 1:
        raise SimulationError(f"Self-play needs k >= 1, got {k}")
    config = config or SimConfig()
    rng = np.random.default_rng(seed)
    for _ in range(k):
        action = sample_self_play_action(state, mesh, rng, config, render)
        if actions is not None:
            actions.append(action)
        state = execute_pick_place(state, action, constraints, config, hook=hook)
    return state


INITIAL_KINDS = ("flat", "rand", "drop", "fling")


def initial_state(
    mesh: GarmentMesh,
    constraints: ConstraintSet,
    kind: str,
    seed: int,
    config: Optional[SimConfig] = None,
    actions: int = 3,
    drop_height: float = 0.6,
    render: Optional[RenderConfig] = None,
) -> SimState:
    """Starting configurations: flat, rand (k random actions), drop, fling (rand + shoulder fling)."""
    config = config or SimConfig()
    state = SimState.flat(mesh, constraints)
    if kind == "flat":
        return state
    if kind == "rand":
        return random_self_play(state, constraints, mesh, actions, seed, config, render)
    if kind == "drop":
        return drop(state, constraints, drop_height, seed=seed, config=config)
    if kind == "fling":
        state = random_self_play(state, constraints, mesh, actions, seed, config, render)
        names = ("shoulder-L", "shoulder-R") if "shoulder-L" in mesh.landmarks else ("waist-L", "waist-R")
        picks = (mesh.landmarks[names[0]], mesh.landmarks[names[1]])
        return execute_fling(state, Fling(picks=picks), constraints, config)
    raise SimulationError(f"Unknown initial state kind '{kind}' (choose from {', '.join(INITIAL_KINDS)})")
