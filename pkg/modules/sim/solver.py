"""Position-based-dynamics step.

One step: gravity on free particles, damping of non-rigid motion,
position prediction, Gauss-Seidel projection of stretch then bending
constraints (vectorised per colour) then tethers to pinned particles,
collisions (capsules, then ground with friction), velocity update from the
position delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from core.config import SimConfig
from core.errors import SimulationError
from modules.sim.state import ConstraintSet, SimState

_EPS = 1e-12


@dataclass(frozen=True)
class Capsule:
    """Segment collider with a radius (the hanging rack)."""
    start: tuple
    end: tuple
    radius: float
    friction: float = 1.0

    @property
    def top(self) -> float:
        return min(self.start[2], self.end[2]) + self.radius

    def closest(self, points: np.ndarray) -> np.ndarray:
        a = np.asarray(self.start, dtype=np.float64)
        b = np.asarray(self.end, dtype=np.float64)
        ab = b - a
        t = np.clip((points - a) @ ab / max(ab @ ab, _EPS), 0.0, 1.0)
        return a + t[:, None] * ab[None, :]

    def project(self, predicted: np.ndarray, previous: np.ndarray, free: np.ndarray) -> None:
        """Push free particles out of the capsule and apply friction in place."""
        q = self.closest(predicted)
        d = predicted - q
        dist = np.linalg.norm(d, axis=1)
        hit = free & (dist < self.radius)
        if not np.any(hit):
            return
        normal = np.zeros_like(d[hit])
        ok = dist[hit] > _EPS
        normal[ok] = d[hit][ok] / dist[hit][ok, None]
        normal[~ok] = (0.0, 0.0, 1.0)
        predicted[hit] = q[hit] + normal * self.radius
        delta = predicted[hit] - previous[hit]
        tangential = delta - np.sum(delta * normal, axis=1, keepdims=True) * normal
        predicted[hit] -= self.friction * tangential


def effective_stiffness(k: float, iterations: int) -> float:
    """Per-sweep stiffness giving overall stiffness k after ``iterations`` sweeps."""
    return 1.0 - (1.0 - k) ** (1.0 / iterations)


def project_distance(p: np.ndarray, w: np.ndarray, pairs: np.ndarray,
                     rest: np.ndarray, stiffness: float) -> None:
    """Project one colour of distance constraints in place.

    Pairs of one colour share no particle, so the scatter below is exactly
    a sequential projection.
    """
    i, j = pairs[:, 0], pairs[:, 1]
    d = p[j] - p[i]
    length = np.linalg.norm(d, axis=1)
    wsum = w[i] + w[j]
    ok = (length > _EPS) & (wsum > 0)
    if not np.any(ok):
        return
    i, j, d, length, wsum = i[ok], j[ok], d[ok], length[ok], wsum[ok]
    n = d / length[:, None]
    s = (stiffness * (length - rest[ok]) / wsum)[:, None] * n
    p[i] += w[i][:, None] * s
    p[j] -= w[j][:, None] * s


def project_tethers(p: np.ndarray, w: np.ndarray, constraints: ConstraintSet) -> None:
    """Pull free particles back inside their rest geodesic of every pinned particle."""
    if constraints.tethers is None:
        return
    free = w > 0
    pinned = np.flatnonzero(~free)
    if not len(pinned) or not np.any(free):
        return
    for source in pinned.tolist():
        bound = constraints.tethers.distances(source)
        d = p - p[source]
        length = np.linalg.norm(d, axis=1)
        over = free & (length > bound)
        if np.any(over):
            p[over] = p[source] + d[over] * (bound[over] / length[over])[:, None]


def damp_velocities(x: np.ndarray, v: np.ndarray, w: np.ndarray, k: float) -> np.ndarray:
    """Blend velocities toward their rigid-body part (linear + angular)."""
    free = w > 0
    if k <= 0 or np.count_nonzero(free) < 2:
        return v
    m = 1.0 / w[free]
    xf, vf = x[free], v[free]
    total = m.sum()
    x_cm = (m[:, None] * xf).sum(axis=0) / total
    v_cm = (m[:, None] * vf).sum(axis=0) / total
    r = xf - x_cm
    angular = (m[:, None] * np.cross(r, vf)).sum(axis=0)
    rr = np.einsum("ni,ni->n", r, r)
    inertia = (m * rr).sum() * np.eye(3) - np.einsum("n,ni,nj->ij", m, r, r)
    omega = np.linalg.pinv(inertia) @ angular
    rigid = v_cm + np.cross(omega, r)
    out = v.copy()
    out[free] = vf + k * (rigid - vf)
    return out


def step(
    state: SimState,
    constraints: ConstraintSet,
    dt: Optional[float] = None,
    iterations: Optional[int] = None,
    config: Optional[SimConfig] = None,
    colliders: Sequence[Capsule] = (),
    residual_log: Optional[List[float]] = None,
) -> SimState:
    """Advance one PBD step.

    Args:
        state: Current state (not modified)
        constraints: Constraint set of the same garment
        dt: Step size in seconds, (0, 0.02] (default config.dt)
        iterations: Projection sweeps, >= 1 (default config.iterations)
        config: Simulation parameters
        colliders: Capsule colliders
        residual_log: If given, the stretch residual after every sweep is appended

    Returns:
        New SimState; pinned particles (inverse mass 0) keep their positions

    Raises:
        SimulationError: Bad parameters or non-finite input state
    """
    config = config or SimConfig()
    dt = config.dt if dt is None else dt
    iterations = config.iterations if iterations is None else iterations
    if not 0 < dt <= 0.02:
        raise SimulationError(f"dt must be in (0, 0.02], got {dt}")
    if iterations < 1:
        raise SimulationError(f"iterations must be >= 1, got {iterations}")
    if state.particle_count != constraints.particle_count:
        raise SimulationError(
            f"State has {state.particle_count} particles, constraints {constraints.particle_count}")
    state.check_finite()

    x = state.positions
    w = state.inv_mass
    free = w > 0

    v = state.velocities.copy()
    v[free, 2] += config.gravity * dt
    v = damp_velocities(x, v, w, config.damping)

    p = x.copy()
    p[free] += v[free] * dt

    k_stretch = effective_stiffness(constraints.stretch_stiffness, iterations)
    k_bend = effective_stiffness(constraints.bend_stiffness, iterations)
    for _ in range(iterations):
        for color in constraints.stretch_colors:
            project_distance(p, w, constraints.stretch[color], constraints.stretch_rest[color], k_stretch)
        if k_bend > 0:
            for color in constraints.bend_colors:
                project_distance(p, w, constraints.bend[color], constraints.bend_rest[color], k_bend)
        project_tethers(p, w, constraints)
        if residual_log is not None:
            residual_log.append(constraints.stretch_residual(p))

    for collider in colliders:
        collider.project(p, x, free)

    below = free & (p[:, 2] < state.floor)
    if np.any(below):
        p[below, 2] = state.floor[below]
        slide = p[below, :2] - x[below, :2]
        p[below, :2] = x[below, :2] + (1.0 - config.ground_friction) * slide

    new_v = np.zeros_like(v)
    new_v[free] = (p[free] - x[free]) / dt
    if not np.all(np.isfinite(p)):
        raise SimulationError("Projection produced non-finite positions")

    return SimState(
        positions=p,
        velocities=new_v,
        inv_mass=w.copy(),
        mesh_id=state.mesh_id,
        time=state.time + dt,
        settled=state.settled,
        floor=state.floor.copy(),
    )
