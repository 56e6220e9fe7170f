import numpy as np
import pytest
from shapely.geometry import Polygon, box

from modules.garment.generator import GarmentSpec, generate_garment
from modules.sim.state import SimState, build_constraints
from validation.task_metrics import (
    Silhouette,
    coverage_ratio,
    fold_iou,
    passes,
    projected_area,
    silhouette_iou,
)


def rectangle(x0, y0, x1, y1):
    return Silhouette(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]), np.array([[0, 1, 2], [0, 2, 3]]))


def test_kite_area_matches_polygon():
    corners = np.array([[0.0, 0.1], [0.06, 0.0], [0.0, -0.05], [-0.06, 0.0]])
    kite = Silhouette(corners, np.array([[0, 1, 3], [1, 2, 3]]))
    assert projected_area(kite) == pytest.approx(Polygon(corners).area, rel=0.02)


def test_rectangle_iou_matches_polygon():
    a, b = rectangle(0.0, 0.0, 0.2, 0.1), rectangle(0.05, 0.0, 0.25, 0.1)
    pa, pb = box(0.0, 0.0, 0.2, 0.1), box(0.05, 0.0, 0.25, 0.1)
    expected = pa.intersection(pb).area / pa.union(pb).area
    assert silhouette_iou(a, b) == pytest.approx(expected, rel=0.01)
    assert silhouette_iou(a, a) == 1.0


def test_disjoint_iou_is_zero():
    assert silhouette_iou(rectangle(0, 0, 0.1, 0.1), rectangle(0.3, 0.3, 0.4, 0.4)) == 0.0


def test_overlapping_triangles_count_once():
    square = rectangle(0.0, 0.0, 0.1, 0.1)
    doubled = Silhouette(square.vertices, np.vstack([square.faces, square.faces]))
    assert projected_area(doubled) == projected_area(square)


def test_flat_coverage_is_one(top, flat):
    state, _ = flat
    assert coverage_ratio(state, top) == pytest.approx(1.0, abs=0.02)


def test_fold_iou_registers_pose(config):
    vest = generate_garment(GarmentSpec(edge_length=0.05, sleeve_length=0.0))
    state = SimState.flat(vest, build_constraints(vest, config.sim))
    moved = state.copy()
    angle = 0.4
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved.positions[:, :2] = state.positions[:, :2] @ rot.T + (0.2, -0.1)
    assert fold_iou(moved, Silhouette.of_mesh(vest), vest) > 0.95


def test_crumpled_cloth_covers_less(config):
    mesh = generate_garment(GarmentSpec(edge_length=0.05, jitter=0.0))
    state = SimState.flat(mesh, build_constraints(mesh, config.sim))
    state.positions[:, :2] *= 0.5
    assert coverage_ratio(state, mesh) == pytest.approx(0.25, abs=0.02)


def test_passes_is_inclusive():
    assert passes(0.8, 0.8)
    assert not passes(0.79, 0.8)
