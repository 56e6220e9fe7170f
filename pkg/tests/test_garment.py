import numpy as np
import pytest
import trimesh

from core.errors import GarmentSpecError
from modules.garment.generator import (
    GarmentSpec,
    analytic_skeleton,
    build_template,
    generate_garment,
    load_garment,
    save_garment,
)
from modules.garment.templates import Category, PartLabel, cell_count, grid_spacing


def test_generation_is_deterministic():
    spec = GarmentSpec(edge_length=0.05, seed=4)
    a, b = generate_garment(spec), generate_garment(spec)
    assert a.mesh_id == b.mesh_id
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.faces, b.faces)


def test_seed_changes_interior_only(top):
    other = generate_garment(GarmentSpec(edge_length=0.05, seed=9))
    assert np.array_equal(top.faces, other.faces)
    assert not np.array_equal(top.vertices, other.vertices)


def test_boundary_vertices_stay_on_grid():
    spec = GarmentSpec(edge_length=0.05, seed=2)
    jittered, plain = generate_garment(spec), generate_garment(GarmentSpec(edge_length=0.05, jitter=0.0))
    edges = np.sort(plain.as_trimesh().edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    rim = np.unique(uniq[counts == 1])
    assert np.allclose(jittered.vertices[rim], plain.vertices[rim])
    assert np.all(jittered.vertices[:, 2] == 0.0)


def test_trouser_vertex_count():
    spec = GarmentSpec(category=Category.TROUSER, edge_length=0.02, leg_length=0.9, jitter=0.0)
    mesh = generate_garment(spec)
    a = grid_spacing(0.02)
    half, height = cell_count(0.25, a), cell_count(0.65, a)
    leg, width = cell_count(0.9, a), cell_count(0.15, a)
    assert (half, height, leg, width) == (14, 37, 51, 9)
    assert mesh.vertex_count == (2 * half + 1) * (height + 1) + 2 * (width + 1) * leg == 2122
    assert len(mesh.faces) == 2 * (2 * half * height + 2 * width * leg)


def test_canonical_area_matches_cells():
    spec = GarmentSpec(category=Category.TROUSER, edge_length=0.05, jitter=0.0)
    template, a = build_template(spec)
    mesh = generate_garment(spec)
    assert mesh.canonical_area == pytest.approx(len(template.cells()) * a * a)


def test_vest_has_no_sleeve_vertices():
    mesh = generate_garment(GarmentSpec(edge_length=0.05, sleeve_length=0.0))
    assert not len(mesh.part_vertices(PartLabel.SLEEVE_L))
    assert not len(mesh.part_vertices(PartLabel.SLEEVE_R))
    assert mesh.landmarks["cuff-L"] == mesh.landmarks["armpit-L"]


def test_every_label_region_is_connected(top):
    edges = top.edges()
    for label in np.unique(top.labels):
        ids = np.flatnonzero(top.labels == label)
        keep = np.isin(edges[:, 0], ids) & np.isin(edges[:, 1], ids)
        components = trimesh.graph.connected_components(edges[keep], nodes=ids)
        assert len(components) == 1


def test_mirrored_spec_swaps_sides():
    spec = GarmentSpec(edge_length=0.05, sleeve_length=0.1, right_sleeve_length=0.2)
    mirrored = spec.mirrored()
    assert mirrored.side(False)["sleeve_length"] == 0.2
    assert mirrored.side(True)["sleeve_length"] == 0.1
    a = generate_garment(spec)
    b = generate_garment(mirrored)
    assert len(a.part_vertices(PartLabel.SLEEVE_L)) == len(b.part_vertices(PartLabel.SLEEVE_R))


def test_resolution_out_of_range():
    with pytest.raises(GarmentSpecError, match="vertices"):
        generate_garment(GarmentSpec(edge_length=0.1))
    with pytest.raises(GarmentSpecError, match="vertices"):
        generate_garment(GarmentSpec(edge_length=0.05), max_vertices=100)


@pytest.mark.parametrize("values", [
    {"body_width": 0.0},
    {"jitter": 0.5},
    {"sleeve_length": -0.1},
    {"category": "trouser", "leg_width": 0.0},
])
def test_invalid_specs(values):
    with pytest.raises(GarmentSpecError):
        GarmentSpec(**values)


def test_analytic_skeleton_follows_landmarks(top):
    skeleton = analytic_skeleton(top)
    assert skeleton.names == top.skeleton_names
    assert np.array_equal(skeleton.keypoints, top.vertices[top.skeleton_indices])
    assert set(np.unique(skeleton.activations)) <= {0.0, 1.0}
    assert skeleton.activation(skeleton.index("collar-L"), skeleton.index("collar-R")) == 1.0


def test_save_and_load(tmp_path, top):
    sidecar = save_garment(top, str(tmp_path))
    loaded = load_garment(sidecar)
    assert loaded.mesh_id == top.mesh_id
    assert np.array_equal(loaded.vertices, top.vertices)
    assert (tmp_path / f"{top.mesh_id}.obj").exists()
