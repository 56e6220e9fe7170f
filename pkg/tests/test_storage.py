import struct

import numpy as np
import pytest

from core.config import DescriptorConfig
from core.errors import CheckpointError, ConfigMismatchError
from core.storage import (
    export_obj,
    load_checkpoint,
    read_obj_counts,
    read_observation,
    read_trajectory,
    save_checkpoint,
    write_observation,
    write_trajectory,
)
from modules.descriptor.network import build_model, load_model, save_model

TINY = DescriptorConfig(feature_dim=4, encoder_width=4, stage_widths=(4, 4), head_width=4, neighbors=4)


def test_checkpoint_round_trip(tmp_path):
    model = build_model(TINY, seed=3)
    path = save_model(model, str(tmp_path / "m.ckpt"), extra={"seed": 3})
    loaded = load_model(path, TINY)
    assert np.array_equal(loaded.flat_parameters(), model.flat_parameters())
    header, _ = load_checkpoint(path)
    assert header["extra"] == {"seed": 3}
    assert header["kind"] == "descriptor"


def test_checkpoint_config_mismatch(tmp_path):
    path = save_model(build_model(TINY), str(tmp_path / "m.ckpt"))
    other = DescriptorConfig(feature_dim=8, encoder_width=4, stage_widths=(4, 4), head_width=4, neighbors=4)
    with pytest.raises(ConfigMismatchError):
        load_model(path, other)


def test_checkpoint_wrong_kind(tmp_path):
    path = save_model(build_model(TINY), str(tmp_path / "m.ckpt"))
    with pytest.raises(CheckpointError, match="expected a skeleton"):
        load_checkpoint(path, kind="skeleton")


def test_checkpoint_corrupt_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(struct.pack("<Q", 5) + b"{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_checkpoint_truncated_body(tmp_path):
    path = save_checkpoint(str(tmp_path / "v.ckpt"), np.arange(4.0), "descriptor", {}, {})
    data = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(data[:-8])
    with pytest.raises(CheckpointError, match="parameter block"):
        load_checkpoint(path)


def test_observation_file(tmp_path):
    points = np.random.default_rng(0).normal(size=(10, 3))
    trace = np.arange(10)[::-1]
    path = write_observation(str(tmp_path / "o.ugmc"), points, trace)
    got_points, got_trace = read_observation(path)
    assert np.array_equal(got_trace, trace)
    assert np.allclose(got_points, points.astype(np.float32))


def test_observation_wrong_kind(tmp_path):
    path = write_trajectory(str(tmp_path / "t.ugmc"), np.zeros((2, 5, 3)))
    assert read_trajectory(path).shape == (2, 5, 3)
    with pytest.raises(CheckpointError):
        read_observation(path)


def test_trajectory_shape_checked(tmp_path):
    with pytest.raises(ValueError):
        write_trajectory(str(tmp_path / "t.ugmc"), np.zeros((5, 3)))


def test_obj_counts(tmp_path):
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    faces = np.array([[0, 1, 3], [0, 3, 2]])
    path = export_obj(str(tmp_path / "q.obj"), vertices, faces)
    assert read_obj_counts(path) == (4, 2)
