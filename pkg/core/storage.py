"""Binary and file formats: UGMC arrays, JSON manifests, checkpoints, OBJ and PLY.

UGMC layout (little-endian)::

    b"UGMC" | version u32 | kind u32 | count u32 | frames u32 | payload

``kind`` 0 is a trajectory (frames x count x 3 float32 positions), ``kind`` 1 is
an observation (count x 3 float32 points followed by count int32 trace ids).

Checkpoint layout::

    header length u64 | UTF-8 JSON header | float64 parameter vector
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import trimesh

from core.config import config_hash
from core.errors import CheckpointError, ConfigMismatchError

UGMC_MAGIC = b"UGMC"
UGMC_VERSION = 1
KIND_TRAJECTORY = 0
KIND_OBSERVATION = 1
_HEADER = struct.Struct("<4sIIII")

CHECKPOINT_MAGIC = "UGMCKPT"
CHECKPOINT_VERSION = 1


# =============================================================================
# UGMC
# =============================================================================

def write_trajectory(path: str, frames: np.ndarray) -> str:
    """Write a (frames, particles, 3) position array."""
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise ValueError(f"Trajectory must be (frames, particles, 3), got {frames.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(UGMC_MAGIC, UGMC_VERSION, KIND_TRAJECTORY,
                             frames.shape[1], frames.shape[0]))
        f.write(frames.tobytes())
    return str(path)


def write_observation(path: str, points: np.ndarray, trace: np.ndarray) -> str:
    """Write observed points and their vertex trace ids."""
    points = np.ascontiguousarray(points, dtype="<f4")
    trace = np.ascontiguousarray(trace, dtype="<i4")
    if points.shape != (len(trace), 3):
        raise ValueError("points and trace lengths differ")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(UGMC_MAGIC, UGMC_VERSION, KIND_OBSERVATION, len(trace), 1))
        f.write(points.tobytes())
        f.write(trace.tobytes())
    return str(path)


def _read_header(data: bytes, path: str) -> Tuple[int, int, int]:
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated UGMC header")
    magic, version, kind, count, frames = _HEADER.unpack_from(data)
    if magic != UGMC_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != UGMC_VERSION:
        raise CheckpointError(f"{path}: unsupported UGMC version {version}")
    return kind, count, frames


def read_trajectory(path: str) -> np.ndarray:
    data = Path(path).read_bytes()
    kind, count, frames = _read_header(data, path)
    if kind != KIND_TRAJECTORY:
        raise CheckpointError(f"{path}: not a trajectory file")
    expected = _HEADER.size + frames * count * 3 * 4
    if len(data) != expected:
        raise CheckpointError(f"{path}: size {len(data)} != expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return arr.reshape(frames, count, 3).astype(np.float64)


def read_observation(path: str) -> Tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    kind, count, _ = _read_header(data, path)
    if kind != KIND_OBSERVATION:
        raise CheckpointError(f"{path}: not an observation file")
    expected = _HEADER.size + count * 16
    if len(data) != expected:
        raise CheckpointError(f"{path}: size {len(data)} != expected {expected}")
    points = np.frombuffer(data, dtype="<f4", count=count * 3, offset=_HEADER.size)
    trace = np.frombuffer(data, dtype="<i4", count=count, offset=_HEADER.size + count * 12)
    return points.reshape(count, 3).astype(np.float64), trace.astype(np.int64)


# =============================================================================
# MANIFESTS
# =============================================================================

def write_json(path: str, data: Dict[str, Any]) -> str:
    """Write JSON with sorted keys so identical content gives identical bytes."""
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(path)


def read_json(path: str) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_checkpoint(
    path: str,
    vector: np.ndarray,
    kind: str,
    config: Dict[str, Any],
    shapes: Dict[str, Any],
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """Write a parameter vector with its JSON header.

    Args:
        path: Output file
        vector: Flat parameter vector (stored as float64 little-endian)
        kind: Model kind ("descriptor" or "skeleton")
        config: Model config section as a dict (hashed into the header)
        shapes: Parameter name -> shape, in vector order
        extra: Optional additional header fields

    Returns:
        Path written
    """
    vector = np.ascontiguousarray(vector, dtype="<f8").ravel()
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "shapes": shapes,
        "size": int(vector.size),
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(vector.tobytes())
    return str(path)


def load_checkpoint(
    path: str,
    kind: Optional[str] = None,
    config: Optional[Dict[str, Any]] = None,
) -> Tuple[Dict[str, Any], np.ndarray]:
    """Read a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        kind: Expected model kind, if any
        config: Expected config; its hash must match the stored one

    Returns:
        (header, float64 parameter vector)

    Raises:
        CheckpointError: Corrupt or truncated file, or wrong kind
        ConfigMismatchError: Stored config hash differs from ``config``
    """
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (length,) = struct.unpack_from("<Q", data)
    if 8 + length > len(data):
        raise CheckpointError(f"{path}: header length {length} exceeds file size")
    try:
        header = json.loads(data[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e

    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {header.get('kind')}")

    body = data[8 + length:]
    if len(body) != 8 * header.get("size", -1):
        raise CheckpointError(f"{path}: parameter block has {len(body)} bytes, "
                              f"expected {8 * header.get('size', 0)}")
    if config is not None and config_hash(config) != header.get("config_hash"):
        raise ConfigMismatchError(
            f"{path}: checkpoint config {header.get('config')} does not match {config}")
    return header, np.frombuffer(body, dtype="<f8").astype(np.float64)


# =============================================================================
# MESHES AND POINT CLOUDS
# =============================================================================

def export_obj(path: str, vertices: np.ndarray, faces: np.ndarray) -> str:
    """Write a Wavefront OBJ keeping vertex order."""
    mesh = trimesh.Trimesh(vertices=vertices, faces=faces, process=False)
    mesh.export(path, file_type="obj", include_normals=False, include_texture=False)
    return str(path)


def read_obj_counts(path: str) -> Tuple[int, int]:
    """Count `v` and `f` records of an OBJ file."""
    n_v = n_f = 0
    with open(path) as f:
        for line in f:
            if line.startswith("v "):
                n_v += 1
            elif line.startswith("f "):
                n_f += 1
    return n_v, n_f


def export_colored_points(path: str, points: np.ndarray, colors: np.ndarray) -> str:
    """Write a PLY point cloud with per-point RGB (uint8)."""
    rgba = np.concatenate([colors.astype(np.uint8),
                           np.full((len(colors), 1), 255, dtype=np.uint8)], axis=1)
    cloud = trimesh.PointCloud(vertices=points, colors=rgba)
    cloud.export(path, file_type="ply")
    return str(path)
