"""Reading and writing LiDAR scans and per-point label files.

Supported on-disk layout (the KITTI convention, used here for every
dataset style):

* scan (``.bin``): consecutive little-endian ``float32`` quadruples
  ``(x, y, z, intensity)``, 16 bytes per point.
* labels (``.label``): one little-endian ``uint32`` word per point.
  The low 16 bits hold the semantic class id; the high 16 bits carry an
  instance id that is preserved on round-trip but otherwise ignored.

All containers are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .configfile import read_keyvalue
from .errors import FormatError, ValidationError

POINT_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4
CLASS_ID_MASK = 0xFFFF


class PointCloud:
    """A LiDAR scan: N points of (x, y, z, intensity) as float32.

    Coordinates are meters, intensity is the sensor remission value
    (non-negative; raw sensors may exceed 1).
    """

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray, validate: bool = True):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] != 4:
            raise ValidationError(f"point cloud must be (N, 4), got shape {data.shape}")
        data.setflags(write=False)
        self._data = data
        if validate:
            self.validate()

    @classmethod
    def from_xyz(cls, xyz: np.ndarray, intensity: np.ndarray | float = 0.0,
                 validate: bool = True) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float32)
        data = np.empty((xyz.shape[0], 4), dtype=np.float32)
        data[:, :3] = xyz
        data[:, 3] = intensity
        return cls(data, validate=validate)

    def validate(self) -> None:
        bad = ~np.isfinite(self._data).all(axis=1)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"non-finite value at point index {idx}")
        neg = self._data[:, 3] < 0
        if neg.any():
            idx = int(np.flatnonzero(neg)[0])
            raise ValidationError(f"negative intensity at point index {idx}")

    @property
    def data(self) -> np.ndarray:
        """The raw (N, 4) float32 array (read-only)."""
        return self._data

    @property
    def xyz(self) -> np.ndarray:
        return self._data[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self._data[:, 3]

    @property
    def count(self) -> int:
        return self._data.shape[0]

    def __len__(self) -> int:
        return self.count

    def take(self, indices: np.ndarray) -> "PointCloud":
        """Select points by index, preserving exact float bits."""
        return PointCloud(self._data[np.asarray(indices)], validate=False)

    def tobytes(self) -> bytes:
        return self._data.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.tobytes() == other.tobytes()


class LabelArray:
    """Per-point label words; low 16 bits are the semantic class id."""

    __slots__ = ("_words",)

    def __init__(self, words: np.ndarray):
        words = np.ascontiguousarray(words, dtype=np.uint32)
        if words.ndim != 1:
            raise ValidationError(f"labels must be 1-D, got shape {words.shape}")
        words.setflags(write=False)
        self._words = words

    @classmethod
    def from_class_ids(cls, class_ids: np.ndarray) -> "LabelArray":
        ids = np.asarray(class_ids)
        if ids.size and (ids.min() < 0 or ids.max() > CLASS_ID_MASK):
            raise ValidationError("class ids must fit in 16 bits")
        return cls(ids.astype(np.uint32))

    @property
    def words(self) -> np.ndarray:
        return self._words

    @property
    def class_ids(self) -> np.ndarray:
        return self._words & CLASS_ID_MASK

    @property
    def instance_ids(self) -> np.ndarray:
        return self._words >> 16

    @property
    def count(self) -> int:
        return self._words.shape[0]

    def __len__(self) -> int:
        return self.count

    def take(self, indices: np.ndarray) -> "LabelArray":
        return LabelArray(self._words[np.asarray(indices)])

    def tobytes(self) -> bytes:
        return self._words.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelArray):
            return NotImplemented
        return self.tobytes() == other.tobytes()


@dataclass(frozen=True)
class SensorConfig:
    """Geometry of a spinning LiDAR sensor for range-image projection.

    ``fov_up_deg`` and ``fov_down_deg`` are the upward and downward
    inclination extents as positive magnitudes in degrees; the total
    vertical field of view is their sum.
    """

    beams: int
    width: int
    fov_up_deg: float
    fov_down_deg: float
    max_insert_radius_m: float = 50.0

    def __post_init__(self):
        if self.beams <= 0 or self.width <= 0:
            raise ValidationError("beams and width must be positive")
        if self.fov_rad <= 0:
            raise ValidationError("total vertical field of view must be positive")
        if self.max_insert_radius_m <= 0:
            raise ValidationError("max_insert_radius_m must be positive")

    @property
    def fov_up_rad(self) -> float:
        return float(np.deg2rad(self.fov_up_deg))

    @property
    def fov_down_rad(self) -> float:
        return float(np.deg2rad(self.fov_down_deg))

    @property
    def fov_rad(self) -> float:
        return abs(self.fov_up_rad + self.fov_down_rad)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "SensorConfig":
        """Load from a key-value file with keys: beams, width, fov_up_deg,
        fov_down_deg, max_insert_radius_m."""
        raw = read_keyvalue(path)
        try:
            return cls(
                beams=int(raw["beams"]),
                width=int(raw["width"]),
                fov_up_deg=float(raw["fov_up_deg"]),
                fov_down_deg=float(raw["fov_down_deg"]),
                max_insert_radius_m=float(raw.get("max_insert_radius_m", 50.0)),
            )
        except KeyError as exc:
            raise FormatError(f"{path}: missing sensor config key {exc.args[0]!r}") from None


def read_scan(path: str | os.PathLike) -> PointCloud:
    """Read a ``.bin`` scan file.

    Raises FormatError when the byte length is not a multiple of 16
    (reporting the offset of the first incomplete record) and
    ValidationError on non-finite values.
    """
    raw = Path(path).read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        offset = len(raw) - (len(raw) % POINT_RECORD_BYTES)
        raise FormatError(
            f"{path}: truncated scan, {len(raw)} bytes is not a multiple of "
            f"{POINT_RECORD_BYTES}; incomplete record starts at byte offset {offset}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(data)


def write_scan(cloud: PointCloud, path: str | os.PathLike) -> None:
    """Write a scan; read_scan(write_scan(c)) reproduces c bit-exactly."""
    cloud.validate()
    Path(path).write_bytes(cloud.data.astype("<f4", copy=False).tobytes())


def read_labels(path: str | os.PathLike) -> LabelArray:
    """Read a ``.label`` file of little-endian uint32 words."""
    raw = Path(path).read_bytes()
    if len(raw) % LABEL_RECORD_BYTES != 0:
        offset = len(raw) - (len(raw) % LABEL_RECORD_BYTES)
        raise FormatError(
            f"{path}: truncated label file, {len(raw)} bytes is not a multiple of "
            f"{LABEL_RECORD_BYTES}; incomplete record starts at byte offset {offset}"
        )
    return LabelArray(np.frombuffer(raw, dtype="<u4"))


def write_labels(labels: LabelArray, path: str | os.PathLike) -> None:
    Path(path).write_bytes(labels.words.astype("<u4", copy=False).tobytes())


def check_pair(cloud: PointCloud, labels: LabelArray) -> None:
    """Reject a scan/label pair whose lengths disagree."""
    if cloud.count != labels.count:
        raise ValidationError(
            f"scan has {cloud.count} points but labels have {labels.count} entries"
        )
