"""Activation dump I/O: NPY v1.0 files, JSON manifests, and matricization.

A dump is a directory with one JSON manifest and one NPY file per
(layer, sample) pair. All tensors are converted to float64 on load; the SVD
work downstream is too fragile at float32 because the nuclear-norm changes
being measured can be small relative to the norm itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.lib.format as npy_format

from .errors import ManifestError, NonFiniteValueError, NpyFormatError, ShapeMismatchError

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class LayerEntry:
    """One layer's shape and file naming rule inside a dump manifest."""

    layer_id: str
    c: int
    h: int
    w: int
    file_pattern: str

    def __post_init__(self):
        if min(self.c, self.h, self.w) < 1:
            raise ManifestError(f"layer {self.layer_id!r}: c, h, w must all be >= 1")
        if "{layer}" not in self.file_pattern and "{sample}" not in self.file_pattern:
            raise ManifestError(
                f"layer {self.layer_id!r}: file_pattern must use {{layer}} and/or {{sample}}"
            )

    def sample_file(self, sample_id: int) -> str:
        return self.file_pattern.format(layer=self.layer_id, sample=sample_id)


@dataclass(frozen=True)
class DumpManifest:
    """Static description of an activation dump: layers, shapes, sample count."""

    model_name: str
    layers: tuple[LayerEntry, ...]
    num_samples: int
    dtype: str
    capture_point: str = "unspecified"

    def __post_init__(self):
        if self.num_samples < 1:
            raise ManifestError("num_samples must be >= 1")
        if self.dtype not in DTYPES:
            raise ManifestError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        ids = [e.layer_id for e in self.layers]
        if len(ids) != len(set(ids)):
            raise ManifestError("layer_ids must be unique")
        if not self.layers:
            raise ManifestError("manifest must list at least one layer")

    def layer(self, layer_id: str) -> LayerEntry:
        for e in self.layers:
            if e.layer_id == layer_id:
                return e
        raise ManifestError(f"layer {layer_id!r} not in manifest")

    def layer_ids(self) -> list[str]:
        return [e.layer_id for e in self.layers]

    def sample_path(self, root: Path | str, layer_id: str, sample_id: int) -> Path:
        return Path(root) / self.layer(layer_id).sample_file(sample_id)

    def to_json(self) -> dict:
        return {
            "model_name": self.model_name,
            "num_samples": self.num_samples,
            "dtype": self.dtype,
            "capture_point": self.capture_point,
            "layers": [
                {"layer_id": e.layer_id, "c": e.c, "h": e.h, "w": e.w,
                 "file_pattern": e.file_pattern}
                for e in self.layers
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DumpManifest":
        try:
            layers = tuple(
                LayerEntry(d["layer_id"], int(d["c"]), int(d["h"]), int(d["w"]),
                           d["file_pattern"])
                for d in obj["layers"]
            )
            return cls(
                model_name=obj["model_name"],
                layers=layers,
                num_samples=int(obj["num_samples"]),
                dtype=obj["dtype"],
                capture_point=obj.get("capture_point", "unspecified"),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest JSON missing or malformed field: {exc}") from exc

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "DumpManifest":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json(obj)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMapSet:
    """One layer's activations for one input sample, shape (c, h, w), float64."""

    layer_id: str
    sample_id: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.ascontiguousarray(self.data, dtype=np.float64)
        if a.ndim != 3 or min(a.shape) < 1:
            raise ShapeMismatchError(
                f"layer {self.layer_id!r} sample {self.sample_id}: expected a (c, h, w) "
                f"tensor with positive dims, got shape {a.shape}"
            )
        if not np.isfinite(a).all():
            raise NonFiniteValueError(
                f"layer {self.layer_id!r} sample {self.sample_id}: "
                "activation tensor contains NaN or Inf"
            )
        object.__setattr__(self, "data", _freeze(a))

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ActivationMatrix:
    """Matricized feature maps: row i is the row-major flattening of channel i."""

    layer_id: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.ascontiguousarray(self.data, dtype=np.float64)
        if a.ndim != 2 or min(a.shape) < 1:
            raise ShapeMismatchError(
                f"layer {self.layer_id!r}: expected a 2-D (c, h*w) matrix, got shape {a.shape}"
            )
        if not np.isfinite(a).all():
            raise NonFiniteValueError(f"layer {self.layer_id!r}: matrix contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def matricize(fms: FeatureMapSet) -> ActivationMatrix:
    """Flatten a (c, h, w) tensor into a (c, h*w) matrix, row-major per channel."""
    return ActivationMatrix(fms.layer_id, fms.data.reshape(fms.c, fms.h * fms.w))


def dematricize(m: ActivationMatrix, h: int, w: int, sample_id: int = 0) -> FeatureMapSet:
    """Inverse of :func:`matricize` for the given spatial shape."""
    if h * w != m.cols:
        raise ShapeMismatchError(
            f"layer {m.layer_id!r}: cannot reshape {m.cols} columns into {h}x{w}"
        )
    return FeatureMapSet(m.layer_id, sample_id, m.data.reshape(m.rows, h, w))


def read_npy(path: Path | str) -> np.ndarray:
    """Read an NPY v1.0 file. Rejects v2+ headers, Fortran order, and non-float dtypes."""
    path = Path(path)
    with path.open("rb") as fp:
        magic = fp.read(6)
        if magic != b"\x93NUMPY":
            raise NpyFormatError(f"{path}: not an NPY file (bad magic {magic!r})")
        version = fp.read(2)
        if len(version) != 2:
            raise NpyFormatError(f"{path}: truncated NPY header")
        major, minor = version[0], version[1]
        if (major, minor) != (1, 0):
            raise NpyFormatError(
                f"{path}: NPY version {major}.{minor} not supported, only v1.0"
            )
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(fp)
        except ValueError as exc:
            raise NpyFormatError(f"{path}: malformed NPY v1.0 header: {exc}") from exc
        if fortran_order:
            raise NpyFormatError(f"{path}: Fortran-order arrays are not supported")
        if dtype.kind != "f" or dtype.itemsize not in (4, 8):
            raise NpyFormatError(f"{path}: dtype {dtype} not supported (need f32/f64)")
        if dtype.byteorder == ">":
            raise NpyFormatError(f"{path}: big-endian data not supported")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.fromfile(fp, dtype=dtype, count=count)
        if data.size != count:
            raise NpyFormatError(f"{path}: truncated data ({data.size} of {count} items)")
        return data.reshape(shape)


def write_npy(path: Path | str, array: np.ndarray, dtype: str = "f64") -> None:
    """Write ``array`` as a little-endian C-order NPY v1.0 file at the given dtype."""
    out = np.ascontiguousarray(array, dtype=DTYPES[dtype])
    with Path(path).open("wb") as fp:
        npy_format.write_array(fp, out, version=(1, 0))


def load_feature_maps(
    path: Path | str, manifest: DumpManifest, layer_id: str, sample_id: int
) -> FeatureMapSet:
    """Load one sample's feature maps and validate them against the manifest."""
    entry = manifest.layer(layer_id)
    arr = read_npy(path)
    expected = (entry.c, entry.h, entry.w)
    if arr.shape != expected:
        raise ShapeMismatchError(
            f"layer {layer_id!r} sample {sample_id}: file {path} has shape "
            f"{arr.shape}, manifest declares {expected}"
        )
    return FeatureMapSet(layer_id, sample_id, arr)


def load_sample(
    root: Path | str, manifest: DumpManifest, layer_id: str, sample_id: int
) -> FeatureMapSet:
    """Resolve the file for (layer, sample) via the manifest pattern and load it."""
    return load_feature_maps(
        manifest.sample_path(root, layer_id, sample_id), manifest, layer_id, sample_id
    )


def write_feature_maps(fms: FeatureMapSet, path: Path | str, dtype: str = "f64") -> None:
    """Store a feature-map set as NPY v1.0, creating parent directories as needed."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    write_npy(p, fms.data, dtype=dtype)
