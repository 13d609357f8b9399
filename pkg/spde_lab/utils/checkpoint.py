"""
Byte-deterministic checkpoint files

Array container (trajectories, control paths):

    b"SPDT" | uint32 version | uint64 header length | header | payload

The header is UTF-8 JSON with sorted keys holding the metadata and, for
each array in payload order, its name, dtype and shape. The payload is
the raw little-endian bytes of the arrays, concatenated. No timestamps
are written, so equal inputs give byte-identical files.

Field files:

    b"SPDF" | uint32 version | uint32 cutoff | uint32 n | n records

Each record is three int32 wavevector components followed by six
float64 (Re, Im per velocity component). A JSON record form with the same
content is also accepted.
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from ..exceptions import InvalidArgumentError
from ..spectral import SpectralField, build_space, field_from_records, field_records
from ..types import ControlPath, Trajectory

ARRAY_MAGIC = b"SPDT"
FIELD_MAGIC = b"SPDF"
FORMAT_VERSION = 1

PathLike = Union[str, Path]

_RECORD = struct.Struct("<3i6d")


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_to_builtin(item) for item in value]
    if isinstance(value, dict):
        return {str(key): _to_builtin(item) for key, item in value.items()}
    return value


def write_arrays(path: PathLike, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    """Write named arrays and metadata to a container file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    specs = []
    blobs = []
    for name in sorted(arrays):
        array = np.asarray(arrays[name])
        dtype = array.dtype.newbyteorder("<")
        specs.append({"name": name, "dtype": dtype.str, "shape": list(array.shape)})
        blobs.append(np.ascontiguousarray(array, dtype=dtype).tobytes())

    header = json.dumps({"arrays": specs, "meta": _to_builtin(meta)}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(ARRAY_MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    return path


def read_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a container file back into (arrays, meta)"""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ARRAY_MAGIC:
        raise InvalidArgumentError(f"{path} is not a checkpoint container")
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {version}")

    offset = 4 + struct.calcsize("<IQ")
    header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        array = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(spec["shape"])
        arrays[spec["name"]] = array.astype(dtype.newbyteorder("="))
        offset += count * dtype.itemsize
    return arrays, header["meta"]


def write_trajectory(path: PathLike, traj: Trajectory, steps_done: Optional[int] = None, meta: Optional[Dict] = None) -> Path:
    """
    Checkpoint a (possibly partial) trajectory

    steps_done marks how many steps of the preallocated grid are final;
    a resumed run continues from there with the stored increments.
    """
    arrays = {"times": traj.times, "states": traj.states, "increments": traj.increments}
    if traj.variation is not None:
        arrays["variation"] = traj.variation
    if traj.convolution is not None:
        arrays["convolution"] = traj.convolution
    header = {
        "kind": "trajectory",
        "cutoff": traj.space.cutoff,
        "seed": traj.seed,
        "key": list(traj.key),
        "steps_done": traj.n_steps if steps_done is None else int(steps_done),
    }
    header.update(meta or {})
    logger.debug(f"Writing trajectory checkpoint {path} (steps_done={header['steps_done']})")
    return write_arrays(path, arrays, header)


def read_trajectory(path: PathLike) -> Tuple[Trajectory, Dict[str, Any]]:
    """Load a trajectory checkpoint; returns the trajectory and its metadata"""
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "trajectory":
        raise InvalidArgumentError(f"{path} does not hold a trajectory")
    traj = Trajectory(
        space=build_space(meta["cutoff"]),
        times=arrays["times"],
        states=arrays["states"],
        increments=arrays["increments"],
        variation=arrays.get("variation"),
        convolution=arrays.get("convolution"),
        seed=meta.get("seed"),
        key=tuple(meta.get("key", ())),
    )
    return traj, meta


def write_control(path: PathLike, cp: ControlPath) -> Path:
    arrays = {"times": cp.times, "xbar": cp.xbar, "gbar": cp.gbar}
    meta = {
        "kind": "control",
        "cutoff": cp.space.cutoff,
        "T_star": cp.T_star,
        "T": cp.T,
        "dt": cp.dt,
        "n_star": cp.n_star,
        "R": cp.R,
    }
    return write_arrays(path, arrays, meta)


def read_control(path: PathLike) -> ControlPath:
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "control":
        raise InvalidArgumentError(f"{path} does not hold a control path")
    return ControlPath(
        space=build_space(meta["cutoff"]),
        T_star=meta["T_star"],
        T=meta["T"],
        dt=meta["dt"],
        n_star=meta["n_star"],
        times=arrays["times"],
        xbar=arrays["xbar"],
        gbar=arrays["gbar"],
        R=meta["R"],
    )


def write_field(path: PathLike, field: SpectralField) -> Path:
    """Write a field in the binary record layout, or as JSON when the suffix is .json"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = field_records(field)
    if path.suffix == ".json":
        path.write_text(json.dumps({"cutoff": field.space.cutoff, "records": records}, sort_keys=True))
        return path
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, field.space.cutoff, len(records)))
        for record in records:
            f.write(_RECORD.pack(*(int(v) for v in record[:3]), *record[3:]))
    return path


def read_field(path: PathLike) -> SpectralField:
    """Read a field written by write_field, in either layout"""
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"field file {path} does not exist")
    data = path.read_bytes()
    if data[:4] != FIELD_MAGIC:
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise InvalidArgumentError(f"{path} is neither a binary nor a JSON field file: {e}")
        return field_from_records(int(doc["cutoff"]), doc["records"])

    version, cutoff, n = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported field version {version}")
    offset = 4 + struct.calcsize("<III")
    records = [_RECORD.unpack_from(data, offset + i * _RECORD.size) for i in range(n)]
    return field_from_records(cutoff, records)
