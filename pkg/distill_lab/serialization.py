"""
Binary containers for networks, datasets and center banks.

Layout (all integers little-endian):

    b"DLAB" | uint8 version | uint8 kind | uint32 header_len | JSON header | payload

The JSON header lists the payload arrays in order as {"name", "shape",
"dtype"}; the payload is the concatenation of their raw little-endian bytes
(float64 or int64, row-major). Networks store every weight matrix before any
bias vector.
"""

import json
import os
import struct
from dataclasses import asdict
from typing import Any, Dict, List, Tuple

import numpy as np

from distill_lab.data import Dataset, SyntheticDatasetSpec
from distill_lab.errors import ConfigError
from distill_lab.losses import CenterBank
from distill_lab.models import MlpNetwork, MlpSpec

MAGIC = b"DLAB"
FORMAT_VERSION = 1
KIND_NETWORK = 1
KIND_DATASET = 2
KIND_CENTERS = 3

_PREAMBLE = struct.Struct("<4sBBI")
_DTYPES = {"float64": "<f8", "int64": "<i8"}


def _write(path: str, kind: int, header: Dict[str, Any], arrays: List[Tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["arrays"] = []
    payload = []
    for name, array in arrays:
        dtype = "int64" if np.issubdtype(array.dtype, np.integer) else "float64"
        data = np.ascontiguousarray(array, dtype=_DTYPES[dtype])
        header["arrays"].append({"name": name, "shape": list(data.shape), "dtype": dtype})
        payload.append(data.tobytes())
    header_bytes = json.dumps(header).encode("utf-8")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, kind, len(header_bytes)))
        f.write(header_bytes)
        for chunk in payload:
            f.write(chunk)


def _read(path: str, kind: int) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}")
    if len(blob) < _PREAMBLE.size:
        raise ConfigError(f"{path} is too short to be a lab container")
    magic, version, file_kind, header_len = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise ConfigError(f"{path} is not a lab container (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path} uses unsupported format version {version}")
    if file_kind != kind:
        raise ConfigError(f"{path} holds container kind {file_kind}, expected {kind}")

    offset = _PREAMBLE.size
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Corrupt header in {path}: {e}")
    offset += header_len

    arrays = {}
    for entry in header.get("arrays", []):
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(blob):
            raise ConfigError(f"{path} is truncated while reading '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(entry["shape"]).copy()
        offset += size
    return header, arrays


def save_network(path: str, net: MlpNetwork) -> None:
    arrays = [(f"weight_{i}", w) for i, w in enumerate(net.weights)]
    arrays += [(f"bias_{i}", b) for i, b in enumerate(net.biases)]
    header = {"spec": {"layer_widths": list(net.spec.layer_widths), "activation": net.spec.activation}}
    _write(path, KIND_NETWORK, header, arrays)


def load_network(path: str) -> MlpNetwork:
    header, arrays = _read(path, KIND_NETWORK)
    spec = MlpSpec(tuple(header["spec"]["layer_widths"]), header["spec"]["activation"])
    weights = [arrays[f"weight_{i}"] for i in range(spec.layer_count)]
    biases = [arrays[f"bias_{i}"] for i in range(spec.layer_count)]
    return MlpNetwork(spec, weights, biases)


def save_dataset(path: str, dataset: Dataset) -> None:
    header = {
        "spec": asdict(dataset.spec),
        "split": {
            "train": dataset.train_indices.tolist(),
            "holdout": dataset.holdout_indices.tolist(),
        },
    }
    arrays = [
        ("inputs", dataset.inputs),
        ("labels", dataset.labels.astype(np.int64)),
        ("latent_directions", dataset.latent_directions),
    ]
    _write(path, KIND_DATASET, header, arrays)


def load_dataset(path: str) -> Dataset:
    header, arrays = _read(path, KIND_DATASET)
    return Dataset(
        spec=SyntheticDatasetSpec(**header["spec"]),
        inputs=arrays["inputs"],
        labels=arrays["labels"],
        latent_directions=arrays["latent_directions"],
        train_indices=np.asarray(header["split"]["train"], dtype=np.int64),
        holdout_indices=np.asarray(header["split"]["holdout"], dtype=np.int64),
    )


def save_center_bank(path: str, bank: CenterBank) -> None:
    _write(path, KIND_CENTERS, {"k": bank.k}, [("centers", bank.centers)])


def load_center_bank(path: str) -> CenterBank:
    header, arrays = _read(path, KIND_CENTERS)
    return CenterBank(arrays["centers"], int(header["k"]))
