"""
File formats: JSON documents, CSV matrices, binary matrices with a JSON header, JSON-lines
"""
import json
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel

from utils.exceptions import DimensionMismatchError

ModelT = TypeVar("ModelT", bound=BaseModel)

CSV_FORMAT = "%.17g"


def write_document(path: Path, document: BaseModel) -> None:
    """Pretty-printed pydantic document, stable key order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2) + "\n")


def read_document(path: Path, model: Type[ModelT]) -> ModelT:
    return model.model_validate_json(Path(path).read_text())


def write_json(path: Path, payload: Mapping) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    """Plain numeric CSV, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(matrix), fmt=CSV_FORMAT, delimiter=",")


def read_matrix_csv(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(Path(path), delimiter=",", ndmin=2))


def write_matrices(directory: Path, name: str, arrays: Mapping[str, np.ndarray], meta: Optional[Mapping] = None) -> None:
    """
    <name>.json header + <name>.bin payload.

    Header: {"arrays": {key: {"shape": [...], "offset": bytes, "dtype": "<f8"}}, "meta": {...}}
    Payload: arrays concatenated as little-endian float64, C order, in header key order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header: Dict[str, dict] = {}
    offset = 0
    with open(directory / f"{name}.bin", "wb") as handle:
        for key, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            header[key] = {"shape": list(data.shape), "offset": offset, "dtype": "<f8"}
            handle.write(data.tobytes(order="C"))
            offset += data.nbytes
    write_json(directory / f"{name}.json", {"arrays": header, "meta": dict(meta or {})})


def read_matrices(directory: Path, name: str) -> Tuple[Dict[str, np.ndarray], dict]:
    directory = Path(directory)
    header = read_json(directory / f"{name}.json")
    raw = (directory / f"{name}.bin").read_bytes()
    arrays = {}
    for key, entry in header["arrays"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype=entry["dtype"], count=count, offset=entry["offset"])
        if data.size != count:
            raise DimensionMismatchError(f"{name}.bin is truncated at array {key}")
        arrays[key] = data.reshape(shape).astype(float)
    return arrays, header.get("meta", {})


def write_jsonl(path: Path, records: Iterable[BaseModel]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for record in records:
            handle.write(record.model_dump_json() + "\n")
