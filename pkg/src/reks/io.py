"""Header-plus-float32 binary artifacts.

Layout: one line of JSON, a newline, then little-endian float32 data.
"""
from __future__ import annotations

import json

import numpy as np


def write_blob(path, header: dict, arrays: dict[str, np.ndarray]):
    header = dict(header)
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays.items()]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f4")
    arrays, off = {}, 0
    for name, shape in header.get("arrays", []):
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = data[off:off + n].reshape(shape).astype(np.float64)
        off += n
    if off != data.size:
        raise ValueError(f"{path}: {data.size - off} trailing floats")
    return header, arrays


def write_matrix(path, matrix: np.ndarray, **header):
    """Single row-major matrix with a {"rows", "cols", ...} header."""
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        head = {"rows": rows, "cols": cols, **header}
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f4")
    m = data.reshape(header["rows"], header["cols"]).astype(np.float64)
    return header, m
