"""File formats: SSOTMAT1 binary matrices, point-cloud CSV, metric/trace CSV.

SSOTMAT1 record layout (little-endian):

    bytes 0..7    magic "SSOTMAT1"
    bytes 8..15   uint64 number of rows
    bytes 16..23  uint64 number of columns
    bytes 24..    rows*cols float64 values in column-major order

A file may hold several consecutive records (e.g. network parameters).

Point-cloud CSV: header row ``f0,...,f{d-1}[,label]``, one row per atom,
comma separator, '.' decimal point, LF line endings. Floats are written
with repr-precision so a save/load round trip is bit-exact for float64.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSOTMAT1"
_HEADER = struct.Struct("<8sQQ")


def _write_record(fh, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"SSOTMAT1 stores 2-D matrices, got shape {arr.shape}")
    fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
    fh.write(np.asfortranarray(arr).tobytes(order="F"))


def _read_record(fh) -> np.ndarray | None:
    header = fh.read(_HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise ValueError("truncated SSOTMAT1 header")
    magic, rows, cols = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw = fh.read(rows * cols * 8)
    if len(raw) < rows * cols * 8:
        raise ValueError("truncated SSOTMAT1 payload")
    flat = np.frombuffer(raw, dtype="<f8")
    return flat.reshape((rows, cols), order="F").copy()


def save_matrices(path, arrays) -> None:
    with open(path, "wb") as fh:
        for arr in arrays:
            _write_record(fh, arr)


def load_matrices(path) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        while (arr := _read_record(fh)) is not None:
            out.append(arr)
    return out


def save_matrix(path, arr) -> None:
    save_matrices(path, [arr])


def load_matrix(path) -> np.ndarray:
    arrays = load_matrices(path)
    if len(arrays) != 1:
        raise ValueError(f"expected exactly one record in {path}, found {len(arrays)}")
    return arrays[0]


def save_points_binary(path, points, labels=None) -> None:
    """Point cloud as SSOTMAT1 records: the (n, d) points matrix, then an
    optional (n, 1) label matrix (integers stored as float64)."""
    points = np.asarray(points, dtype=np.float64)
    arrays = [points]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (points.shape[0],):
            raise ValueError("labels length must match the number of points")
        arrays.append(labels.astype(np.float64)[:, None])
    save_matrices(path, arrays)


def load_points_binary(path) -> tuple[np.ndarray, np.ndarray | None]:
    arrays = load_matrices(path)
    if len(arrays) not in (1, 2):
        raise ValueError(f"expected 1 or 2 records in {path}, found {len(arrays)}")
    points = arrays[0]
    labels = None
    if len(arrays) == 2:
        raw = arrays[1]
        if raw.shape != (points.shape[0], 1):
            raise ValueError(f"label record has shape {raw.shape}, expected ({points.shape[0]}, 1)")
        labels = raw[:, 0].astype(np.int64)
        if not np.array_equal(raw[:, 0], labels):
            raise ValueError("label record holds non-integer values")
    return points, labels


def save_points_csv(path, points, labels=None) -> None:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (points.shape[0],):
            raise ValueError("labels length must match the number of points")
    d = points.shape[1]
    header = [f"f{k}" for k in range(d)] + (["label"] if labels is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(points.shape[0]):
            row = [repr(float(x)) for x in points[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


def load_points_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty file")
        has_label = header[-1].strip().lower() == "label"
        d = len(header) - (1 if has_label else 0)
        if d < 1:
            raise ValueError(f"{path}: no feature columns")
        points, labels = [], []
        for row in reader:
            if not row:
                continue
            points.append([float(x) for x in row[:d]])
            if has_label:
                labels.append(int(row[d]))
    if not points:
        raise ValueError(f"{path}: no data rows")
    pts = np.asarray(points, dtype=np.float64)
    return pts, (np.asarray(labels, dtype=np.int64) if has_label else None)


def write_csv(path, header, rows) -> None:
    """Comma-separated, '.' decimal point, header row, LF line endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def append_trace_csv(path, solver: str, rows) -> None:
    """Append (iteration, objective, seconds) solver-trace rows; writes the
    header only when creating the file."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(["solver", "epoch", "objective", "seconds"])
        for step, objective, seconds in rows:
            writer.writerow([solver, step, repr(float(objective)), f"{seconds:.6f}"])
