"""
Matrix, label and table file formats shared by every pipeline stage.

Binary MatrixFile layout: 8-byte magic ``ULNNMAT1``, unsigned 32-bit
little-endian row and column counts, then row-major little-endian float64
payload. Small inputs may also be CSV with an optional header row.
"""
import csv
import json
import logging
import struct
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder

from core.exceptions import DimensionMismatchError, MatrixFormatError, NonFiniteInputError

logger = logging.getLogger(__name__)

MAGIC = b'ULNNMAT1'
HEADER = struct.Struct('<8sII')
FLOAT = np.dtype('<f8')
MAX_DIM = 2 ** 32 - 1


def _is_csv(path: Path) -> bool:
    return path.suffix.lower() in ('.csv', '.txt')


def _check_finite(matrix: np.ndarray, path) -> None:
    if not np.all(np.isfinite(matrix)):
        bad = int(np.count_nonzero(~np.isfinite(matrix)))
        raise NonFiniteInputError(f"{path}: {bad} non-finite value(s)")


def write_matrix(matrix, path) -> Path:
    """Write a 2-D array; `.csv` paths get CSV, anything else the binary format"""
    path = Path(path)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise DimensionMismatchError(f"Only 2-D matrices can be written, got {matrix.ndim}-D")
    rows, cols = matrix.shape
    if rows > MAX_DIM or cols > MAX_DIM:
        raise MatrixFormatError(f"Matrix {rows}x{cols} exceeds the 32-bit dimension limit")
    _check_finite(matrix, path)

    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_csv(path):
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            for row in matrix:
                writer.writerow([repr(float(v)) for v in row])
        return path

    with open(path, 'wb') as handle:
        handle.write(HEADER.pack(MAGIC, rows, cols))
        handle.write(np.ascontiguousarray(matrix, dtype=FLOAT).tobytes(order='C'))
    return path


def _read_header(handle, path: Path):
    raw = handle.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise MatrixFormatError(f"{path}: file too short for a matrix header ({len(raw)} bytes)")
    magic, rows, cols = HEADER.unpack(raw)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    return rows, cols


def _read_csv(path: Path) -> np.ndarray:
    rows: List[List[float]] = []
    with open(path, newline='') as handle:
        for line_no, record in enumerate(csv.reader(handle), start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            try:
                rows.append([float(cell) for cell in record])
            except ValueError:
                if line_no == 1 and not rows:
                    # header row
                    continue
                raise MatrixFormatError(f"{path}:{line_no}: non-numeric value in {record!r}")
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for line_no, row in enumerate(rows, start=1):
        if len(row) != width:
            raise MatrixFormatError(f"{path}: ragged CSV, row {line_no} has {len(row)} columns, expected {width}")
    return np.array(rows, dtype=np.float64)


def read_matrix(path) -> np.ndarray:
    """Load a matrix written by write_matrix (or a hand-made CSV)"""
    path = Path(path)
    if not path.exists():
        raise MatrixFormatError(f"{path}: no such file")

    with open(path, 'rb') as handle:
        head = handle.read(len(MAGIC))
    if head != MAGIC and _is_csv(path):
        matrix = _read_csv(path)
        _check_finite(matrix, path)
        return matrix

    with open(path, 'rb') as handle:
        rows, cols = _read_header(handle, path)
        expected = rows * cols * FLOAT.itemsize
        payload = handle.read()
    if len(payload) != expected:
        raise MatrixFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {rows}x{cols}"
        )
    matrix = np.frombuffer(payload, dtype=FLOAT).reshape(rows, cols).astype(np.float64)
    _check_finite(matrix, path)
    return matrix


def matrix_shape(path) -> tuple:
    """Rows and columns without loading the payload"""
    path = Path(path)
    with open(path, 'rb') as handle:
        head = handle.read(len(MAGIC))
    if head != MAGIC and _is_csv(path):
        return read_matrix(path).shape
    with open(path, 'rb') as handle:
        return _read_header(handle, path)


def iter_matrix_chunks(path, chunk_rows: int = 4096) -> Iterator[np.ndarray]:
    """Stream a matrix as consecutive row blocks of at most `chunk_rows` rows"""
    path = Path(path)
    if chunk_rows < 1:
        raise MatrixFormatError(f"chunk_rows must be positive, got {chunk_rows}")

    with open(path, 'rb') as handle:
        head = handle.read(len(MAGIC))
    if head != MAGIC and _is_csv(path):
        matrix = read_matrix(path)
        for start in range(0, matrix.shape[0], chunk_rows):
            yield matrix[start:start + chunk_rows]
        return

    with open(path, 'rb') as handle:
        rows, cols = _read_header(handle, path)
        row_bytes = cols * FLOAT.itemsize
        remaining = rows
        while remaining > 0:
            take = min(chunk_rows, remaining)
            raw = handle.read(take * row_bytes)
            if len(raw) != take * row_bytes:
                got = (rows - remaining) * row_bytes + len(raw)
                raise MatrixFormatError(
                    f"{path}: payload is {got} bytes, expected {rows * row_bytes} for {rows}x{cols}"
                )
            chunk = np.frombuffer(raw, dtype=FLOAT).reshape(take, cols).astype(np.float64)
            _check_finite(chunk, path)
            yield chunk
            remaining -= take


def write_labels(labels: Sequence[int], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as handle:
        for label in labels:
            handle.write(f"{int(label)}\n")
    return path


def read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MatrixFormatError(f"{path}: no such file")
    labels = []
    with open(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise MatrixFormatError(f"{path}:{line_no}: label {line!r} is not an integer")
    return np.array(labels, dtype=np.int64)


def write_table(path, header: Sequence[str], rows) -> Path:
    """Plain CSV table with a header row (results, reports, plot data)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def read_table(path) -> List[Dict[str, str]]:
    with open(path, newline='') as handle:
        return list(csv.DictReader(handle))


def write_metadata(path, metadata: Dict) -> Path:
    """Sidecar `<file>.meta.json` next to a matrix file"""
    meta_path = Path(f"{path}.meta.json")
    meta_path.write_text(json.dumps(metadata, cls=DjangoJSONEncoder, sort_keys=True, indent=2))
    return meta_path


def read_metadata(path) -> Optional[Dict]:
    meta_path = Path(f"{path}.meta.json")
    if not meta_path.exists():
        return None
    return json.loads(meta_path.read_text())
