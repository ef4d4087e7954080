"""
Directory-based model persistence.

A model directory holds ``manifest.json`` (kind, scalar attributes, array
index) and one MatrixFile per array. Vectors are written as 1xn matrices and
restored to their original shape on load.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder

from core.exceptions import MatrixFormatError
from core.services.matrix_io import read_matrix, write_matrix

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
FORMAT_VERSION = 1


def save_model(path, kind: str, arrays: Dict[str, np.ndarray], attributes: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    index = {}
    for name in sorted(arrays):
        array = np.asarray(arrays[name], dtype=np.float64)
        filename = f"{name}.mat"
        if array.ndim == 1:
            write_matrix(array.reshape(1, -1), path / filename)
        elif array.ndim == 2:
            write_matrix(array, path / filename)
        else:
            raise MatrixFormatError(f"Array {name!r} has {array.ndim} dimensions; only vectors and matrices are stored")
        index[name] = {'file': filename, 'shape': list(array.shape)}

    manifest = {
        'kind': kind,
        'format_version': FORMAT_VERSION,
        'attributes': attributes or {},
        'arrays': index,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, cls=DjangoJSONEncoder, sort_keys=True, indent=2))
    logger.debug(f"Saved {kind} model to {path} ({len(index)} arrays)")
    return path


def load_model(path, kind: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.exists():
        raise MatrixFormatError(f"{path}: not a model directory (missing {MANIFEST})")
    manifest = json.loads(manifest_path.read_text())

    if kind is not None and manifest.get('kind') != kind:
        raise MatrixFormatError(f"{path}: expected a {kind} model, found {manifest.get('kind')!r}")
    if manifest.get('format_version') != FORMAT_VERSION:
        raise MatrixFormatError(f"{path}: unsupported model format version {manifest.get('format_version')!r}")

    arrays = {}
    for name, entry in manifest['arrays'].items():
        matrix = read_matrix(path / entry['file'])
        shape = tuple(entry['shape'])
        if int(np.prod(shape)) != matrix.size:
            raise MatrixFormatError(f"{path}: array {name!r} has {matrix.size} values, manifest says {shape}")
        arrays[name] = matrix.reshape(shape)
    return manifest['attributes'], arrays


def model_kind(path) -> Optional[str]:
    manifest_path = Path(path) / MANIFEST
    if not manifest_path.exists():
        return None
    return json.loads(manifest_path.read_text()).get('kind')
