"""
Plot-ready CSV tables. Nothing is rendered here; each table has one row per
class and labeled columns so any plotting tool can read it.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigError, DimensionMismatchError
from core.services.matrix_io import write_table

logger = logging.getLogger(__name__)

EMBEDDING_SCATTER = 'embedding-scatter'
COMPONENT_BARS = 'component-bars'
KURTOSIS_HIST = 'kurtosis-hist'
PLOT_KINDS = (EMBEDDING_SCATTER, COMPONENT_BARS, KURTOSIS_HIST)


def _name(registry, class_id: int) -> str:
    if registry is None or class_id >= len(registry):
        return str(class_id)
    return registry[class_id].display


def _matrix(features) -> np.ndarray:
    return np.asarray(getattr(features, 'matrix', features), dtype=np.float64)


def embedding_scatter(features, components: Tuple[int, int] = (0, 1), registry=None) -> Tuple[List[str], list]:
    """Every class as a point in two chosen components"""
    W = _matrix(features)
    a, b = components
    for component in (a, b):
        if not 0 <= component < W.shape[0]:
            raise DimensionMismatchError(f"Component {component} out of range 0..{W.shape[0] - 1}")
    header = ['class', 'label', f'component_{a}', f'component_{b}']
    rows = [[j, _name(registry, j), repr(float(W[a, j])), repr(float(W[b, j]))] for j in range(W.shape[1])]
    return header, rows


def component_bars(features, classes: Sequence[int], registry=None) -> Tuple[List[str], list]:
    """All d component values of the chosen classes"""
    W = _matrix(features)
    for class_id in classes:
        if not 0 <= class_id < W.shape[1]:
            raise DimensionMismatchError(f"Class {class_id} out of range 0..{W.shape[1] - 1}")
    header = ['class', 'label'] + [f'component_{r}' for r in range(W.shape[0])]
    rows = [[j, _name(registry, j)] + [repr(float(v)) for v in W[:, j]] for j in classes]
    return header, rows


def kurtosis_hist(report, registry=None) -> Tuple[List[str], list]:
    """One kurtosis value per class; undefined classes are left blank"""
    header = ['class', 'label', 'kurtosis']
    rows = [
        [j, _name(registry, j), repr(float(report.kurtosis[j])) if report.defined[j] else '']
        for j in range(report.n_classes)
    ]
    return header, rows


def emit_plot_data(kind: str, path, features=None, report=None, registry=None,
                   components: Tuple[int, int] = (0, 1), classes: Optional[Sequence[int]] = None) -> Path:
    if kind == EMBEDDING_SCATTER:
        header, rows = embedding_scatter(_required(features, kind, 'features'), components, registry)
    elif kind == COMPONENT_BARS:
        if not classes:
            raise ConfigError(f"{kind} needs at least one class")
        header, rows = component_bars(_required(features, kind, 'features'), classes, registry)
    elif kind == KURTOSIS_HIST:
        header, rows = kurtosis_hist(_required(report, kind, 'a kurtosis report'), registry)
    else:
        raise ConfigError(f"Unknown plot kind {kind!r}, expected one of {', '.join(PLOT_KINDS)}")
    logger.info(f"Plot data {kind}: {len(rows)} row(s) x {len(header)} column(s) -> {path}")
    return write_table(path, header, rows)


def _required(value, kind: str, what: str):
    if value is None:
        raise ConfigError(f"{kind} needs {what}")
    return value
