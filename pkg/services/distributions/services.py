"""
Transforms from raw classifier scores to output distributions, and the
kurtosis statistics used to check that the outputs are non-Gaussian.
"""
import logging
import re
from functools import reduce
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np
from scipy.special import softmax as _softmax

from core.exceptions import DegenerateInputError, EmptyInputError, NonFiniteInputError
from core.services.matrix_io import iter_matrix_chunks, read_metadata
from .models import (
    NORMALIZED_LOGITS,
    RAW,
    SOFTMAX,
    KurtosisReport,
    MomentSums,
    ProbMatrix,
    softmax_tag,
)

logger = logging.getLogger(__name__)

MIN_KURTOSIS_SAMPLES = 4
SOFTMAX_TAG = re.compile(r"softmax\(T=([^)]+)\)")


def _as_scores(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim not in (1, 2):
        raise DegenerateInputError(f"Expected a vector or a samples x classes matrix, got {y.ndim}-D input")
    if y.shape[-1] < 2:
        raise DegenerateInputError(f"Need at least 2 classes, got {y.shape[-1]}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteInputError("Scores contain non-finite values")
    return y


def _check_temperature(T: float) -> float:
    T = float(T)
    if not np.isfinite(T) or T <= 0:
        raise DegenerateInputError(f"Temperature must be a positive finite number, got {T}")
    return T


def softmax(y, T: float = 1.0) -> np.ndarray:
    """Softmax at temperature T, row-wise for matrices (max-subtracted)"""
    y = _as_scores(y)
    T = _check_temperature(T)
    return _softmax(y / T, axis=-1)


def temperature_rescale(p, T: float) -> np.ndarray:
    """
    Re-sharpen or soften probability vectors: p_i^(1/T) / sum_j p_j^(1/T).

    Same as softmax(log p, T). Entries must be strictly positive since the
    logarithm of a zero probability is undefined.
    """
    p = _as_scores(p)
    T = _check_temperature(T)
    if np.any(p <= 0):
        raise DegenerateInputError("temperature_rescale needs strictly positive probabilities (log of zero is undefined)")
    return _softmax(np.log(p) / T, axis=-1)


def normalized_logits(y) -> np.ndarray:
    """Shift logits so the minimum is 0 and scale them to sum to 1"""
    y = _as_scores(y)
    shifted = y - y.min(axis=-1, keepdims=True)
    totals = shifted.sum(axis=-1, keepdims=True)
    if np.any(totals == 0):
        if y.ndim == 1:
            raise DegenerateInputError("Degenerate constant logits: all entries are equal")
        rows = np.flatnonzero(totals[:, 0] == 0)
        raise DegenerateInputError(
            f"Degenerate constant logits in {len(rows)} row(s), first at row {int(rows[0])}"
        )
    return shifted / totals


def apply_transform(scores, mode: str, T: float = 1.0, from_probs: bool = False) -> ProbMatrix:
    """
    Turn a score matrix into a tagged probability matrix.

    `from_probs` treats the input as softmax(T=1) outputs and rescales them by
    temperature instead of exponentiating logits.
    """
    if mode == SOFTMAX:
        values = temperature_rescale(scores, T) if from_probs else softmax(scores, T)
        return ProbMatrix(values=values, transform_tag=softmax_tag(T))
    if mode == NORMALIZED_LOGITS:
        if from_probs:
            raise DegenerateInputError("Normalized logits need raw logits, not probabilities")
        return ProbMatrix(values=normalized_logits(scores), transform_tag=NORMALIZED_LOGITS)
    raise DegenerateInputError(f"Unknown transform {mode!r}")


def accumulate_moments(chunks: Iterable[np.ndarray]) -> MomentSums:
    """Fold per-chunk central moments in chunk order"""
    return reduce(lambda acc, chunk: acc.merge(MomentSums.from_chunk(chunk)), chunks, MomentSums())


def report_from_moments(moments: MomentSums) -> KurtosisReport:
    """Excess kurtosis E(x^4)/E(x^2)^2 - 3 on mean-removed values, population moments"""
    if moments.count < MIN_KURTOSIS_SAMPLES:
        raise EmptyInputError(f"Kurtosis needs at least {MIN_KURTOSIS_SAMPLES} samples, got {moments.count}")

    n = float(moments.count)
    variance = moments.m2 / n
    scale = np.maximum(1.0, np.abs(moments.mean))
    defined = variance > (1e-12 * scale) ** 2
    kurtosis = np.full(moments.n_columns, np.nan)
    kurtosis[defined] = (moments.m4[defined] / n) / variance[defined] ** 2 - 3.0

    undefined = [int(i) for i in np.flatnonzero(~defined)]
    if undefined:
        logger.warning(f"Kurtosis undefined for {len(undefined)} zero-variance class(es), first: {undefined[:5]}")
    return KurtosisReport(
        kurtosis=kurtosis,
        defined=defined,
        sample_count=moments.count,
        mean=moments.mean,
        variance=variance,
        undefined_classes=undefined,
    )


def kurtosis_per_class(X) -> KurtosisReport:
    """In-memory kurtosis of every column of a samples x classes matrix"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInputError(f"Expected a samples x classes matrix, got {X.ndim}-D input")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInputError("Matrix contains non-finite values")
    return report_from_moments(MomentSums.from_chunk(X))


def input_transform_tag(path, mode: str, T: float = 1.0) -> str:
    """Tag of the rows `transformed_chunks` yields; `none` keeps the file's own tag"""
    if mode == 'none':
        return (read_metadata(path) or {}).get('transform', RAW)
    return transform_tag_for(mode, T)


def transformed_chunks(path, mode: str, T: float = 1.0, chunk_rows: int = 4096) -> Iterator[np.ndarray]:
    """Stream a matrix file in row blocks, applying the transform to each block"""
    for chunk in iter_matrix_chunks(path, chunk_rows):
        yield chunk if mode == 'none' else apply_transform(chunk, mode, T).values


def transform_tag_for(mode: str, T: float = 1.0) -> str:
    """Tag carried by rows produced with `mode` at temperature T"""
    if mode == NORMALIZED_LOGITS:
        return NORMALIZED_LOGITS
    if mode == SOFTMAX:
        return softmax_tag(_check_temperature(T))
    raise DegenerateInputError(f"Unknown transform {mode!r}")


def parse_transform_tag(tag: str) -> Tuple[Optional[str], float]:
    """Mode and temperature behind a tag; (None, 1.0) for raw rows"""
    if tag == NORMALIZED_LOGITS:
        return NORMALIZED_LOGITS, 1.0
    match = SOFTMAX_TAG.fullmatch(tag or '')
    if match:
        return SOFTMAX, _check_temperature(float(match.group(1)))
    return None, 1.0


def resolve_transform(path, mode: Optional[str], T: float, target_tag: str) -> Tuple[str, float]:
    """
    Mode and temperature to read `path` with.

    An explicit mode wins. Otherwise rows are brought to `target_tag`:
    files whose sidecar already names a transform are read as they are,
    raw files get the transform the tag stands for.
    """
    if mode is not None:
        return mode, T
    current = (read_metadata(path) or {}).get('transform', RAW)
    if current != RAW:
        if target_tag not in (RAW, '', current):
            logger.warning(f"{path} holds {current} rows but {target_tag} rows are expected")
        return 'none', T
    target_mode, target_T = parse_transform_tag(target_tag)
    if target_mode is None:
        return 'none', T
    return target_mode, target_T


def read_transformed(path, mode: str, T: float = 1.0, chunk_rows: int = 4096) -> np.ndarray:
    """Whole matrix file through `transformed_chunks`"""
    blocks = list(transformed_chunks(path, mode, T, chunk_rows))
    if not blocks:
        raise EmptyInputError(f"{path} holds no rows")
    return np.vstack(blocks)
