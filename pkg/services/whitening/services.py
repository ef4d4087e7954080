"""
Covariance estimation, eigendecomposition and PCA whitening of output vectors.
"""
import logging
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import linalg

from core.exceptions import DimensionMismatchError, EmptyInputError, NonFiniteInputError, RankError
from core.services.model_store import load_model, save_model
from core.services.parallel import ordered_map
from .models import MomentAccumulator, WhiteningModel

logger = logging.getLogger(__name__)

DEFAULT_FLOOR_RATIO = 1e-10


def fit_moments(chunks: Iterable[np.ndarray], threads: int = 1) -> MomentAccumulator:
    """One pass over a stream of vectors (or row blocks) accumulating exact sums"""
    accumulator = MomentAccumulator()
    for count, total, outer in ordered_map(MomentAccumulator.chunk_sums, chunks, threads):
        accumulator.add_sums(count, total, outer)
    return accumulator


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive"""
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(covariance) -> Tuple[np.ndarray, np.ndarray]:
    """
    Symmetric eigendecomposition with a deterministic layout.

    Eigenvalues come back in descending order (ties keep their original
    index order) and every eigenvector has its largest-magnitude entry
    positive.
    """
    C = np.asarray(covariance, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatchError(f"Covariance must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NonFiniteInputError("Covariance contains non-finite entries")
    C = 0.5 * (C + C.T)

    eigenvalues, eigenvectors = linalg.eigh(C)
    order = np.argsort(-eigenvalues, kind='stable')
    return eigenvalues[order], _sign_fix(eigenvectors[:, order])


def eigenvalue_floor(eigenvalues: np.ndarray, ratio: float = DEFAULT_FLOOR_RATIO) -> float:
    if eigenvalues.size == 0:
        return 0.0
    return ratio * max(float(eigenvalues[0]), 0.0)


def fit_whitening(
    accumulator: MomentAccumulator,
    d: Optional[int] = None,
    floor_ratio: float = DEFAULT_FLOOR_RATIO,
    transform_tag: str = '',
) -> WhiteningModel:
    """Build a WhiteningModel retaining d dimensions (all valid ones when d is None)"""
    eigenvalues, eigenvectors = eigendecompose(accumulator.covariance())
    floor = eigenvalue_floor(eigenvalues, floor_ratio)
    # round-off negatives of a PSD covariance
    eigenvalues = np.where((eigenvalues < 0) & (eigenvalues >= -max(floor, 1e-300)), 0.0, eigenvalues)
    rank = int(np.count_nonzero(eigenvalues > floor))
    if rank == 0:
        raise RankError("Covariance has no eigenvalue above the floor; the data has no variance")

    if d is None:
        d = rank
    _check_dimension(d, rank)
    logger.info(
        f"Fitted whitening on {accumulator.count} samples: n={eigenvalues.size}, valid rank {rank}, keeping d={d}"
    )
    return WhiteningModel(
        mean=accumulator.mean(),
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        d=d,
        floor=floor,
        sample_count=accumulator.count,
        transform_tag=transform_tag,
    )


def fit_whitening_matrix(X, d: Optional[int] = None, floor_ratio: float = DEFAULT_FLOOR_RATIO,
                         chunk_rows: int = 4096, transform_tag: str = '') -> WhiteningModel:
    """In-memory convenience wrapper: same chunked pass as the streaming fit"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError(f"Expected a non-empty samples x dims matrix, got shape {X.shape}")
    chunks = (X[start:start + chunk_rows] for start in range(0, X.shape[0], chunk_rows))
    return fit_whitening(fit_moments(chunks), d, floor_ratio, transform_tag)


def _check_dimension(d: int, rank: int) -> None:
    if d < 1:
        raise RankError(f"Retained dimension must be at least 1, got {d}")
    if d > rank:
        raise RankError(f"Retained dimension {d} exceeds the numerically valid rank {rank}")


def whitening_matrix(model: WhiteningModel, d: Optional[int] = None) -> np.ndarray:
    """U = D_d^(-1/2) E_d^T, rows ordered by descending eigenvalue"""
    d = model.d if d is None else d
    _check_dimension(d, model.valid_rank)
    return model.eigenvectors[:, :d].T / np.sqrt(model.eigenvalues[:d])[:, None]


def with_dimension(model: WhiteningModel, d: int) -> WhiteningModel:
    _check_dimension(d, model.valid_rank)
    return WhiteningModel(
        mean=model.mean, eigenvalues=model.eigenvalues, eigenvectors=model.eigenvectors, d=d,
        floor=model.floor, sample_count=model.sample_count, transform_tag=model.transform_tag,
    )


def whiten(x, model: WhiteningModel) -> np.ndarray:
    """z = U (x - mean); accepts one vector or a samples x n matrix"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n:
        raise DimensionMismatchError(f"Input dimension {x.shape[-1]} does not match model dimension {model.n}")
    return (x - model.mean) @ model.U.T


def model_from_covariance(covariance, mean=None, d: Optional[int] = None,
                          floor_ratio: float = DEFAULT_FLOOR_RATIO) -> WhiteningModel:
    """WhiteningModel for a known covariance (analytic cases, synthetic oracles)"""
    eigenvalues, eigenvectors = eigendecompose(covariance)
    floor = eigenvalue_floor(eigenvalues, floor_ratio)
    rank = int(np.count_nonzero(eigenvalues > floor))
    d = rank if d is None else d
    _check_dimension(d, rank)
    mean = np.zeros(eigenvalues.size) if mean is None else np.asarray(mean, dtype=np.float64)
    return WhiteningModel(mean=mean, eigenvalues=eigenvalues, eigenvectors=eigenvectors, d=d, floor=floor)


def save_whitening(model: WhiteningModel, path) -> None:
    save_model(
        path,
        'whitening',
        {'mean': model.mean, 'eigenvalues': model.eigenvalues, 'eigenvectors': model.eigenvectors},
        {'d': model.d, 'floor': model.floor, 'sample_count': model.sample_count, 'transform': model.transform_tag},
    )


def load_whitening(path) -> WhiteningModel:
    attributes, arrays = load_model(path, 'whitening')
    return WhiteningModel(
        mean=arrays['mean'],
        eigenvalues=arrays['eigenvalues'],
        eigenvectors=arrays['eigenvectors'],
        d=int(attributes['d']),
        floor=float(attributes['floor']),
        sample_count=int(attributes.get('sample_count', 0)),
        transform_tag=attributes.get('transform', ''),
    )
