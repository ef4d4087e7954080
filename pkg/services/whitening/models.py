from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.exceptions import DimensionMismatchError, EmptyInputError


@dataclass
class MomentAccumulator:
    """
    Running first and second moment sums of output vectors.

    Holds plain sums (not running averages), so merging two accumulators is
    exact and a chunked pass reproduces another pass over the same chunks
    bit for bit.
    """
    count: int = 0
    total: Optional[np.ndarray] = None
    outer: Optional[np.ndarray] = None

    @property
    def dimension(self) -> int:
        return 0 if self.total is None else self.total.shape[0]

    @staticmethod
    def chunk_sums(chunk: np.ndarray) -> Tuple[int, np.ndarray, np.ndarray]:
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim == 1:
            chunk = chunk.reshape(1, -1)
        return chunk.shape[0], chunk.sum(axis=0), chunk.T @ chunk

    def add_sums(self, count: int, total: np.ndarray, outer: np.ndarray) -> 'MomentAccumulator':
        if count == 0:
            return self
        if self.total is None:
            self.count, self.total, self.outer = count, total.copy(), outer.copy()
            return self
        if total.shape[0] != self.dimension:
            raise DimensionMismatchError(f"Vector dimension {total.shape[0]} does not match {self.dimension}")
        self.count += count
        self.total = self.total + total
        self.outer = self.outer + outer
        return self

    def add(self, chunk: np.ndarray) -> 'MomentAccumulator':
        return self.add_sums(*self.chunk_sums(chunk))

    def merge(self, other: 'MomentAccumulator') -> 'MomentAccumulator':
        merged = MomentAccumulator()
        for part in (self, other):
            if part.count:
                merged.add_sums(part.count, part.total, part.outer)
        return merged

    def mean(self) -> np.ndarray:
        self._require_samples()
        return self.total / self.count

    def covariance(self) -> np.ndarray:
        """(1/N) sum x x^T - m m^T, symmetrized"""
        self._require_samples()
        mean = self.total / self.count
        cov = self.outer / self.count - np.outer(mean, mean)
        return 0.5 * (cov + cov.T)

    def _require_samples(self) -> None:
        if self.count < 2:
            raise EmptyInputError(f"Need at least 2 samples to estimate a covariance, got {self.count}")


@dataclass(frozen=True)
class WhiteningModel:
    """Mean, descending covariance spectrum and the retained dimension d"""
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    d: int
    floor: float
    sample_count: int = 0
    transform_tag: str = ''

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def valid_rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues > self.floor))

    @property
    def pca_matrix(self) -> np.ndarray:
        """E_d^T: top-d principal directions as rows (d x n)"""
        return self.eigenvectors[:, :self.d].T.copy()

    @property
    def U(self) -> np.ndarray:
        """Whitening matrix D_d^(-1/2) E_d^T (d x n)"""
        return self.eigenvectors[:, :self.d].T / np.sqrt(self.eigenvalues[:self.d])[:, None]
