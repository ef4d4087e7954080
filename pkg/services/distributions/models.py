"""
Output representations and non-Gaussianity statistics.

Nothing here is stored in a database; these are the in-memory value types
passed between the distribution transforms and the later pipeline stages.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

SOFTMAX = 'softmax'
NORMALIZED_LOGITS = 'normalized-logits'
RAW = 'raw'


def softmax_tag(temperature: float) -> str:
    return f"{SOFTMAX}(T={float(temperature)!r})"


@dataclass(frozen=True)
class ProbMatrix:
    """Rows are probability vectors over n classes, tagged with their transform"""
    values: np.ndarray
    transform_tag: str

    @property
    def n_classes(self) -> int:
        return self.values.shape[-1]


@dataclass
class MomentSums:
    """
    Mergeable per-class central moments (count, mean, M2, M3, M4).

    Merging uses the pairwise update for central moments, so partial sums
    from independent chunks combine without revisiting the data. Merge in a
    fixed order for bit-identical results.
    """
    count: int = 0
    mean: Optional[np.ndarray] = None
    m2: Optional[np.ndarray] = None
    m3: Optional[np.ndarray] = None
    m4: Optional[np.ndarray] = None

    @classmethod
    def from_chunk(cls, chunk: np.ndarray) -> 'MomentSums':
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim == 1:
            chunk = chunk.reshape(-1, 1)
        if chunk.shape[0] == 0:
            return cls()
        mean = chunk.mean(axis=0)
        centered = chunk - mean
        sq = centered * centered
        return cls(
            count=chunk.shape[0],
            mean=mean,
            m2=sq.sum(axis=0),
            m3=(sq * centered).sum(axis=0),
            m4=(sq * sq).sum(axis=0),
        )

    @property
    def n_columns(self) -> int:
        return 0 if self.mean is None else self.mean.shape[0]

    def merge(self, other: 'MomentSums') -> 'MomentSums':
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        na, nb = float(self.count), float(other.count)
        n = na + nb
        delta = other.mean - self.mean
        delta2 = delta * delta
        mean = self.mean + delta * (nb / n)
        m2 = self.m2 + other.m2 + delta2 * (na * nb / n)
        m3 = (
            self.m3 + other.m3
            + delta2 * delta * (na * nb * (na - nb) / (n * n))
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4 + other.m4
            + delta2 * delta2 * (na * nb * (na * na - na * nb + nb * nb) / (n ** 3))
            + 6.0 * delta2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n
        )
        return MomentSums(count=self.count + other.count, mean=mean, m2=m2, m3=m3, m4=m4)


@dataclass
class KurtosisReport:
    """Per-class excess kurtosis; undefined (NaN) where a class has no variance"""
    kurtosis: np.ndarray
    defined: np.ndarray
    sample_count: int
    mean: np.ndarray
    variance: np.ndarray
    undefined_classes: List[int] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.kurtosis.shape[0]

    def all_positive(self) -> bool:
        return bool(np.all(self.kurtosis[self.defined] > 0))
