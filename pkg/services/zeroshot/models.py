"""
Prediction index, predictions and evaluation results.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from services.taxonomy.models import ClassRegistry

SEEN_POOL = 'seen'
UNSEEN_POOL = 'unseen'
BOTH_POOL = 'both'
POOLS = (SEEN_POOL, UNSEEN_POOL, BOTH_POOL)


@dataclass(frozen=True)
class ZeroShotIndex:
    """
    Everything needed to score an output vector against class pools.

    Query side: W1, P1 and the visual mean f-bar. Class side: P2^T W2c and
    P2^T W3c with unit L2 columns (original norms kept), together with the
    registry indices of the classes each column belongs to.
    """
    W1: np.ndarray
    P1: np.ndarray
    visual_mean: np.ndarray
    seen: np.ndarray
    unseen: np.ndarray
    seen_norms: np.ndarray
    unseen_norms: np.ndarray
    seen_ids: np.ndarray
    unseen_ids: np.ndarray
    excluded: Tuple[int, ...] = ()
    n_seen_classes: int = 0
    registry: Optional[ClassRegistry] = None
    feature_tag: str = ''
    transform_tag: str = ''

    @property
    def c(self) -> int:
        return self.P1.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    def pool(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        """(columns c x k, registry ids) of a pool; `both` is seen then unseen"""
        if name == SEEN_POOL:
            return self.seen, self.seen_ids
        if name == UNSEEN_POOL:
            return self.unseen, self.unseen_ids
        return np.hstack([self.seen, self.unseen]), np.concatenate([self.seen_ids, self.unseen_ids])

    def pool_size(self, name: str) -> int:
        return len(self.pool(name)[1])

    def class_name(self, class_id: int) -> str:
        if self.registry is None:
            return str(class_id)
        return self.registry[class_id].display


@dataclass(frozen=True)
class Prediction:
    """Ranked (class id, cosine score) pairs from one pool"""
    class_ids: np.ndarray
    scores: np.ndarray
    pool: str

    def __len__(self) -> int:
        return len(self.class_ids)

    def top(self) -> int:
        return int(self.class_ids[0])


@dataclass(frozen=True)
class AccuracyRow:
    pool: str
    k: int
    hits: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0

    def as_row(self) -> list:
        return [self.pool, self.k, self.hits, self.total, f"{self.accuracy:.6f}"]


@dataclass
class EvaluationResult:
    rows: List[AccuracyRow] = field(default_factory=list)

    def accuracy(self, pool: str, k: int) -> float:
        for row in self.rows:
            if row.pool == pool and row.k == k:
                return row.accuracy
        raise KeyError((pool, k))

    def accuracies(self, pool: str) -> List[float]:
        return [row.accuracy for row in self.rows if row.pool == pool]
