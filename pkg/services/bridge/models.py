from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

PCA_FEATURES = 'pca'
ICA_FEATURES = 'ica'
RANDOM_FEATURES = 'random-semi-orthogonal'
FEATURE_TAGS = (PCA_FEATURES, ICA_FEATURES, RANDOM_FEATURES)


@dataclass(frozen=True)
class VisualFeatures:
    """W1 (d x n): one column per seen class"""
    matrix: np.ndarray
    tag: str
    transform_tag: str = ''

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ClassMeanMatrix:
    """M (n x n), column i the mean output of seen class i; None means M = I"""
    matrix: Optional[np.ndarray] = None

    @property
    def is_identity(self) -> bool:
        return self.matrix is None


@dataclass(frozen=True)
class CcaModel:
    """
    Projections of the visual (P1, d x c) and semantic (P2, s x c) views
    into a common c-dimensional space.
    """
    P1: np.ndarray
    P2: np.ndarray
    correlations: np.ndarray
    ridge: Tuple[float, float]
    visual_mean: np.ndarray
    features: Optional[VisualFeatures] = None

    @property
    def c(self) -> int:
        return self.P1.shape[1]
