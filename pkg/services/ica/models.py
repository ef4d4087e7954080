"""
ICA training configuration, the fitted demixing model and the synthetic
source model used as ground truth.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from core.exceptions import ConfigError, DegenerateInputError

STANDARD_CORRECTION = 'standard'
TRANSPOSE_CORRECTION = 'transpose'


@dataclass(frozen=True)
class IcaConfig:
    """Hyperparameters of the SGD rotation learner"""
    d: int
    batch_size: int = 500
    lr0: float = 0.005
    halving_period: int = 10
    epochs: int = 30
    seed: int = 0
    reorthogonalize_every: int = 0
    correction: str = STANDARD_CORRECTION

    def __post_init__(self):
        errors = []
        for name in ('d', 'batch_size', 'halving_period'):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be at least 1, got {getattr(self, name)}")
        if not self.lr0 > 0:
            errors.append(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 0:
            errors.append(f"epochs must be non-negative, got {self.epochs}")
        if self.reorthogonalize_every < 0:
            errors.append(f"reorthogonalize_every must be non-negative, got {self.reorthogonalize_every}")
        if self.correction not in (STANDARD_CORRECTION, TRANSPOSE_CORRECTION):
            errors.append(f"correction must be 'standard' or 'transpose', got {self.correction!r}")
        if errors:
            raise ConfigError('; '.join(errors))

    def learning_rate(self, epoch: int) -> float:
        """lr0 halved every `halving_period` epochs (epochs count from 0)"""
        return self.lr0 * 2.0 ** (-(epoch // self.halving_period))

    def as_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class IcaModel:
    """
    Demixing model W = V U with unit-norm rows.

    `scaling` holds the row norms of V U before normalization, so the raw
    product is recoverable as diag(scaling) W. Components of an output
    vector x are W (x - mean).
    """
    V: np.ndarray
    U: np.ndarray
    W: np.ndarray
    scaling: np.ndarray
    mean: np.ndarray
    config: IcaConfig
    trace: List[Dict] = field(default_factory=list)
    transform_tag: str = ''

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def components(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.W.T


@dataclass(frozen=True)
class SourceModel:
    """Ground truth x = A s of a synthetic noise-free mixture"""
    mixing: np.ndarray
    distribution: str = 'laplace'
    noise: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.mixing)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DegenerateInputError(f"Mixing matrix must be square, got shape {A.shape}")
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise DegenerateInputError("Mixing matrix is not full rank")

    @property
    def n_sources(self) -> int:
        return self.mixing.shape[0]

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.mixing))
