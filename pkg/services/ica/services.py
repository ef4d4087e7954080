"""
SGD learning of the orthogonal ICA rotation on whitened data.

The update is
    V' = V + mu * mean_t g(V z_t) z_t^T + 1/2 (I - V V^T) V
with the super-Gaussian score g(s) = -tanh(s). The second term pulls V back
towards the orthogonal manifold, so no projection is needed between steps.
"""
import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from core.exceptions import DegenerateInputError, DimensionMismatchError, DivergenceError, EmptyInputError
from core.services.model_store import load_model, save_model
from services.whitening.models import WhiteningModel
from services.whitening.services import whiten
from .models import TRANSPOSE_CORRECTION, IcaConfig, IcaModel

logger = logging.getLogger(__name__)

OBJECTIVE_SAMPLE_ROWS = 10_000
DIVERGENCE_FACTOR = 10.0


def init_rotation(d: int, seed: int) -> np.ndarray:
    """
    Seeded random rotation: Q of a Gaussian matrix with diag(R) > 0, then the
    last column flipped if needed so that det(V) = +1.
    """
    if d < 1:
        raise DegenerateInputError(f"Rotation dimension must be at least 1, got {d}")
    rng = np.random.default_rng(seed)
    Q, R = linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    V = Q * signs
    # beyond diag(R) > 0: without the flip d = 1 would return sign(a) instead of [1]
    if linalg.det(V) < 0:
        V[:, -1] = -V[:, -1]
    return V


def score(s) -> np.ndarray:
    return -np.tanh(s)


def orthogonality_residual(V: np.ndarray) -> float:
    """||V V^T - I||_F"""
    return float(np.linalg.norm(V @ V.T - np.eye(V.shape[0])))


def sgd_step(V: np.ndarray, Z_batch: np.ndarray, mu: float, correction: str = 'standard') -> np.ndarray:
    """
    One update of the rotation from a d x B block of whitened samples.

    The gradient term is averaged over the batch. `correction='transpose'`
    uses 1/2 (I - V V^T) V^T in place of 1/2 (I - V V^T) V.
    """
    V = np.asarray(V, dtype=np.float64)
    Z_batch = np.asarray(Z_batch, dtype=np.float64)
    if Z_batch.ndim == 1:
        Z_batch = Z_batch.reshape(-1, 1)
    d = V.shape[0]
    if V.shape != (d, d) or Z_batch.shape[0] != d:
        raise DimensionMismatchError(f"Rotation {V.shape} does not fit a batch of shape {Z_batch.shape}")

    return _step(V, Z_batch, mu, correction)[0]


def _step(V: np.ndarray, Z_batch: np.ndarray, mu: float, correction: str) -> Tuple[np.ndarray, float]:
    """Updated V and ||I - V V^T||_F of the incoming V"""
    gradient = score(V @ Z_batch) @ Z_batch.T / Z_batch.shape[1]
    defect = np.eye(V.shape[0]) - V @ V.T
    target = V.T if correction == TRANSPOSE_CORRECTION else V
    return V + mu * gradient + 0.5 * defect @ target, float(np.linalg.norm(defect))


def reorthogonalize(V: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix (polar factor) via the SVD"""
    left, _, right = linalg.svd(V)
    return left @ right


def monitor_objective(V: np.ndarray, Z_sample: np.ndarray) -> float:
    """Mean over samples of sum_i -log cosh((V z)_i); Z_sample is samples x d"""
    Z_sample = np.asarray(Z_sample, dtype=np.float64)
    if Z_sample.ndim == 1:
        Z_sample = Z_sample.reshape(1, -1)
    Y = Z_sample @ np.asarray(V).T
    # log cosh(y) = |y| + log1p(exp(-2|y|)) - log 2, stable for large |y|
    a = np.abs(Y)
    log_cosh = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    return float(-log_cosh.sum(axis=1).mean())


def amari_index(P) -> float:
    """
    Normalized Amari error of a square matrix, in [0, 1].

    Zero exactly when P is a scaled permutation matrix.
    """
    P = np.abs(np.asarray(P, dtype=np.float64))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionMismatchError(f"Amari index needs a square matrix, got shape {P.shape}")
    d = P.shape[0]
    if np.any(P.max(axis=1) == 0) or np.any(P.max(axis=0) == 0):
        raise DegenerateInputError("Amari index is undefined for a matrix with an all-zero row or column")
    if d == 1:
        return 0.0
    rows = (P.sum(axis=1) / P.max(axis=1) - 1.0).sum()
    cols = (P.sum(axis=0) / P.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2.0 * d * (d - 1)))


def train_rotation(
    Z: np.ndarray,
    config: IcaConfig,
    on_epoch: Optional[Callable[[int, np.ndarray], None]] = None,
) -> Tuple[np.ndarray, List[Dict]]:
    """
    Run the SGD schedule on whitened samples (samples x d).

    Returns the final (not yet re-orthogonalized) V and the per-epoch trace.
    `on_epoch(epoch, V)` is called after every epoch.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise EmptyInputError("ICA needs at least one whitened sample")
    if Z.shape[1] != config.d:
        raise DimensionMismatchError(f"Whitened data has {Z.shape[1]} dimensions, config expects d={config.d}")

    V = init_rotation(config.d, config.seed)
    shuffler = np.random.default_rng([config.seed, 1])
    sample = Z[:OBJECTIVE_SAMPLE_ROWS]
    bound = DIVERGENCE_FACTOR * np.sqrt(config.d)
    n_samples = Z.shape[0]
    trace = []
    step = 0

    for epoch in range(config.epochs):
        mu = config.learning_rate(epoch)
        order = shuffler.permutation(n_samples)
        max_residual = 0.0
        for start in range(0, n_samples, config.batch_size):
            batch = Z[order[start:start + config.batch_size]].T
            V, residual = _step(V, batch, mu, config.correction)
            max_residual = max(max_residual, residual)
            step += 1

            norm = np.linalg.norm(V)
            if not np.isfinite(norm) or norm > bound:
                raise DivergenceError(
                    f"ICA diverged at epoch {epoch}, step {step}: ||V||_F = {norm:.4g} "
                    f"(bound {bound:.4g}, lr {mu:g}); lower ICA_LEARNING_RATE"
                )
            if config.reorthogonalize_every and step % config.reorthogonalize_every == 0:
                V = reorthogonalize(V)

        residual = orthogonality_residual(V)
        entry = {
            'epoch': epoch,
            'lr': mu,
            'objective': monitor_objective(V, sample),
            'residual': residual,
            'max_residual': max(max_residual, residual),
        }
        trace.append(entry)
        logger.info(
            f"ICA epoch {epoch + 1}/{config.epochs}: lr={mu:g} objective={entry['objective']:.6f} "
            f"residual={entry['residual']:.3e}"
        )
        if on_epoch is not None:
            on_epoch(epoch, V)

    return V, trace


def finalize(V: np.ndarray, whitening: WhiteningModel, config: IcaConfig, trace=None) -> IcaModel:
    """Exact re-orthogonalization, W = V U and unit-norm rows"""
    V = reorthogonalize(V)
    U = whitening.U
    raw = V @ U
    scaling = np.linalg.norm(raw, axis=1)
    return IcaModel(
        V=V,
        U=U,
        W=raw / scaling[:, None],
        scaling=scaling,
        mean=whitening.mean,
        config=config,
        trace=list(trace or []),
        transform_tag=whitening.transform_tag,
    )


def train_ica(
    X,
    whitening: WhiteningModel,
    config: IcaConfig,
    on_epoch: Optional[Callable[[int, np.ndarray], None]] = None,
) -> IcaModel:
    """Whiten outputs X (samples x n) with the given model and learn W"""
    if config.d != whitening.d:
        raise DimensionMismatchError(f"ICA config d={config.d} does not match the whitening model d={whitening.d}")
    Z = whiten(X, whitening)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise EmptyInputError("ICA needs a non-empty samples x classes matrix")

    logger.info(
        f"Training ICA: {Z.shape[0]} samples, d={config.d}, batch {config.batch_size}, "
        f"lr0 {config.lr0:g}, {config.epochs} epochs"
    )
    V, trace = train_rotation(Z, config, on_epoch)
    model = finalize(V, whitening, config, trace)
    logger.info(f"ICA finalized: residual after re-orthogonalization {orthogonality_residual(model.V):.3e}")
    return model


def save_ica(model: IcaModel, path) -> None:
    save_model(
        path,
        'ica',
        {'V': model.V, 'U': model.U, 'W': model.W, 'scaling': model.scaling, 'mean': model.mean},
        {'config': model.config.as_dict(), 'trace': model.trace, 'transform': model.transform_tag},
    )


def load_ica(path) -> IcaModel:
    attributes, arrays = load_model(path, 'ica')
    return IcaModel(
        V=arrays['V'],
        U=arrays['U'],
        W=arrays['W'],
        scaling=arrays['scaling'],
        mean=arrays['mean'],
        config=IcaConfig(**attributes['config']),
        trace=attributes.get('trace', []),
        transform_tag=attributes.get('transform', ''),
    )


def trace_summary(trace) -> Dict:
    if not trace:
        return {'epochs': 0}
    return {
        'epochs': len(trace),
        'final_objective': trace[-1]['objective'],
        'max_residual': max(entry['max_residual'] for entry in trace),
    }
