"""
Visual class features, semantic centering and the CCA that links them.

CCA is solved in the symmetric form: each view is whitened with
(C_kk + eps I)^(-1/2), the cross-view matrix is decomposed by SVD and the
singular vectors are mapped back. Both views are first reduced to their
thin SVD bases, so covariance matrices of the (possibly very wide) semantic
view are never formed.
"""
import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from core.exceptions import DegenerateInputError, DimensionMismatchError, EmptyInputError, RankError
from core.services.model_store import load_model, model_kind, save_model
from services.ica.services import load_ica
from services.whitening.services import load_whitening
from .models import (
    ICA_FEATURES,
    PCA_FEATURES,
    RANDOM_FEATURES,
    CcaModel,
    ClassMeanMatrix,
    VisualFeatures,
)

logger = logging.getLogger(__name__)

DEFAULT_RIDGE_SCALE = 1e-6


def l1_normalize_columns(X) -> np.ndarray:
    """Divide each column by the sum of its absolute values"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    norms = np.abs(X).sum(axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"Column {int(zero[0])} has zero L1 norm and cannot be normalized")
    return X / norms


def center_semantic(W2, W3=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Subtract the seen-class mean from seen (W2) and unseen (W3) columns"""
    W2 = np.asarray(W2, dtype=np.float64)
    if W2.ndim != 2 or W2.shape[1] == 0:
        raise EmptyInputError("Semantic features need at least one seen class column")
    W3 = np.zeros((W2.shape[0], 0)) if W3 is None else np.asarray(W3, dtype=np.float64)
    if W3.shape[0] != W2.shape[0]:
        raise DimensionMismatchError(f"Seen features have {W2.shape[0]} rows, unseen features {W3.shape[0]}")
    mean = W2.mean(axis=1)
    return W2 - mean[:, None], W3 - mean[:, None], mean


def random_semi_orthogonal(d: int, n: int, seed: int) -> np.ndarray:
    """d x n matrix with orthonormal rows, seeded"""
    if not 1 <= d <= n:
        raise RankError(f"A semi-orthogonal d x n matrix needs 1 <= d <= n, got d={d}, n={n}")
    rng = np.random.default_rng(seed)
    Q, R = linalg.qr(rng.standard_normal((n, d)), mode='economic')
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return (Q * signs).T


def pca_features(whitening, d: Optional[int] = None) -> VisualFeatures:
    """Top principal directions as rows (unit L2 by construction)"""
    d = whitening.d if d is None else d
    return VisualFeatures(
        matrix=whitening.eigenvectors[:, :d].T.copy(), tag=PCA_FEATURES, transform_tag=whitening.transform_tag,
    )


def ica_features(model) -> VisualFeatures:
    return VisualFeatures(matrix=model.W, tag=ICA_FEATURES, transform_tag=model.transform_tag)


def random_features(d: int, n: int, seed: int) -> VisualFeatures:
    return VisualFeatures(matrix=random_semi_orthogonal(d, n, seed), tag=RANDOM_FEATURES)


def load_visual_features(path, d: Optional[int] = None) -> VisualFeatures:
    """Visual features from a whitening (PCA), ICA or CCA model directory"""
    kind = model_kind(path)
    if kind == 'whitening':
        return pca_features(load_whitening(path), d)
    if kind == 'ica':
        features = ica_features(load_ica(path))
        if d is not None and d != features.d:
            raise DimensionMismatchError(f"ICA model has {features.d} components, {d} requested")
        return features
    if kind == 'cca':
        features = load_cca(path).features
        if features is not None:
            return features
    raise DegenerateInputError(f"{path}: expected a whitening, ICA or CCA model directory, found {kind!r}")


def class_mean_matrix(X, labels, n_classes: int) -> ClassMeanMatrix:
    """Column i = mean output vector of the samples labeled i"""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0] if X.ndim == 2 else X.shape} outputs for {labels.shape[0]} labels")
    keep = (labels >= 0) & (labels < n_classes)
    if not np.all(keep):
        logger.info(f"Class means: ignoring {int(np.count_nonzero(~keep))} sample(s) outside the {n_classes} seen classes")
    sums = np.zeros((n_classes, X.shape[1]))
    np.add.at(sums, labels[keep], X[keep])
    counts = np.bincount(labels[keep], minlength=n_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyInputError(f"No samples for {missing.size} seen class(es), first: {int(missing[0])}")
    return ClassMeanMatrix(matrix=(sums / counts[:, None]).T)


def visual_class_matrix(W1, M: Optional[ClassMeanMatrix] = None) -> Tuple[np.ndarray, np.ndarray]:
    """F = f(W1 M) and its column mean; M = I when not given"""
    W1 = np.asarray(getattr(W1, 'matrix', W1), dtype=np.float64)
    if M is None or M.is_identity:
        product = W1
    else:
        if M.matrix.shape[0] != W1.shape[1]:
            raise DimensionMismatchError(f"W1 has {W1.shape[1]} columns but M has {M.matrix.shape[0]} rows")
        product = W1 @ M.matrix
    F = l1_normalize_columns(product)
    return F, F.mean(axis=1)


def default_ridge(X: np.ndarray, scale: float = DEFAULT_RIDGE_SCALE) -> float:
    """scale * trace(C) / dim for centered view X (dim x samples)"""
    return scale * float(np.sum(X * X)) / X.shape[1] / X.shape[0]


def _view_basis(X: np.ndarray, ridge: float, name: str):
    """
    Thin SVD basis Q of a centered view and the diagonal pieces of
    (C + ridge I)^(-1/2) restricted to it.
    """
    n = X.shape[1]
    Q, sigma, Rt = linalg.svd(X, full_matrices=False)
    tol = max(X.shape) * np.finfo(float).eps * (sigma[0] if sigma.size else 0.0)
    rank = int(np.count_nonzero(sigma > tol))
    if rank == 0:
        raise DegenerateInputError(f"The {name} view has zero variance")
    Q, sigma, R = Q[:, :rank], sigma[:rank], Rt[:rank].T
    spectrum = sigma ** 2 / n + ridge
    return Q, R, sigma / np.sqrt(spectrum), 1.0 / np.sqrt(spectrum)


def fit_cca(F, W2c, c: Optional[int] = None, ridge: Optional[float] = None,
            ridge_scale: float = DEFAULT_RIDGE_SCALE) -> CcaModel:
    """
    CCA between the visual view F (d x n) and the semantic view W2c (s x n),
    columns paired by class.

    `ridge=None` uses scale * trace(C_kk) / dim per view. Covariances are
    normalized by 1/n. `c` defaults to d.
    """
    F = np.asarray(F, dtype=np.float64)
    W2c = np.asarray(W2c, dtype=np.float64)
    if F.ndim != 2 or W2c.ndim != 2 or F.shape[1] != W2c.shape[1]:
        raise DimensionMismatchError(f"Views must pair the same classes, got {F.shape} and {W2c.shape}")
    d, n = F.shape
    s = W2c.shape[0]
    if n < 2:
        raise EmptyInputError(f"CCA needs at least 2 paired classes, got {n}")
    if ridge is not None and ridge < 0:
        raise DegenerateInputError(f"Ridge must be non-negative, got {ridge}")

    visual_mean = F.mean(axis=1)
    X1 = F - visual_mean[:, None]
    X2 = W2c - W2c.mean(axis=1)[:, None]
    ridges = (
        default_ridge(X1, ridge_scale) if ridge is None else float(ridge),
        default_ridge(X2, ridge_scale) if ridge is None else float(ridge),
    )

    Q1, R1, D1, S1 = _view_basis(X1, ridges[0], 'visual')
    Q2, R2, D2, S2 = _view_basis(X2, ridges[1], 'semantic')
    c = d if not c else c
    limit = min(d, s, n - 1, Q1.shape[1], Q2.shape[1])
    if c > limit:
        raise RankError(f"CCA dimension c={c} exceeds min(d, s, n-1, view ranks) = {limit}")

    cross = (D1[:, None] * (R1.T @ R2) * D2[None, :]) / n
    A, rho, Bt = linalg.svd(cross)
    A, rho, B = A[:, :c], rho[:c], Bt[:c].T

    P1 = Q1 @ (S1[:, None] * A)
    P2 = Q2 @ (S2[:, None] * B)
    pivots = np.argmax(np.abs(P1), axis=0)
    signs = np.sign(P1[pivots, np.arange(c)])
    signs[signs == 0] = 1.0
    P1, P2 = P1 * signs, P2 * signs

    logger.info(
        f"CCA on {n} classes: d={d}, s={s}, c={c}, ridge=({ridges[0]:.3g}, {ridges[1]:.3g}), "
        f"top correlation {rho[0]:.4f}, smallest {rho[-1]:.4f}"
    )
    return CcaModel(
        P1=P1, P2=P2, correlations=np.clip(rho, 0.0, 1.0), ridge=ridges, visual_mean=visual_mean,
    )


def view_covariance(X, ridge: float = 0.0) -> np.ndarray:
    """(1/n) Xc Xc^T + ridge I for a dim x samples view (small views only)"""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=1)[:, None]
    return Xc @ Xc.T / X.shape[1] + ridge * np.eye(X.shape[0])


def save_cca(model: CcaModel, path) -> Path:
    arrays = {'P1': model.P1, 'P2': model.P2, 'correlations': model.correlations, 'visual_mean': model.visual_mean}
    attributes = {'ridge': list(model.ridge)}
    if model.features is not None:
        arrays['W1'] = model.features.matrix
        attributes.update(feature_tag=model.features.tag, transform=model.features.transform_tag)
    return save_model(path, 'cca', arrays, attributes)


def load_cca(path) -> CcaModel:
    attributes, arrays = load_model(path, 'cca')
    features = None
    if 'W1' in arrays:
        features = VisualFeatures(
            matrix=arrays['W1'], tag=attributes.get('feature_tag', ''), transform_tag=attributes.get('transform', ''),
        )
    P1 = arrays['P1']
    return CcaModel(
        P1=P1,
        P2=arrays['P2'],
        correlations=arrays['correlations'].reshape(-1),
        ridge=tuple(attributes['ridge']),
        visual_mean=arrays['visual_mean'].reshape(-1),
        features=features,
    )
