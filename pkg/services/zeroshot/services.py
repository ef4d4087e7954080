"""
Zero-shot prediction by cosine similarity in the CCA common space, flat
hit@k evaluation and the class-ranking analyses.

Every ranking sorts by score descending and breaks ties by ascending class
index.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import DegenerateInputError, DimensionMismatchError, EmptyInputError, GraphError
from core.services.model_store import load_model, save_model
from core.services.parallel import ordered_map
from services.bridge.models import CcaModel
from services.bridge.services import center_semantic, l1_normalize_columns
from services.distributions.models import SOFTMAX
from services.distributions.services import read_transformed, resolve_transform, transform_tag_for
from services.taxonomy.models import ClassRegistry, TaxonomyGraph
from services.taxonomy.services import read_registry, similarity_row, write_registry
from .models import POOLS, SEEN_POOL, UNSEEN_POOL, AccuracyRow, EvaluationResult, Prediction, ZeroShotIndex

logger = logging.getLogger(__name__)

REGISTRY_SIDECAR = 'classes.tsv'
EVALUATION_CHUNK_ROWS = 4096
NEVER_HIT = np.iinfo(np.int64).max


def _ranked(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Order of `scores` descending, ties by ascending id"""
    return np.lexsort((ids, -scores))


def _normalized_columns(X: np.ndarray, ids: np.ndarray, pool: str):
    norms = np.linalg.norm(X, axis=0)
    scale = norms.max() if norms.size else 0.0
    zero = norms <= np.finfo(float).eps * max(scale, 1.0)
    if np.any(zero):
        logger.warning(
            f"Excluding {int(zero.sum())} {pool} class(es) with a zero-norm projected column: "
            f"{[int(i) for i in ids[zero]][:10]}"
        )
    keep = ~zero
    return X[:, keep] / norms[keep], norms[keep], ids[keep], [int(i) for i in ids[zero]]


def build_index(cca: CcaModel, W1, W2c, W3c=None, registry: Optional[ClassRegistry] = None,
                transform_tag: str = '') -> ZeroShotIndex:
    """Project and normalize class features once; W2c / W3c are centered semantic features"""
    W1 = np.asarray(getattr(W1, 'matrix', W1), dtype=np.float64)
    W2c = np.asarray(W2c, dtype=np.float64)
    W3c = np.zeros((W2c.shape[0], 0)) if W3c is None else np.asarray(W3c, dtype=np.float64)
    n, m = W2c.shape[1], W3c.shape[1]
    if W1.shape[0] != cca.P1.shape[0]:
        raise DimensionMismatchError(f"W1 has {W1.shape[0]} rows but P1 expects {cca.P1.shape[0]}")
    if W2c.shape[0] != cca.P2.shape[0] or W3c.shape[0] != cca.P2.shape[0]:
        raise DimensionMismatchError(f"Semantic features have {W2c.shape[0]} rows but P2 expects {cca.P2.shape[0]}")
    if registry is not None and (registry.n_seen, registry.n_unseen) != (n, m):
        raise DimensionMismatchError(
            f"Registry has {registry.n_seen} seen / {registry.n_unseen} unseen classes, "
            f"features have {n} / {m}"
        )

    seen, seen_norms, seen_ids, seen_out = _normalized_columns(cca.P2.T @ W2c, np.arange(n), SEEN_POOL)
    unseen, unseen_norms, unseen_ids, unseen_out = _normalized_columns(cca.P2.T @ W3c, np.arange(n, n + m), UNSEEN_POOL)
    if seen.shape[1] + unseen.shape[1] == 0:
        raise DegenerateInputError("Every class was excluded from the index")

    feature_tag = cca.features.tag if cca.features is not None else ''
    return ZeroShotIndex(
        W1=W1,
        P1=cca.P1,
        visual_mean=cca.visual_mean,
        seen=seen,
        unseen=unseen,
        seen_norms=seen_norms,
        unseen_norms=unseen_norms,
        seen_ids=seen_ids,
        unseen_ids=unseen_ids,
        excluded=tuple(seen_out + unseen_out),
        n_seen_classes=n,
        registry=registry,
        feature_tag=feature_tag,
        transform_tag=transform_tag,
    )


def index_from_models(cca: CcaModel, embedding, transform_tag: str = '') -> ZeroShotIndex:
    if cca.features is None:
        raise DegenerateInputError("The CCA model carries no visual features W1")
    W2c, W3c, _ = center_semantic(embedding.seen, embedding.unseen)
    return build_index(cca, cca.features, W2c, W3c, embedding.registry, transform_tag)


def query_vectors(X, index: ZeroShotIndex) -> np.ndarray:
    """q = P1^T (f(W1 x) - f-bar) for each row of X; returns samples x c"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != index.n_inputs:
        raise DimensionMismatchError(f"Output vectors have {X.shape[1]} classes, index expects {index.n_inputs}")
    F = l1_normalize_columns(index.W1 @ X.T)
    return ((F - index.visual_mean[:, None]).T @ index.P1)


def cosine_scores(X, index: ZeroShotIndex, pool: str) -> Tuple[np.ndarray, np.ndarray]:
    """Cosine of each query against each pool column: (samples x pool size, pool ids)"""
    if pool not in POOLS:
        raise DegenerateInputError(f"Unknown pool {pool!r}, expected one of {POOLS}")
    Q = query_vectors(X, index)
    norms = np.linalg.norm(Q, axis=1)
    if np.any(norms == 0):
        raise DegenerateInputError(
            f"Query vector {int(np.flatnonzero(norms == 0)[0])} projects to zero; cosine similarity is undefined"
        )
    columns, ids = index.pool(pool)
    return (Q / norms[:, None]) @ columns, ids


def predict(x, index: ZeroShotIndex, top_k: int, pool: str = UNSEEN_POOL) -> Prediction:
    """Top-k classes of one output vector from the chosen pool"""
    if top_k < 1:
        raise DegenerateInputError(f"top_k must be at least 1, got {top_k}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError(f"predict takes one output vector, got shape {x.shape}")
    scores, ids = cosine_scores(x, index, pool)
    scores = scores[0]
    order = _ranked(scores, ids)[:top_k]
    return Prediction(class_ids=ids[order], scores=scores[order], pool=pool)


def predict_many(X, index: ZeroShotIndex, top_k: int, pool: str = UNSEEN_POOL) -> List[Prediction]:
    if top_k < 1:
        raise DegenerateInputError(f"top_k must be at least 1, got {top_k}")
    X = np.asarray(X, dtype=np.float64)
    scores, ids = cosine_scores(X, index, pool)
    predictions = []
    for row in scores:
        order = _ranked(row, ids)[:top_k]
        predictions.append(Prediction(class_ids=ids[order], scores=row[order], pool=pool))
    return predictions


def true_class_ranks(X, labels, index: ZeroShotIndex, pool: str) -> np.ndarray:
    """
    0-based rank of each sample's true class in its ranking over the pool.

    Labels of classes excluded from the index get a rank no k reaches.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores, ids = cosine_scores(X, index, pool)
    position = {int(class_id): j for j, class_id in enumerate(ids)}
    excluded = set(index.excluded)

    columns = np.array([position.get(int(label), -1) for label in labels], dtype=np.int64)
    missing = (columns < 0) & ~np.isin(labels, list(excluded))
    if np.any(missing):
        first = int(np.flatnonzero(missing)[0])
        raise DegenerateInputError(f"Sample {first}: label {int(labels[first])} is not in the {pool} pool")

    if ids.size == 0:
        return np.full(len(labels), NEVER_HIT, dtype=np.int64)
    found = columns >= 0
    true_scores = scores[np.arange(len(labels)), np.where(found, columns, 0)][:, None]
    ahead = (scores > true_scores) | ((scores == true_scores) & (ids[None, :] < labels[:, None]))
    return np.where(found, ahead.sum(axis=1), NEVER_HIT)


def topk_accuracy(X, labels, index: ZeroShotIndex, ks: Sequence[int], pool: str = UNSEEN_POOL,
                  threads: int = 1) -> EvaluationResult:
    """Flat hit@k for every k in `ks`"""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("Evaluation needs at least one labeled output vector")
    if X.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0]} output vectors but {labels.shape[0]} labels")
    if any(k < 1 for k in ks):
        raise DegenerateInputError(f"Every k must be at least 1, got {list(ks)}")

    bounds = range(0, X.shape[0], EVALUATION_CHUNK_ROWS)
    chunks = ordered_map(
        lambda start: true_class_ranks(
            X[start:start + EVALUATION_CHUNK_ROWS], labels[start:start + EVALUATION_CHUNK_ROWS], index, pool,
        ),
        bounds,
        threads,
    )
    ranks = np.concatenate(list(chunks))
    total = int(ranks.size)
    result = EvaluationResult(rows=[
        AccuracyRow(pool=pool, k=int(k), hits=int(np.count_nonzero(ranks < k)), total=total) for k in sorted(ks)
    ])
    logger.info(
        f"hit@k on {total} samples, {pool} pool of {index.pool_size(pool)}: "
        + ', '.join(f"@{row.k}={row.accuracy:.4f}" for row in result.rows)
    )
    return result


def pool_labels(labels, index: ZeroShotIndex, pool: str) -> np.ndarray:
    """Mask of samples whose label falls in the pool's class range (excluded classes included)"""
    labels = np.asarray(labels, dtype=np.int64)
    if pool == SEEN_POOL:
        return labels < index.n_seen_classes
    if pool == UNSEEN_POOL:
        return labels >= index.n_seen_classes
    return np.ones(labels.shape, dtype=bool)


def rank_classes_by_component(features, component: int, top: Optional[int] = None) -> List[Tuple[int, float]]:
    """Classes sorted by their signed value in one component row"""
    features = np.asarray(getattr(features, 'matrix', features), dtype=np.float64)
    if not 0 <= component < features.shape[0]:
        raise DimensionMismatchError(f"Component {component} out of range 0..{features.shape[0] - 1}")
    row = features[component]
    order = _ranked(row, np.arange(row.size))[:top]
    return [(int(i), float(row[i])) for i in order]


def dominant_component(features, class_index: int) -> int:
    """Component with the largest value in a class's column"""
    features = np.asarray(getattr(features, 'matrix', features), dtype=np.float64)
    if not 0 <= class_index < features.shape[1]:
        raise DimensionMismatchError(f"Class {class_index} out of range 0..{features.shape[1] - 1}")
    return int(np.argmax(features[:, class_index]))


def nearest_classes_visual(class_index: int, features, top: Optional[int] = None) -> List[Tuple[int, float]]:
    """Other classes ranked by cosine similarity of their feature columns"""
    features = np.asarray(getattr(features, 'matrix', features), dtype=np.float64)
    if not 0 <= class_index < features.shape[1]:
        raise DimensionMismatchError(f"Class {class_index} out of range 0..{features.shape[1] - 1}")
    norms = np.linalg.norm(features, axis=0)
    if norms[class_index] == 0:
        raise DegenerateInputError(f"Class {class_index} has a zero-norm feature column")
    safe = np.where(norms == 0, 1.0, norms)
    scores = (features[:, class_index] / norms[class_index]) @ (features / safe)
    others = np.array([i for i in range(features.shape[1]) if i != class_index], dtype=np.int64)
    order = _ranked(scores[others], others)[:top]
    return [(int(others[i]), float(scores[others[i]])) for i in order]


def nearest_classes_semantic(class_index: int, taxonomy: TaxonomyGraph, registry: ClassRegistry,
                             top: Optional[int] = None, candidates: Optional[Iterable[int]] = None
                             ) -> List[Tuple[int, float]]:
    """Other registered classes ranked by path similarity"""
    query = registry.lookup(int(class_index))
    pool = list(range(len(registry))) if candidates is None else sorted(set(int(c) for c in candidates))
    others = np.array([i for i in pool if i != query.index], dtype=np.int64)
    if others.size == 0:
        return []
    for i in others:
        if not 0 <= i < len(registry):
            raise GraphError(f"Candidate class {i} is not registered")
    scores = similarity_row(taxonomy, query.node, [registry[int(i)].node for i in others])
    order = _ranked(scores, others)[:top]
    return [(int(others[i]), float(scores[i])) for i in order]


def save_index(index: ZeroShotIndex, path) -> Path:
    path = save_model(
        path,
        'zeroshot-index',
        {
            'W1': index.W1,
            'P1': index.P1,
            'visual_mean': index.visual_mean,
            'seen': index.seen,
            'unseen': index.unseen,
            'seen_norms': index.seen_norms,
            'unseen_norms': index.unseen_norms,
        },
        {
            'seen_ids': [int(i) for i in index.seen_ids],
            'unseen_ids': [int(i) for i in index.unseen_ids],
            'excluded': list(index.excluded),
            'n_seen_classes': index.n_seen_classes,
            'feature_tag': index.feature_tag,
            'transform': index.transform_tag,
        },
    )
    if index.registry is not None:
        write_registry(index.registry, Path(path) / REGISTRY_SIDECAR)
    return path


def load_index(path) -> ZeroShotIndex:
    attributes, arrays = load_model(path, 'zeroshot-index')
    sidecar = Path(path) / REGISTRY_SIDECAR
    c = arrays['P1'].shape[1]
    return ZeroShotIndex(
        W1=arrays['W1'],
        P1=arrays['P1'],
        visual_mean=arrays['visual_mean'],
        seen=arrays['seen'].reshape(c, -1),
        unseen=arrays['unseen'].reshape(c, -1),
        seen_norms=arrays['seen_norms'],
        unseen_norms=arrays['unseen_norms'],
        seen_ids=np.array(attributes['seen_ids'], dtype=np.int64),
        unseen_ids=np.array(attributes['unseen_ids'], dtype=np.int64),
        excluded=tuple(attributes.get('excluded', [])),
        n_seen_classes=int(attributes['n_seen_classes']),
        registry=read_registry(sidecar) if sidecar.exists() else None,
        feature_tag=attributes.get('feature_tag', ''),
        transform_tag=attributes.get('transform', ''),
    )


class ZeroShotService:
    """Prediction and evaluation against one loaded index"""

    def __init__(self, index: ZeroShotIndex, threads: int = 1):
        self.index = index
        self.threads = threads

    @classmethod
    def load(cls, path, threads: int = 1) -> 'ZeroShotService':
        return cls(load_index(path), threads)

    def query_transform(self, path, mode: Optional[str] = None, T: float = 1.0,
                        fallback: str = SOFTMAX) -> Tuple[str, float]:
        """
        Transform for the rows of `path`.

        An explicit mode wins; otherwise rows are brought to the transform the
        index was built for, or to `fallback` at T for an untagged index.
        """
        target = self.index.transform_tag or transform_tag_for(fallback, T)
        return resolve_transform(path, mode, T, target)

    def read_queries(self, path, mode: Optional[str] = None, T: float = 1.0, fallback: str = SOFTMAX,
                     chunk_rows: int = EVALUATION_CHUNK_ROWS) -> np.ndarray:
        mode, T = self.query_transform(path, mode, T, fallback)
        return read_transformed(path, mode, T, chunk_rows)

    def predict(self, X, top_k: int, pool: str = UNSEEN_POOL) -> List[Prediction]:
        return predict_many(X, self.index, top_k, pool)

    def evaluate(self, X, labels, ks: Sequence[int], pools: Sequence[str]) -> Dict[str, EvaluationResult]:
        """hit@k per pool, over the samples labeled with that pool's classes; empty pools are skipped"""
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if X.shape[0] != labels.shape[0]:
            raise DimensionMismatchError(f"{X.shape[0]} output vectors but {labels.shape[0]} labels")
        results = {}
        for pool in pools:
            mask = pool_labels(labels, self.index, pool)
            if not mask.any():
                logger.warning(f"No samples labeled with {pool} classes; skipping that pool")
                continue
            results[pool] = topk_accuracy(X[mask], labels[mask], self.index, ks, pool, threads=self.threads)
        return results
