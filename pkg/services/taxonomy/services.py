"""
Taxonomy loading, path-based class similarity and classic MDS.
"""
import csv
import logging
from pathlib import Path
from typing import Iterable, Optional, Tuple

import networkx as nx
import numpy as np
from scipy.spatial.distance import pdist, squareform

from core.exceptions import DegenerateInputError, DimensionMismatchError, GraphError, NonFiniteInputError
from core.services.model_store import load_model, save_model
from core.services.parallel import ordered_map
from services.whitening.services import DEFAULT_FLOOR_RATIO, eigendecompose
from .models import SEEN, UNSEEN, ClassEntry, ClassRegistry, DistanceMatrix, SemanticEmbedding, TaxonomyGraph

logger = logging.getLogger(__name__)

REGISTRY_SIDECAR = 'classes.tsv'


def _data_lines(path) -> Iterable[Tuple[int, list]]:
    with open(path, newline='') as handle:
        for number, line in enumerate(handle, start=1):
            line = line.rstrip('\n').rstrip('\r')
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            yield number, line.split('\t')


def build_graph(edges: Iterable[Tuple[str, str]], labels=None) -> TaxonomyGraph:
    graph = nx.Graph()
    duplicates = 0
    for parent, child in edges:
        if parent == child:
            raise GraphError(f"Self-loop on node {parent!r}")
        if graph.has_edge(parent, child):
            duplicates += 1
            continue
        graph.add_edge(parent, child)
    if duplicates:
        logger.warning(f"Skipped {duplicates} duplicate taxonomy edge(s)")
    return TaxonomyGraph(graph=graph, labels=dict(labels or {}))


def read_taxonomy(path) -> TaxonomyGraph:
    """Edge list file: one `parent<TAB>child` pair per line"""
    edges = []
    for number, parts in _data_lines(path):
        if len(parts) != 2 or not all(parts):
            raise GraphError(f"{path}:{number}: expected 'parent<TAB>child', got {len(parts)} field(s)")
        edges.append((parts[0], parts[1]))
    taxonomy = build_graph(edges)
    logger.info(f"Loaded taxonomy {path}: {taxonomy.n_nodes} nodes, {taxonomy.n_edges} edges")
    return taxonomy


def write_taxonomy(edges: Iterable[Tuple[str, str]], path) -> Path:
    path = Path(path)
    with open(path, 'w', newline='') as handle:
        for parent, child in edges:
            handle.write(f"{parent}\t{child}\n")
    return path


def read_registry(path, taxonomy: Optional[TaxonomyGraph] = None) -> ClassRegistry:
    """Registry file: `class_index<TAB>node_id<TAB>seen|unseen<TAB>label` (label optional)"""
    entries = []
    for number, parts in _data_lines(path):
        if len(parts) not in (3, 4):
            raise GraphError(f"{path}:{number}: expected 'index<TAB>node<TAB>seen|unseen<TAB>label'")
        try:
            index = int(parts[0])
        except ValueError:
            raise GraphError(f"{path}:{number}: class index {parts[0]!r} is not an integer")
        entries.append(ClassEntry(index=index, node=parts[1], pool=parts[2], label=parts[3] if len(parts) == 4 else ''))

    registry = ClassRegistry(entries=tuple(entries))
    if taxonomy is not None:
        attach_registry(taxonomy, registry)
    return registry


def attach_registry(taxonomy: TaxonomyGraph, registry: ClassRegistry) -> None:
    """Check every registered class exists in the graph and copy its label"""
    for entry in registry.entries:
        if entry.node not in taxonomy:
            raise GraphError(f"Registered class {entry.index} maps to unknown node {entry.node!r}")
        if entry.label:
            taxonomy.labels[entry.node] = entry.label


def write_registry(registry: ClassRegistry, path) -> Path:
    path = Path(path)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, delimiter='\t', lineterminator='\n')
        for entry in registry.entries:
            writer.writerow([entry.index, entry.node, entry.pool, entry.label])
    return path


def make_registry(seen_nodes, unseen_nodes, labels=None) -> ClassRegistry:
    labels = labels or {}
    nodes = [(node, SEEN) for node in seen_nodes] + [(node, UNSEEN) for node in unseen_nodes]
    return ClassRegistry(entries=tuple(
        ClassEntry(index=i, node=node, pool=pool, label=labels.get(node, '')) for i, (node, pool) in enumerate(nodes)
    ))


def shortest_path_length(taxonomy: TaxonomyGraph, a: str, b: str) -> Optional[int]:
    """Hop count on the undirected graph; None when b is unreachable from a"""
    taxonomy.require(a)
    taxonomy.require(b)
    try:
        return nx.shortest_path_length(taxonomy.graph, a, b)
    except nx.NetworkXNoPath:
        return None


def path_similarity(taxonomy: TaxonomyGraph, a: str, b: str) -> float:
    """1 / (1 + path length); 0 for unreachable pairs"""
    length = shortest_path_length(taxonomy, a, b)
    return 0.0 if length is None else 1.0 / (1.0 + length)


def similarity_row(taxonomy: TaxonomyGraph, source: str, targets) -> np.ndarray:
    """Path similarity from one node to each target, from a single breadth-first search"""
    taxonomy.require(source)
    lengths = nx.single_source_shortest_path_length(taxonomy.graph, source)
    return np.array([1.0 / (1.0 + lengths[t]) if t in lengths else 0.0 for t in targets])


def distance_matrix(taxonomy: TaxonomyGraph, registry: ClassRegistry, threads: int = 1) -> DistanceMatrix:
    """D_ij = 1 - path_similarity over registered classes, one BFS per class"""
    nodes = registry.nodes
    if len(nodes) < 2:
        raise DegenerateInputError(f"Need at least 2 registered classes, got {len(nodes)}")
    for node in nodes:
        taxonomy.require(node)

    rows = list(ordered_map(lambda node: similarity_row(taxonomy, node, nodes), nodes, threads))
    D = 1.0 - np.vstack(rows)
    np.fill_diagonal(D, 0.0)
    unreachable = int(np.count_nonzero(D == 1.0)) // 2
    if unreachable:
        logger.warning(f"{unreachable} class pair(s) are unreachable in the taxonomy; their distance is 1")
    return DistanceMatrix(values=D, nodes=nodes)


def _check_distances(D) -> np.ndarray:
    D = np.asarray(getattr(D, 'values', D), dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionMismatchError(f"Distance matrix must be square, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise NonFiniteInputError("Distance matrix contains non-finite entries")
    if not np.array_equal(D, D.T):
        raise DegenerateInputError("Distance matrix is not symmetric")
    return D


def classical_mds(D, max_dim: int, n_seen: Optional[int] = None, registry: Optional[ClassRegistry] = None,
                  floor_ratio: float = DEFAULT_FLOOR_RATIO) -> SemanticEmbedding:
    """
    Classic MDS: eigendecompose B = -1/2 J (D o D) J and keep the top
    positive eigenvalues (at most max_dim) as X = E sqrt(L).

    Eigenvalues at or below floor_ratio * lambda_max are dropped, so the
    retained dimension may be smaller than requested. The embedding comes
    back as dims x classes.
    """
    if max_dim < 1:
        raise DegenerateInputError(f"max_dim must be at least 1, got {max_dim}")
    D = _check_distances(D)
    N = D.shape[0]
    n_seen = N if n_seen is None else n_seen

    if N == 1:
        return SemanticEmbedding(
            coordinates=np.zeros((0, 1)), eigenvalues=np.zeros(1), n_seen=n_seen,
            reconstruction_error=0.0, registry=registry,
        )

    J = np.eye(N) - np.full((N, N), 1.0 / N)
    B = -0.5 * J @ (D * D) @ J
    eigenvalues, eigenvectors = eigendecompose(B)

    floor = floor_ratio * max(float(eigenvalues[0]), 0.0)
    positive = int(np.count_nonzero(eigenvalues > floor))
    dim = min(max_dim, positive)
    X = eigenvectors[:, :dim] * np.sqrt(eigenvalues[:dim])

    negative = eigenvalues[eigenvalues < -floor]
    if negative.size:
        logger.warning(
            f"Distances are not Euclidean: dropped {negative.size} negative Gram eigenvalue(s), "
            f"most negative {negative.min():.4g} (largest {eigenvalues[0]:.4g})"
        )
    error = float(np.abs(squareform(pdist(X)) - D).max()) if dim else float(np.abs(D).max())
    logger.info(f"MDS on {N} classes: kept {dim} of {positive} positive dimension(s), max distance error {error:.3e}")
    return SemanticEmbedding(
        coordinates=X.T.copy(),
        eigenvalues=eigenvalues,
        n_seen=n_seen,
        reconstruction_error=error,
        registry=registry,
    )


def save_embedding(embedding: SemanticEmbedding, path) -> Path:
    path = save_model(
        path,
        'embedding',
        {'coordinates': embedding.coordinates, 'eigenvalues': embedding.eigenvalues},
        {
            'dim': embedding.dim,
            'n_seen': embedding.n_seen,
            'n_classes': embedding.n_classes,
            'reconstruction_error': embedding.reconstruction_error,
        },
    )
    if embedding.registry is not None:
        write_registry(embedding.registry, Path(path) / REGISTRY_SIDECAR)
    return path


def load_embedding(path) -> SemanticEmbedding:
    attributes, arrays = load_model(path, 'embedding')
    sidecar = Path(path) / REGISTRY_SIDECAR
    coordinates = arrays['coordinates'].reshape(int(attributes['dim']), int(attributes['n_classes']))
    return SemanticEmbedding(
        coordinates=coordinates,
        eigenvalues=arrays['eigenvalues'],
        n_seen=int(attributes['n_seen']),
        reconstruction_error=float(attributes['reconstruction_error']),
        registry=read_registry(sidecar) if sidecar.exists() else None,
    )
