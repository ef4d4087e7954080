"""
Synthetic worlds with known ground truth.

The ICA world is a noise-free mixture x = A s of unit-variance Laplace
sources; the zero-shot world is a set of seen and unseen classes with latent
attribute vectors, class-conditional classifier logits and a taxonomy tree
built by clustering the attributes.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import pdist, squareform
from scipy.stats import spearmanr

from core.exceptions import ConfigError, DegenerateInputError
from core.services.matrix_io import write_labels, write_matrix
from services.ica.models import SourceModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcaWorldSpec:
    n_sources: int = 10
    n_samples: int = 200_000
    condition_bound: float = 10.0
    seed: int = 0
    identity_mixing: bool = False
    max_tries: int = 1000

    def __post_init__(self):
        if self.n_sources < 1 or self.n_samples < 1 or self.max_tries < 1:
            raise ConfigError("Source count, sample count and retry limit must be positive")
        if not self.condition_bound >= 1.0:
            raise ConfigError(f"Condition bound must be at least 1, got {self.condition_bound}")


@dataclass(frozen=True)
class IcaWorld:
    data: np.ndarray
    sources: np.ndarray
    source_model: SourceModel

    @property
    def mixing(self) -> np.ndarray:
        return self.source_model.mixing


def laplace_sources(rng: np.random.Generator, n_samples: int, n_sources: int) -> np.ndarray:
    """iid Laplace(0, 1/sqrt 2): zero mean, unit variance"""
    return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(n_samples, n_sources))


def random_mixing(rng: np.random.Generator, n: int, condition_bound: float, max_tries: int) -> np.ndarray:
    """Gaussian n x n matrix, resampled until its condition number is within the bound"""
    for attempt in range(1, max_tries + 1):
        A = rng.standard_normal((n, n))
        condition = np.linalg.cond(A)
        if condition <= condition_bound:
            logger.debug(f"Mixing matrix accepted after {attempt} draw(s), condition {condition:.3f}")
            return A
    raise DegenerateInputError(
        f"No {n}x{n} mixing matrix with condition <= {condition_bound} in {max_tries} draws"
    )


def generate_ica_world(spec: IcaWorldSpec) -> IcaWorld:
    rng = np.random.default_rng(spec.seed)
    if spec.identity_mixing:
        A = np.eye(spec.n_sources)
    else:
        A = random_mixing(rng, spec.n_sources, spec.condition_bound, spec.max_tries)
    S = laplace_sources(rng, spec.n_samples, spec.n_sources)
    logger.info(
        f"Generated ICA world: {spec.n_sources} Laplace sources, {spec.n_samples} samples, "
        f"mixing condition {np.linalg.cond(A):.3f}"
    )
    return IcaWorld(data=S @ A.T, sources=S, source_model=SourceModel(mixing=A))


@dataclass(frozen=True)
class ZeroShotWorldSpec:
    """
    Seen and unseen classes with latent attributes.

    Seen attributes are unit vectors drawn around `n_groups` group centres.
    Each unseen class is w a_p + (1 - w) a_q for a distinct seen primary p,
    another seen class q and w ~ U(0.6, 0.85). A sample of class j has
    attribute a = a_j + jitter and logits y_i = -beta/2 ||a - a_i||^2 + noise
    over the seen classes i.
    """
    n_seen: int = 40
    n_unseen: int = 20
    attribute_dim: int = 8
    n_groups: int = 5
    group_spread: float = 0.5
    beta: float = 10.0
    noise: float = 0.3
    jitter: float = 0.3
    train_per_class: int = 100
    test_per_class: int = 20
    branching: int = 2
    min_correlation: float = 0.5
    seed: int = 0

    def __post_init__(self):
        counts = ('n_seen', 'attribute_dim', 'n_groups', 'train_per_class', 'test_per_class')
        bad = [name for name in counts if getattr(self, name) < 1]
        if bad or self.n_unseen < 0:
            raise ConfigError(f"Counts must be positive: {', '.join(bad) or 'n_unseen'}")
        if self.n_unseen > self.n_seen:
            raise ConfigError(f"Each unseen class needs a distinct seen primary: {self.n_unseen} > {self.n_seen}")
        if self.n_seen < 2:
            raise ConfigError("At least 2 seen classes are needed")
        if self.branching < 2:
            raise ConfigError(f"Taxonomy branching factor must be at least 2, got {self.branching}")
        if self.noise < 0 or self.jitter < 0 or self.beta <= 0:
            raise ConfigError("noise and jitter must be non-negative and beta positive")


@dataclass(frozen=True)
class ZeroShotWorld:
    spec: ZeroShotWorldSpec
    attributes: np.ndarray
    primaries: np.ndarray
    train_logits: np.ndarray
    train_labels: np.ndarray
    test_logits: np.ndarray
    test_labels: np.ndarray
    edges: tuple
    registry: 'ClassRegistry'
    correlation: float

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    def seen_test(self):
        mask = self.test_labels < self.spec.n_seen
        return self.test_logits[mask], self.test_labels[mask]

    def unseen_test(self):
        mask = self.test_labels >= self.spec.n_seen
        return self.test_logits[mask], self.test_labels[mask]


def class_node(index: int) -> str:
    return f"c{index:04d}"


def _seen_attributes(rng: np.random.Generator, spec: ZeroShotWorldSpec) -> np.ndarray:
    centres = rng.standard_normal((spec.n_groups, spec.attribute_dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    groups = np.arange(spec.n_seen) % spec.n_groups
    spread = spec.group_spread / np.sqrt(spec.attribute_dim)
    attributes = centres[groups] + spread * rng.standard_normal((spec.n_seen, spec.attribute_dim))
    return attributes / np.linalg.norm(attributes, axis=1, keepdims=True)


def _unseen_attributes(rng: np.random.Generator, seen: np.ndarray, n_unseen: int):
    n_seen = seen.shape[0]
    primaries = rng.permutation(n_seen)[:n_unseen]
    partners = np.array([rng.choice(np.delete(np.arange(n_seen), p)) for p in primaries], dtype=np.int64)
    weights = rng.uniform(0.6, 0.85, size=n_unseen)[:, None]
    return weights * seen[primaries] + (1.0 - weights) * seen[partners], primaries


def class_logits(rng: np.random.Generator, attributes: np.ndarray, seen: np.ndarray, labels: np.ndarray,
                 spec: ZeroShotWorldSpec) -> np.ndarray:
    """Logits over the seen classes for samples of the given classes"""
    dim = attributes.shape[1]
    sample_attributes = attributes[labels]
    if spec.noise > 0:
        sample_attributes = sample_attributes + (spec.jitter * spec.noise / np.sqrt(dim)) * rng.standard_normal(
            sample_attributes.shape
        )
    squared = ((sample_attributes[:, None, :] - seen[None, :, :]) ** 2).sum(axis=2)
    logits = -0.5 * spec.beta * squared
    if spec.noise > 0:
        logits = logits + spec.noise * rng.standard_normal(logits.shape)
    return logits


def taxonomy_edges(attributes: np.ndarray, branching: int) -> list:
    """
    Uniform-depth tree over class nodes from nested cuts of an average-linkage
    hierarchy: level l has at most branching**l clusters, leaves hang off the
    deepest level.
    """
    n = attributes.shape[0]
    Z = hierarchy.linkage(attributes, method='average')
    levels = []
    k = branching
    while k < n:
        levels.append(hierarchy.fcluster(Z, k, criterion='maxclust'))
        k *= branching

    edges = []
    parents = ['root'] * n
    for depth, labels in enumerate(levels, start=1):
        nodes = [f"g{depth}_{label}" for label in labels]
        for parent, node in sorted(set(zip(parents, nodes))):
            edges.append((parent, node))
        parents = nodes
    edges.extend((parent, class_node(i)) for i, parent in enumerate(parents))
    return edges


def generate_zeroshot_world(spec: ZeroShotWorldSpec) -> ZeroShotWorld:
    from services.taxonomy.services import build_graph, distance_matrix, make_registry

    rng = np.random.default_rng(spec.seed)
    seen = _seen_attributes(rng, spec)
    unseen, primaries = _unseen_attributes(rng, seen, spec.n_unseen)
    attributes = np.vstack([seen, unseen])
    n_classes = attributes.shape[0]

    train_labels = np.repeat(np.arange(spec.n_seen), spec.train_per_class)
    test_labels = np.repeat(np.arange(n_classes), spec.test_per_class)
    train_logits = class_logits(rng, attributes, seen, train_labels, spec)
    test_logits = class_logits(rng, attributes, seen, test_labels, spec)

    edges = taxonomy_edges(attributes, spec.branching)
    registry = make_registry(
        [class_node(i) for i in range(spec.n_seen)],
        [class_node(i) for i in range(spec.n_seen, n_classes)],
        labels={class_node(i): f"{'seen' if i < spec.n_seen else 'unseen'}-{i}" for i in range(n_classes)},
    )
    graph_distances = distance_matrix(build_graph(edges), registry).values
    correlation, _ = spearmanr(squareform(graph_distances, checks=False), pdist(attributes))
    correlation = float(correlation)
    if correlation < spec.min_correlation:
        logger.warning(
            f"Taxonomy/attribute distance correlation {correlation:.3f} is below {spec.min_correlation}; "
            f"the world is too small or too noisy for a faithful taxonomy"
        )
    logger.info(
        f"Generated zero-shot world: {spec.n_seen} seen / {spec.n_unseen} unseen classes, "
        f"{len(edges)} taxonomy edges, distance correlation {correlation:.3f}"
    )
    return ZeroShotWorld(
        spec=spec,
        attributes=attributes,
        primaries=primaries,
        train_logits=train_logits,
        train_labels=train_labels,
        test_logits=test_logits,
        test_labels=test_labels,
        edges=tuple(edges),
        registry=registry,
        correlation=correlation,
    )


def write_ica_world(world: IcaWorld, directory) -> Path:
    """data.mat (samples x n), mixing.mat and sources.mat"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(world.data, directory / 'data.mat')
    write_matrix(world.mixing, directory / 'mixing.mat')
    write_matrix(world.sources, directory / 'sources.mat')
    return directory


def write_zeroshot_world(world: ZeroShotWorld, directory) -> Path:
    """
    Logit matrices with labels, the taxonomy and registry, and a run config
    pointing at them.
    """
    from services.taxonomy.services import write_registry, write_taxonomy

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(world.train_logits, directory / 'train.mat')
    write_labels(world.train_labels, directory / 'train.labels')
    write_matrix(world.test_logits, directory / 'test.mat')
    write_labels(world.test_labels, directory / 'test.labels')
    write_matrix(world.attributes, directory / 'attributes.mat')
    write_taxonomy(world.edges, directory / 'taxonomy.tsv')
    write_registry(world.registry, directory / 'registry.tsv')
    (directory / 'run.cfg').write_text(
        f"TAXONOMY={directory / 'taxonomy.tsv'}\n"
        f"REGISTRY={directory / 'registry.tsv'}\n"
        f"OUTPUTS={directory / 'test.mat'}\n"
        f"LABELS={directory / 'test.labels'}\n"
        f"SEED={world.spec.seed}\n"
    )
    (directory / 'world.json').write_text(json.dumps(
        {**asdict(world.spec), 'correlation': world.correlation, 'primaries': [int(p) for p in world.primaries]},
        indent=2,
        sort_keys=True,
    ))
    return directory
