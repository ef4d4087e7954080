"""
Class taxonomy, class registry and the semantic features derived from them.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import networkx as nx
import numpy as np

from core.exceptions import GraphError

SEEN = 'seen'
UNSEEN = 'unseen'


@dataclass(frozen=True)
class ClassEntry:
    index: int
    node: str
    pool: str
    label: str = ''

    @property
    def seen(self) -> bool:
        return self.pool == SEEN

    @property
    def display(self) -> str:
        return self.label or self.node


@dataclass(frozen=True)
class ClassRegistry:
    """
    Class index -> taxonomy node, seen classes first.

    Index i is the i-th entry; seen classes take indices 0..n-1 and unseen
    classes n..n+m-1, so column order of every class matrix follows the
    registry.
    """
    entries: tuple

    def __post_init__(self):
        seen_done = False
        nodes = set()
        for position, entry in enumerate(self.entries):
            if entry.index != position:
                raise GraphError(f"Registry index {entry.index} at position {position}; indices must run 0..N-1 in order")
            if entry.pool not in (SEEN, UNSEEN):
                raise GraphError(f"Class {entry.index}: pool must be 'seen' or 'unseen', got {entry.pool!r}")
            if entry.seen and seen_done:
                raise GraphError(f"Class {entry.index} is seen but follows unseen classes; list seen classes first")
            seen_done = seen_done or not entry.seen
            if entry.node in nodes:
                raise GraphError(f"Node {entry.node!r} is registered twice")
            nodes.add(entry.node)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> ClassEntry:
        return self.entries[index]

    @property
    def n_seen(self) -> int:
        return sum(1 for entry in self.entries if entry.seen)

    @property
    def n_unseen(self) -> int:
        return len(self.entries) - self.n_seen

    @property
    def seen(self) -> List[ClassEntry]:
        return [entry for entry in self.entries if entry.seen]

    @property
    def unseen(self) -> List[ClassEntry]:
        return [entry for entry in self.entries if not entry.seen]

    @property
    def nodes(self) -> List[str]:
        return [entry.node for entry in self.entries]

    def lookup(self, key) -> ClassEntry:
        """Find a class by index, node id or label"""
        if isinstance(key, (int, np.integer)) or (isinstance(key, str) and key.isdigit()):
            index = int(key)
            if 0 <= index < len(self.entries):
                return self.entries[index]
            raise GraphError(f"Class index {index} out of range 0..{len(self.entries) - 1}")
        for entry in self.entries:
            if key in (entry.node, entry.label):
                return entry
        raise GraphError(f"Unknown class {key!r}")


@dataclass
class TaxonomyGraph:
    """Undirected hierarchy over node ids; edges are parent-child links"""
    graph: nx.Graph
    labels: Dict[str, str] = field(default_factory=dict)

    def __contains__(self, node) -> bool:
        return node in self.graph

    @property
    def n_nodes(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def n_edges(self) -> int:
        return self.graph.number_of_edges()

    def require(self, node: str) -> None:
        if node not in self.graph:
            raise GraphError(f"Unknown taxonomy node {node!r}")


@dataclass(frozen=True)
class DistanceMatrix:
    """1 - path similarity over registered classes (registry order)"""
    values: np.ndarray
    nodes: List[str]

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SemanticEmbedding:
    """
    MDS coordinates, one column per class (seen columns first).

    `eigenvalues` is the full descending spectrum of the centered Gram
    matrix; the first `dim` entries are the retained ones.
    """
    coordinates: np.ndarray
    eigenvalues: np.ndarray
    n_seen: int
    reconstruction_error: float
    registry: Optional[ClassRegistry] = None

    @property
    def dim(self) -> int:
        return self.coordinates.shape[0]

    @property
    def n_classes(self) -> int:
        return self.coordinates.shape[1]

    @property
    def seen(self) -> np.ndarray:
        """W2: s x n"""
        return self.coordinates[:, :self.n_seen]

    @property
    def unseen(self) -> np.ndarray:
        """W3: s x m"""
        return self.coordinates[:, self.n_seen:]
