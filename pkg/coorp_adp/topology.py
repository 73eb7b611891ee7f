"""
Leader-follower communication graph.

Followers are numbered 1..N as in the literature; matrices are 0-based arrays
whose row/column i-1 belongs to follower i. An edge (j, i, w) means follower i
receives follower j's estimate with weight a_ij = w.
"""

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import TopologyError

logger = logging.getLogger(__name__)

Edge = Tuple[int, int, float]

DEFAULT_WEIGHT = 1.0


@dataclass(frozen=True)
class CommGraph:
    """
    Communication digraph among N followers plus the set of targets
    (followers with a direct link to the leader).

    Structural problems (self-loops, bad weights, out-of-range indices) are
    rejected at construction; the connectivity assumptions are checked by
    ``validate``.
    """
    num_followers: int
    edges: Tuple[Edge, ...]
    target_set: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_followers < 1:
            raise TopologyError(f"num_followers must be positive, got {self.num_followers}")
        seen = set()
        for j, i, w in self.edges:
            if not (1 <= i <= self.num_followers and 1 <= j <= self.num_followers):
                raise TopologyError(f"Edge ({j}->{i}) references a follower outside 1..{self.num_followers}")
            if i == j:
                raise TopologyError(f"Self-loop on follower {i} is not allowed (a_ii must be 0)")
            if not w > 0:
                raise TopologyError(f"Edge ({j}->{i}) has nonpositive weight {w}")
            if (j, i) in seen:
                raise TopologyError(f"Duplicate edge ({j}->{i})")
            seen.add((j, i))
        for t in self.target_set:
            if not 1 <= t <= self.num_followers:
                raise TopologyError(f"Target follower {t} outside 1..{self.num_followers}")

    @classmethod
    def from_undirected(
        cls,
        num_followers: int,
        pairs: Iterable[Sequence[float]],
        targets: Iterable[int],
    ) -> "CommGraph":
        """
        Build a graph from undirected pairs [i, j] or [i, j, w]; each pair adds
        both directions with the same weight (default 1.0).
        """
        edges: List[Edge] = []
        for pair in pairs:
            if len(pair) not in (2, 3):
                raise TopologyError(f"Edge entries must be [i, j] or [i, j, w], got {list(pair)}")
            i, j = int(pair[0]), int(pair[1])
            w = float(pair[2]) if len(pair) == 3 else DEFAULT_WEIGHT
            edges.append((j, i, w))
            edges.append((i, j, w))
        return cls(num_followers, tuple(edges), frozenset(int(t) for t in targets))

    @classmethod
    def chain(cls, num_followers: int, targets: Iterable[int] = (1,)) -> "CommGraph":
        """Undirected chain 1-2-...-N with unit weights"""
        pairs = [(k, k + 1) for k in range(1, num_followers)]
        return cls.from_undirected(num_followers, pairs, targets)

    def adjacency(self) -> np.ndarray:
        return adjacency(self)

    def laplacian(self) -> np.ndarray:
        return laplacian(self)

    def target_matrix(self) -> np.ndarray:
        return target_matrix(self)

    def neighbors(self, i: int) -> List[Tuple[int, float]]:
        """(j, a_ij) for every follower j that sends to follower i"""
        return sorted((j, w) for j, dst, w in self.edges if dst == i)

    def is_undirected(self) -> bool:
        A = self.adjacency()
        return bool(np.array_equal(A, A.T))

    def is_connected(self) -> bool:
        """Connectivity of the follower graph with edge directions ignored"""
        if self.num_followers == 1:
            return True
        A = self.adjacency()
        count, _ = connected_components(csr_matrix(A + A.T), directed=False)
        return count == 1

    def validate(self) -> "CommGraph":
        """
        Check the leader-follower connectivity assumption.

        Raises:
            TopologyError: Empty target set, directed follower graph, or
                disconnected follower graph
        """
        if not self.target_set:
            raise TopologyError("Target set is empty: no follower has access to the leader")
        if not self.is_undirected():
            raise TopologyError("Follower graph must be undirected (every a_ij must equal a_ji)")
        if not self.is_connected():
            raise TopologyError("Follower graph is disconnected")
        logger.debug(
            f"Graph valid: {self.num_followers} followers, {len(self.edges)} directed edges, "
            f"targets {sorted(self.target_set)}"
        )
        return self

    def to_dict(self) -> dict:
        return {
            'num_followers': self.num_followers,
            'edges': [[j, i, w] for j, i, w in self.edges],
            'targets': sorted(self.target_set),
        }


def adjacency(graph: CommGraph) -> np.ndarray:
    """N x N matrix with entry (i, j) = a_ij and zero diagonal"""
    A = np.zeros((graph.num_followers, graph.num_followers))
    for j, i, w in graph.edges:
        A[i - 1, j - 1] = w
    return A


def laplacian(graph: CommGraph) -> np.ndarray:
    """l_ii = sum_j a_ij and l_ij = -a_ij, so every row sums to zero"""
    A = adjacency(graph)
    return np.diag(A.sum(axis=1)) - A


def target_matrix(graph: CommGraph) -> np.ndarray:
    """Diagonal 0/1 matrix with ones at the target followers"""
    M = np.zeros((graph.num_followers, graph.num_followers))
    for t in graph.target_set:
        M[t - 1, t - 1] = 1.0
    return M
