"""Structural (generic) controllability of zero/nonzero patterns.

A pattern pair (F_A, F_B) defines a digraph with an edge x_k -> x_i when
F_A[i, k] = 1 and u_j -> x_i when F_B[i, j] = 1. The pair is structurally
controllable when every state is reachable from some input and the
structural rank of [F_A F_B] is n_x.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

__all__ = [
    "ZERO",
    "StructurePair",
    "binarize",
    "reachable_states",
    "is_input_connected",
    "max_matching",
    "s_rank",
    "sc",
    "dimsrs",
    "sc_dimsrs",
]

ZERO = 1e-300


@dataclass(frozen=True, eq=False)
class StructurePair:
    """Boolean patterns of A (n_x x n_x) and B (n_x x n_u), CSR."""

    FA: sparse.csr_matrix
    FB: sparse.csr_matrix

    @property
    def n_x(self) -> int:
        return self.FA.shape[0]

    @property
    def n_u(self) -> int:
        return self.FB.shape[1]

    def combined(self) -> sparse.csr_matrix:
        """[F_A F_B]: columns 0..n_x-1 are states, the rest inputs."""
        return sparse.hstack([self.FA, self.FB], format="csr")


def _pattern(M, n_rows: int | None = None) -> sparse.csr_matrix:
    if sparse.issparse(M):
        M = M.tocsr(copy=True)
        M.data = (np.abs(M.data) > ZERO).astype(np.int8)
        M.eliminate_zeros()
        M.sort_indices()
        return M
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.size == 0:
        return sparse.csr_matrix((n_rows if n_rows is not None else M.shape[0], M.shape[1]), dtype=np.int8)
    return sparse.csr_matrix((np.abs(M) > ZERO).astype(np.int8))


def binarize(A, B) -> StructurePair:
    """Exact nonzero patterns; |value| <= 1e-300 counts as zero."""
    FA = _pattern(A)
    n = FA.shape[0]
    if FA.shape != (n, n):
        raise ValueError(f"A must be square, got {FA.shape}")
    FB = _pattern(B, n)
    if FB.shape[0] != n:
        raise ValueError(f"B has {FB.shape[0]} rows, expected {n}")
    return StructurePair(FA, FB)


def reachable_states(sp: StructurePair) -> np.ndarray:
    """Boolean mask of states reachable from any input (multi-source BFS)."""
    n = sp.n_x
    # CSC of F_A: column k lists the states i with an edge x_k -> x_i
    succ = sp.FA.tocsc()
    seen = np.zeros(n, dtype=bool)
    starts = np.unique(sp.FB.tocoo().row)
    seen[starts] = True
    queue = deque(int(s) for s in starts)
    indptr, indices = succ.indptr, succ.indices
    while queue:
        k = queue.popleft()
        for i in indices[indptr[k] : indptr[k + 1]]:
            if not seen[i]:
                seen[i] = True
                queue.append(int(i))
    return seen


def is_input_connected(sp: StructurePair, labels: Sequence[str] | None = None) -> tuple[bool, list]:
    """Whether every state is reachable from an input, with the unreachable ones.

    Unreachable states are reported in state order, by label when ``labels``
    is given and by position otherwise.
    """
    seen = reachable_states(sp)
    missing = np.flatnonzero(~seen)
    names = [labels[i] for i in missing] if labels is not None else [int(i) for i in missing]
    return not names, names


def max_matching(adj: Sequence[Sequence[int]], n_right: int) -> int:
    """Maximum bipartite matching size by Hopcroft-Karp, O(E sqrt(V)).

    ``adj[u]`` lists right vertices adjacent to left vertex u. Iterative, so
    long augmenting paths do not hit the recursion limit.
    """
    n_left = len(adj)
    INF = n_left + 1
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    # greedy warm start
    size = 0
    for u in range(n_left):
        for v in adj[u]:
            if match_r[v] < 0:
                match_l[u] = v
                match_r[v] = u
                size += 1
                break
    dist = [0] * n_left
    while True:
        queue = deque()
        for u in range(n_left):
            if match_l[u] < 0:
                dist[u] = 0
                queue.append(u)
            else:
                dist[u] = INF
        found = False
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w < 0:
                    found = True
                elif dist[w] == INF:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not found:
            return size
        ptr = [0] * n_left
        for root in range(n_left):
            if match_l[root] >= 0:
                continue
            stack = [root]
            while stack:
                u = stack[-1]
                advanced = False
                edges = adj[u]
                while ptr[u] < len(edges):
                    v = edges[ptr[u]]
                    ptr[u] += 1
                    w = match_r[v]
                    if w < 0:
                        # flip the alternating path held on the stack
                        for uu in reversed(stack):
                            match_l[uu], v = v, match_l[uu]
                            match_r[match_l[uu]] = uu
                        size += 1
                        stack = []
                        advanced = True
                        break
                    if dist[w] == dist[u] + 1:
                        stack.append(w)
                        advanced = True
                        break
                if not advanced:
                    dist[u] = INF
                    stack.pop()


def _adjacency(M: sparse.csr_matrix, rows=None, cols=None):
    """Row adjacency lists of M, optionally restricted and renumbered."""
    M = M.tocsr()
    if rows is not None:
        M = M[rows]
    if cols is not None:
        M = M[:, cols]
    M.sort_indices()
    indptr, indices = M.indptr, M.indices.tolist()
    return [indices[indptr[i] : indptr[i + 1]] for i in range(M.shape[0])], M.shape[1]


def s_rank(sp_or_matrix) -> int:
    """Structural rank of [F_A F_B] (or of any given matrix pattern)."""
    M = sp_or_matrix.combined() if isinstance(sp_or_matrix, StructurePair) else _pattern(sp_or_matrix)
    adj, n_right = _adjacency(M)
    return max_matching(adj, n_right)


def sc(A, B) -> bool:
    """Structural controllability of (A, B): input connected and s-rank [F_A F_B] = n_x."""
    sp = binarize(A, B)
    connected, _ = is_input_connected(sp)
    return connected and s_rank(sp) == sp.n_x


def dimsrs(A, B) -> int:
    """Generic dimension of the reachable subspace.

    Structural rank of [F_A F_B] restricted to the input-reachable states R:
    rows R, columns R plus all inputs. Equals n_x exactly when ``sc`` holds.
    """
    sp = A if isinstance(A, StructurePair) else binarize(A, B)
    reach = np.flatnonzero(reachable_states(sp))
    if reach.size == 0:
        return 0
    cols = np.concatenate([reach, sp.n_x + np.arange(sp.n_u)])
    adj, n_right = _adjacency(sp.combined(), reach, cols)
    return max_matching(adj, n_right)


def sc_dimsrs(sp: StructurePair) -> tuple[bool, int]:
    """``(sc, dimsrs)`` from one reachability pass and one matching."""
    reach = reachable_states(sp)
    if reach.all():
        rank = s_rank(sp)
        return rank == sp.n_x, rank
    return False, dimsrs(sp, None)
