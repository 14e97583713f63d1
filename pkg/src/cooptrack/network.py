"""Leader-rooted communication digraphs and their coupling certificates.

Node 0 is the leader, nodes 1..N are followers.  ``adjacency[i, j] > 0``
means follower ``i+1`` receives from follower ``j+1``; ``leader_links[i] > 0``
means follower ``i+1`` receives from the leader.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

MMATRIX_TOL = 1e-10


class NetworkError(ValueError):
    """Raised when a network or its coupling matrix violates a requirement."""


@dataclass(frozen=True, eq=False)
class DirectedNetwork:
    adjacency: np.ndarray
    leader_links: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        links = np.array(self.leader_links, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise NetworkError(f"adjacency must be square, got shape {adj.shape}")
        n = adj.shape[0]
        if n < 1:
            raise NetworkError("network needs at least one follower")
        if links.shape != (n,):
            raise NetworkError(f"leader_links must have length {n}, got {links.shape}")
        if not (np.all(np.isfinite(adj)) and np.all(np.isfinite(links))):
            raise NetworkError("edge weights must be finite")
        if np.any(adj < 0) or np.any(links < 0):
            raise NetworkError("edge weights must be nonnegative")
        if np.any(np.diag(adj) != 0):
            raise NetworkError("adjacency diagonal must be zero (no self-loops)")
        adj.setflags(write=False)
        links.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "leader_links", links)

    @property
    def follower_count(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n_followers: int, edges: Iterable[Sequence[float]]) -> "DirectedNetwork":
        """Build from ``(source, target, weight)`` triples over nodes 0..N.

        An edge ``(i, j, w)`` means node ``j`` receives from node ``i``.
        Repeated edges accumulate their weights.
        """
        adj = np.zeros((n_followers, n_followers))
        links = np.zeros(n_followers)
        for edge in edges:
            if len(edge) == 2:
                src, dst, w = edge[0], edge[1], 1.0
            elif len(edge) == 3:
                src, dst, w = edge
            else:
                raise NetworkError(f"edge must be (source, target[, weight]), got {edge!r}")
            src, dst = int(src), int(dst)
            if not (0 <= src <= n_followers and 1 <= dst <= n_followers):
                raise NetworkError(f"edge {edge!r} out of range for {n_followers} followers")
            if src == dst:
                raise NetworkError(f"self-loop {edge!r}")
            if w < 0:
                raise NetworkError(f"negative weight on edge {edge!r}")
            if src == 0:
                links[dst - 1] += w
            else:
                adj[dst - 1, src - 1] += w
        return cls(adj, links)

    def edges(self) -> list[tuple[int, int, float]]:
        """Inverse of :meth:`from_edges` (sorted by target, then source)."""
        out = []
        for i in range(self.follower_count):
            if self.leader_links[i] > 0:
                out.append((0, i + 1, float(self.leader_links[i])))
            for j in range(self.follower_count):
                if self.adjacency[i, j] > 0:
                    out.append((j + 1, i + 1, float(self.adjacency[i, j])))
        return out

    @property
    def laplacian(self) -> np.ndarray:
        """Leader-augmented Laplacian block ``H``, with no connectivity check."""
        h = -self.adjacency.copy()
        h[np.diag_indices_from(h)] = self.adjacency.sum(axis=1) + self.leader_links
        return h


@dataclass(frozen=True, eq=False)
class CouplingCertificate:
    H: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    lambda_min_Q: float
    lambda_max_D: float
    lambda_min_D: float
    norm_H: float
    norm_DH: float
    used_fallback: bool = False

    @property
    def D_matrix(self) -> np.ndarray:
        return np.diag(self.D)


def check_spanning_tree(net: DirectedNetwork) -> bool:
    """True iff every follower is reachable from the leader (node 0)."""
    n = net.follower_count
    seen = np.zeros(n, dtype=bool)
    queue = deque(np.flatnonzero(net.leader_links > 0))
    seen[list(queue)] = True
    while queue:
        j = queue.popleft()
        # followers that listen to j
        for i in np.flatnonzero(net.adjacency[:, j] > 0):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return bool(seen.all())


def build_coupling_matrix(net: DirectedNetwork) -> np.ndarray:
    if not check_spanning_tree(net):
        unreachable = _unreachable(net)
        raise NetworkError(
            "connectivity violated: no directed spanning tree rooted at the leader; "
            f"followers unreachable from node 0: {unreachable}"
        )
    return net.laplacian


def _unreachable(net: DirectedNetwork) -> list[int]:
    n = net.follower_count
    reach = np.zeros(n, dtype=bool)
    frontier = net.leader_links > 0
    while frontier.any():
        reach |= frontier
        frontier = (net.adjacency[:, reach] > 0).any(axis=1) & ~reach
    return [int(i) + 1 for i in np.flatnonzero(~reach)]


def validate_m_matrix(H: np.ndarray, tol: float = MMATRIX_TOL) -> None:
    H = np.asarray(H, dtype=float)
    off = H - np.diag(np.diag(H))
    if np.any(off > 0):
        raise NetworkError("not an M-matrix: positive off-diagonal entry")
    re = np.linalg.eigvals(H).real
    if re.min() <= tol:
        raise NetworkError(
            f"not a nonsingular M-matrix: min Re(eig) = {re.min():.3e} <= {tol:g}"
        )


def _q_matrix(H, d):
    DH = d[:, None] * H
    return DH + DH.T


def _lambda_min_q(H, d) -> float:
    return float(np.linalg.eigvalsh(_q_matrix(H, d))[0])


def _coordinate_descent(H, d, sweeps=50, tol=1e-12):
    """Rescale one d_i at a time (in log space) to increase lambda_min(Q).

    Q is homogeneous in d, so the search normalizes max(d) = 1 after each sweep.
    """
    d = np.array(d, dtype=float)
    best = _lambda_min_q(H, d)
    for _ in range(sweeps):
        start = best
        for i in range(d.size):
            def neg(logdi, i=i):
                trial = d.copy()
                trial[i] = np.exp(logdi)
                return -_lambda_min_q(H, trial)

            li = np.log(d[i])
            res = minimize_scalar(neg, bounds=(li - 5.0, li + 5.0), method="bounded")
            if -res.fun > best:
                d[i] = np.exp(res.x)
                best = -res.fun
        scale = d.max()
        d /= scale
        best /= scale
        if best - start / scale <= tol * max(1.0, abs(best)):
            break
    return d


def find_diagonal_scaling(H) -> CouplingCertificate:
    """Positive diagonal D with DH + H^T D positive definite.

    Uses d_i = w_i / z_i with z = H^{-1} 1 and w = H^{-T} 1; falls back to a
    coordinate-descent search on lambda_min(Q) if that fails numerically.
    """
    H = np.array(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NetworkError(f"H must be square, got shape {H.shape}")
    validate_m_matrix(H)
    n = H.shape[0]
    ones = np.ones(n)
    z = np.linalg.solve(H, ones)
    w = np.linalg.solve(H.T, ones)
    used_fallback = False
    if np.all(z > 0) and np.all(w > 0):
        d = w / z
    else:
        d = ones.copy()
        used_fallback = True
    if used_fallback or _lambda_min_q(H, d) <= 0:
        d = _coordinate_descent(H, d)
        used_fallback = True
    Q = _q_matrix(H, d)
    lam_q = float(np.linalg.eigvalsh(Q)[0])
    if not lam_q > 0:
        raise NetworkError(f"could not certify H: lambda_min(Q) = {lam_q:.3e} after fallback")
    d.setflags(write=False)
    return CouplingCertificate(
        H=H,
        D=d,
        Q=Q,
        lambda_min_Q=lam_q,
        lambda_max_D=float(d.max()),
        lambda_min_D=float(d.min()),
        norm_H=float(np.linalg.norm(H, 2)),
        norm_DH=float(np.linalg.norm(d[:, None] * H, 2)),
        used_fallback=used_fallback,
    )


def certify_network(net: DirectedNetwork) -> CouplingCertificate:
    return find_diagonal_scaling(build_coupling_matrix(net))
