"""Communication graphs and doubly stochastic mixing matrices.

Graphs are undirected device-to-device connectivity structures, either given
explicitly or thresholded from a matrix of channel-gain magnitudes.  Mixing
matrices use the Laplacian weighting W = I - L/(d_max + 1), which is symmetric,
doubly stochastic, and supported on the graph.  The consensus contraction
factor is the second-largest singular value of W - (1/N) 11^T.
"""

from dataclasses import dataclass, field

import numpy as np

from ._rng import REALM_TOPOLOGY, substream


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected device graph. Neighbor sets exclude the device itself."""

    n_devices: int
    edges: frozenset  # of (i, j) tuples with i < j
    neighbors: tuple = field(init=False)  # per device, sorted tuple of neighbors

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("need at least one device")
        adj = [[] for _ in range(self.n_devices)]
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop edge ({i},{j}) not allowed")
            if not (0 <= i < self.n_devices and 0 <= j < self.n_devices):
                raise ValueError(f"edge ({i},{j}) out of range")
            if i > j:
                raise ValueError("edges must be stored as (i, j) with i < j")
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_edges(cls, n_devices, edges):
        canon = frozenset((min(i, j), max(i, j)) for i, j in edges)
        return cls(n_devices=n_devices, edges=canon)

    def degree(self, i):
        return len(self.neighbors[i])

    def max_degree(self):
        return max((len(a) for a in self.neighbors), default=0)

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.edges

    def is_connected(self):
        """BFS reachability from device 0."""
        seen = {0}
        frontier = [0]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors[u]:
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        return len(seen) == self.n_devices

    def adjacency_matrix(self):
        a = np.zeros((self.n_devices, self.n_devices))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic weights plus the contraction factor beta."""

    weights: np.ndarray
    beta: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be a square matrix")
        if not np.allclose(w, w.T, rtol=0.0, atol=1e-15):
            raise ValueError("weights must be symmetric")
        ones = np.ones(w.shape[0])
        if np.max(np.abs(w @ ones - ones)) > 1e-12:
            raise ValueError("rows must sum to 1")
        if np.max(np.abs(ones @ w - ones)) > 1e-12:
            raise ValueError("columns must sum to 1")
        if w.min() < -1e-15 or w.max() > 1.0 + 1e-15:
            raise ValueError("entries must lie in [0, 1]")
        if not (0.0 <= self.beta <= 1.0 + 1e-12):
            raise ValueError(f"beta out of range: {self.beta}")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n_devices(self):
        return self.weights.shape[0]


def build_graph_from_gains(gains, threshold):
    """Connect devices whose pairwise gain magnitude exceeds the threshold.

    `gains` must be symmetric with a zero diagonal; the caller is responsible
    for checking connectivity of the result.
    """
    g = np.asarray(gains, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("gains must be a square matrix")
    if not np.array_equal(g, g.T):
        raise ValueError("gains matrix must be symmetric")
    if np.any(np.diagonal(g) != 0.0):
        raise ValueError("gains diagonal must be zero")
    if np.any(g < 0.0):
        raise ValueError("gains must be nonnegative")
    if threshold < 0.0:
        raise ValueError("threshold must be nonnegative")
    n = g.shape[0]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if g[i, j] > threshold]
    return NetworkGraph.from_edges(n, edges)


def laplacian_mixing(graph):
    """W = I - eps * L with eps = 1/(d_max + 1).

    Requires a connected graph; a disconnected one would have beta = 1 and
    consensus would never contract.
    """
    if not graph.is_connected():
        raise ValueError("graph is disconnected; mixing matrix would not contract")
    n = graph.n_devices
    a = graph.adjacency_matrix()
    deg = a.sum(axis=1)
    eps = 1.0 / (graph.max_degree() + 1.0)
    w = eps * a
    w[np.diag_indices(n)] = 1.0 - eps * deg
    return MixingMatrix(weights=w, beta=spectral_gap(w))


def spectral_gap(w, tol=1e-12, max_iter=200_000):
    """Second-largest singular value of W - (1/N) 11^T by power iteration.

    Accepts a MixingMatrix or a raw square array.  Iterates on M @ M (M is
    symmetric here, so singular values are |eigenvalues|) until the Rayleigh
    residual is below `tol` relative to the eigenvalue estimate.
    """
    mat = w.weights if isinstance(w, MixingMatrix) else np.asarray(w, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("need a square matrix")
    n = mat.shape[0]
    if n == 1:
        return 0.0
    m = mat - 1.0 / n
    rng = np.random.Generator(np.random.PCG64(0x5EEDED))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        bv = m @ (m @ v)
        mu = float(v @ bv)  # Rayleigh quotient for M^2, equals beta^2 at the fixpoint
        resid = np.linalg.norm(bv - mu * v)
        if resid <= tol * max(mu, 1e-30):
            return float(np.sqrt(max(mu, 0.0)))
        norm_bv = np.linalg.norm(bv)
        if norm_bv < 1e-300:
            return 0.0
        v = bv / norm_bv
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


def rayleigh_gain_matrix(n, rng):
    """Symmetric |h| magnitudes for every unordered pair, h ~ CN(0,1)."""
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            re, im = rng.normal(0.0, np.sqrt(0.5), size=2)
            g[i, j] = g[j, i] = np.hypot(re, im)
    return g


def random_gain_graph(n, gamma, master_seed, max_attempts=200):
    """Draw gain matrices until thresholding at gamma gives a connected graph.

    Returns (graph, gains). The attempt index enters the substream key, so
    the result is a pure function of (master_seed, n, gamma).
    """
    for attempt in range(max_attempts):
        rng = substream(master_seed, REALM_TOPOLOGY, attempt)
        gains = rayleigh_gain_matrix(n, rng)
        graph = build_graph_from_gains(gains, gamma)
        if graph.is_connected():
            return graph, gains
    raise RuntimeError(
        f"no connected graph after {max_attempts} gain draws (n={n}, gamma={gamma})"
    )


def erdos_renyi_graph(n, p, rng):
    """G(n, p) sample; used by property tests."""
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return NetworkGraph.from_edges(n, edges)


def save_graph(graph, path):
    """Plain-text edge list: one `n_devices=N` header, then `i j weight` lines."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"n_devices={graph.n_devices}\n")
        for i, j in sorted(graph.edges):
            f.write(f"{i} {j} 1\n")


def load_graph(path):
    n, triples = _read_edge_list(path)
    return NetworkGraph.from_edges(n, [(i, j) for i, j, _ in triples])


def save_mixing(w, path):
    """Same edge-list format; off-diagonal weights only, diagonal is implied."""
    mat = w.weights
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"n_devices={w.n_devices}\n")
        for i in range(w.n_devices):
            for j in range(i + 1, w.n_devices):
                if mat[i, j] != 0.0:
                    f.write(f"{i} {j} {mat[i, j]!r}\n")


def load_mixing(path):
    n, triples = _read_edge_list(path)
    mat = np.zeros((n, n))
    for i, j, wij in triples:
        mat[i, j] = wij
        mat[j, i] = wij
    mat[np.diag_indices(n)] = 1.0 - mat.sum(axis=1)
    return MixingMatrix(weights=mat, beta=spectral_gap(mat))


def _read_edge_list(path):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("n_devices="):
            raise ValueError(f"bad header line: {header!r}")
        n = int(header.split("=", 1)[1])
        triples = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            si, sj, sw = line.split()
            triples.append((int(si), int(sj), float(sw)))
    return n, triples
