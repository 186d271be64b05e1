"""
Communication graphs, doubly stochastic mixing matrices and consensus accounting.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConstructionFailure, InvalidArgument
from .numerics import EIGH_MAX_DIM, spectral_norm

TOPOLOGIES = ("line", "grid2d", "star", "complete", "erdos_renyi")
WEIGHT_RULES = ("metropolis", "lazy_metropolis", "uniform_complete")
ER_MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class Graph:
    m: int
    edges: tuple  # sorted (i, j) pairs with i < j
    kind: str
    params: dict = field(default_factory=dict, compare=False)
    seed: int = 0
    resamples: int = 0

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def adjacency(self):
        A = np.zeros((self.m, self.m))
        if self.edges:
            e = np.array(self.edges)
            A[e[:, 0], e[:, 1]] = 1.0
            A[e[:, 1], e[:, 0]] = 1.0
        return A

    @property
    def degrees(self):
        deg = np.zeros(self.m, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    @property
    def max_degree(self):
        return int(self.degrees.max()) if self.m else 0

    def is_connected(self):
        return _is_connected(self.m, self.edges)


def _is_connected(m, edges):
    if m <= 1:
        return True
    if not edges:
        return False
    e = np.asarray(edges)
    A = csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(m, m))
    n_comp, _ = connected_components(A, directed=False)
    return n_comp == 1


def _er_edges(m, p, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))
    iu, ju = np.triu_indices(m, k=1)
    keep = rng.random(iu.size) < p
    return tuple(zip(iu[keep].tolist(), ju[keep].tolist()))


def build_topology(kind, m, params=None, seed=0):
    """
    Build a connected undirected graph on nodes 0..m-1.

    kind : {"line", "grid2d", "star", "complete", "erdos_renyi"}
    params : dict
        ``{"p": float}`` for erdos_renyi.

    Erdos-Renyi graphs are redrawn with seed, seed+1, ... until connected; the
    number of redraws is stored on the graph.
    """
    params = dict(params or {})
    if kind not in TOPOLOGIES:
        raise InvalidArgument(f"unknown topology {kind!r}")
    if m < 2:
        raise InvalidArgument(f"need m >= 2 nodes, got {m}")

    resamples = 0
    if kind == "line":
        edges = [(i, i + 1) for i in range(m - 1)]
    elif kind == "star":
        edges = [(0, j) for j in range(1, m)]
    elif kind == "complete":
        edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    elif kind == "grid2d":
        side = math.isqrt(m)
        if side * side != m:
            raise InvalidArgument(f"grid2d needs a perfect-square m, got {m}")
        edges = []
        for r in range(side):
            for c in range(side):
                v = r * side + c
                if c + 1 < side:
                    edges.append((v, v + 1))
                if r + 1 < side:
                    edges.append((v, v + side))
    else:
        p = params.get("p")
        if p is None or not (0 < p <= 1):
            raise InvalidArgument(f"erdos_renyi needs p in (0, 1], got {p}")
        for resamples in range(ER_MAX_RESAMPLES):
            edges = _er_edges(m, p, seed + resamples)
            if _is_connected(m, edges):
                break
        else:
            raise ConstructionFailure(
                f"ER(m={m}, p={p}) still disconnected after {ER_MAX_RESAMPLES} draws"
            )
    edges = tuple(sorted(edges))
    g = Graph(m, edges, kind, params, seed, resamples)
    if not g.is_connected():
        raise ConstructionFailure(f"{kind} graph on {m} nodes is not connected")
    return g


def consensus_gap(W):
    """||W - J||_2 for a dense doubly stochastic W."""
    m = W.shape[0]
    D = W - np.full((m, m), 1.0 / m)
    if m <= EIGH_MAX_DIM and np.allclose(W, W.T, rtol=0, atol=1e-15):
        D = 0.5 * (D + D.T)
        return float(np.max(np.abs(np.linalg.eigvalsh(D))))
    return spectral_norm(D, tol=1e-10, method="power")


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """
    Dense mixing matrix W with its contraction factor rho = ||W - J||_2.

    ``rounds`` is the number of communication rounds one multiplication by W
    costs (K for a K-th power of a base matrix).
    """

    W: np.ndarray
    rule: str
    rho: float
    graph: Graph = None
    rounds: int = 1

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def c_m_bound(self):
        return math.sqrt(self.m)

    def apply(self, M):
        return self.W @ M

    @property
    def matrix(self):
        return self.W

    @classmethod
    def from_matrix(cls, W, rule="custom", graph=None, rounds=1):
        W = np.array(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise InvalidArgument(f"mixing matrix must be square, got {W.shape}")
        return cls(W, rule, consensus_gap(W), graph, rounds)

    def violations(self, atol=1e-12):
        """List of violated mixing-matrix invariants (empty when all hold)."""
        W = self.W
        out = []
        if np.max(np.abs(W.sum(axis=1) - 1)) > atol:
            out.append("row sums")
        if np.max(np.abs(W.sum(axis=0) - 1)) > atol:
            out.append("column sums")
        if np.any(np.diag(W) <= 0):
            out.append("non-positive diagonal")
        if self.graph is not None and self.rounds == 1:
            A = self.graph.adjacency + np.eye(self.m)
            if np.any((W != 0) & (A == 0)):
                out.append("weight outside graph support")
            off = (A > 0) & ~np.eye(self.m, dtype=bool)
            if np.any(W[off] <= 0):
                out.append("non-positive weight on an edge")
        if self.graph is not None and self.graph.is_connected() and not self.rho < 1:
            out.append("rho >= 1 on a connected graph")
        return out


def metropolis_weights(g, lazy=False):
    """
    Metropolis (or lazy Metropolis) weights on graph ``g``.

    Edge weights are 1/(1 + max(d_i, d_j)) or, when lazy, 1/(2 max(d_i, d_j));
    the diagonal absorbs the rest of each row.
    """
    deg = g.degrees
    W = np.zeros((g.m, g.m))
    if g.edges:
        e = np.array(g.edges)
        dmax = np.maximum(deg[e[:, 0]], deg[e[:, 1]]).astype(np.float64)
        w = 1.0 / (2.0 * dmax) if lazy else 1.0 / (1.0 + dmax)
        W[e[:, 0], e[:, 1]] = w
        W[e[:, 1], e[:, 0]] = w
    W[np.diag_indices(g.m)] = 1.0 - W.sum(axis=1)
    rule = "lazy_metropolis" if lazy else "metropolis"
    return MixingMatrix(W, rule, consensus_gap(W), g, 1)


def uniform_weights(g):
    """W = J; only sparsity-compliant on a complete graph."""
    if g.n_edges != g.m * (g.m - 1) // 2:
        raise InvalidArgument("uniform_complete weights require a complete graph")
    W = np.full((g.m, g.m), 1.0 / g.m)
    return MixingMatrix(W, "uniform_complete", 0.0, g, 1)


def mixing_matrix(g, rule):
    if rule == "metropolis":
        return metropolis_weights(g, lazy=False)
    if rule == "lazy_metropolis":
        return metropolis_weights(g, lazy=True)
    if rule == "uniform_complete":
        return uniform_weights(g)
    raise InvalidArgument(f"unknown weight rule {rule!r}")


def power_mixing(Wbar, K, check=True):
    """
    K consensus rounds with the same base matrix: W = Wbar^K, rho = rho_bar^K.

    With ``check`` the recomputed ||W - J||_2 must agree with rho_bar^K to 1e-9.
    """
    if K < 1:
        raise InvalidArgument(f"K must be >= 1, got {K}")
    if K == 1:
        return Wbar
    W = np.linalg.matrix_power(Wbar.W, K)
    rho = Wbar.rho**K
    if check and Wbar.m <= EIGH_MAX_DIM and np.array_equal(Wbar.W, Wbar.W.T):
        recomputed = consensus_gap(W)
        if abs(recomputed - rho) > 1e-9 * max(1.0, rho):
            raise ConstructionFailure(
                f"rho(W^K) = {recomputed:.3e} disagrees with rho^K = {rho:.3e}"
            )
    return MixingMatrix(W, Wbar.rule, rho, Wbar.graph, Wbar.rounds * K)


def chebyshev_t(K, x):
    """First-kind Chebyshev polynomial T_K(x) by the three-term recurrence."""
    t_prev, t = 1.0, x
    if K == 0:
        return t_prev
    for _ in range(K - 1):
        t_prev, t = t, 2 * x * t - t_prev
    return t


class ChebyshevMixing:
    """
    Chebyshev-accelerated consensus operator P_K(Wbar).

    P_K(x) = T_K(x / rho_bar) / T_K(1 / rho_bar), so P_K(1) = 1 and every
    non-consensus eigenvalue of Wbar (all within [-rho_bar, rho_bar]) is
    damped by at most 1 / T_K(1 / rho_bar). Applied matrix-free: one
    application costs K multiplications by Wbar.
    """

    def __init__(self, Wbar, K):
        if K < 1:
            raise InvalidArgument(f"K must be >= 1, got {K}")
        if not np.allclose(Wbar.W, Wbar.W.T, rtol=0, atol=1e-14):
            raise InvalidArgument("Chebyshev mixing needs a symmetric base matrix")
        if not Wbar.rho < 1:
            raise InvalidArgument(f"Chebyshev mixing needs rho_bar < 1, got {Wbar.rho}")
        self.base = Wbar
        self.K = K
        self.rounds = K * Wbar.rounds
        rb = Wbar.rho
        if rb == 0.0:
            self._a = None
            self.rho = 0.0
        else:
            a = [1.0, 1.0 / rb]
            for _ in range(K - 1):
                a.append(2.0 / rb * a[-1] - a[-2])
            self._a = a
            self.rho = 1.0 / a[K]

    @property
    def m(self):
        return self.base.m

    @property
    def graph(self):
        return self.base.graph

    @property
    def rule(self):
        return f"chebyshev({self.base.rule})"

    def apply(self, M):
        Wb = self.base.W
        if self._a is None or self.K == 1:
            # rho_bar = 0 means Wbar = J already
            return Wb @ M
        a, rb = self._a, self.base.rho
        y_prev, y = M, Wb @ M
        for k in range(1, self.K):
            y_prev, y = y, ((2.0 / rb) * a[k] * (Wb @ y) - a[k - 1] * y_prev) / a[k + 1]
        return y

    @property
    def matrix(self):
        return self.apply(np.eye(self.m))


def chebyshev_mixing(Wbar, K):
    return ChebyshevMixing(Wbar, K)


def rounds_for_target(rho_bar, target):
    """Smallest integer k >= 1 with rho_bar**k <= target."""
    if not 0 < target < 1:
        raise InvalidArgument(f"target must lie in (0, 1), got {target}")
    if rho_bar < 0 or rho_bar >= 1:
        raise InvalidArgument(f"rho_bar must lie in [0, 1), got {rho_bar}")
    if rho_bar == 0:
        return 1
    k = max(1, math.ceil(math.log(target) / math.log(rho_bar)))
    while rho_bar**k > target:
        k += 1
    while k > 1 and rho_bar ** (k - 1) <= target:
        k -= 1
    return k


def chebyshev_rounds_for_target(rho_bar, target):
    """Smallest K with 1 / T_K(1 / rho_bar) <= target."""
    if not 0 < target < 1:
        raise InvalidArgument(f"target must lie in (0, 1), got {target}")
    if rho_bar < 0 or rho_bar >= 1:
        raise InvalidArgument(f"rho_bar must lie in [0, 1), got {rho_bar}")
    if rho_bar <= target:
        # T_1(x) = x: one round contracts by rho_bar exactly
        return 1
    x = 1.0 / rho_bar
    K = 1
    t_prev, t = 1.0, x
    while 1.0 / t > target:
        t_prev, t = t, 2 * x * t - t_prev
        K += 1
    return K


@dataclass(frozen=True)
class CommCost:
    channel_use_per_round: int
    max_node_channel_use: int
    rounds: int

    @property
    def total_channel_use(self):
        return self.channel_use_per_round * self.rounds

    @property
    def max_node_total(self):
        return self.max_node_channel_use * self.rounds


def comm_cost(g, rounds, protocol="mesh"):
    """
    Channel-use accounting.

    mesh           one channel use per edge per round (the two endpoints share
                   it); the busiest node uses max-degree channels per round.
    star_pushpull  broadcast down to m-1 workers plus m-1 uploads: 2(m-1)
                   channel uses per round, all through the master.
    """
    if rounds < 0:
        raise InvalidArgument("rounds must be >= 0")
    m = g if isinstance(g, int) else g.m
    if protocol == "mesh":
        return CommCost(g.n_edges, g.max_degree, rounds)
    if protocol == "star_pushpull":
        per = 2 * (m - 1)
        return CommCost(per, per, rounds)
    raise InvalidArgument(f"unknown protocol {protocol!r}")


def erdos_renyi_for_rho(m, target_rho, rule="metropolis", seed=0, iters=40):
    """
    ER graph whose mixing matrix has rho close to ``target_rho``.

    Bisects the link probability with a fixed seed (edge sets are nested in p
    for a fixed seed) and returns the (graph, mixing matrix) pair with the
    closest rho among all probes.
    """
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(iters):
        p = 0.5 * (lo + hi)
        try:
            g = build_topology("erdos_renyi", m, {"p": p}, seed)
        except ConstructionFailure:
            lo = p
            continue
        W = mixing_matrix(g, rule)
        if best is None or abs(W.rho - target_rho) < abs(best[1].rho - target_rho):
            best = (g, W)
        if W.rho > target_rho:
            lo = p
        else:
            hi = p
    if best is None:
        raise ConstructionFailure(f"no connected ER graph found for m={m}")
    return best


# --- text exports -----------------------------------------------------------


def export_edge_list(g, path):
    with open(path, "w", newline="\n") as fh:
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def import_edge_list(path, m=None, kind="custom"):
    edges = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                i, j = map(int, line.split())
                edges.append((min(i, j), max(i, j)))
    if m is None:
        m = 1 + max(max(e) for e in edges) if edges else 1
    return Graph(m, tuple(sorted(set(edges))), kind)


def export_mixing_csv(W, path):
    M = W.matrix if hasattr(W, "matrix") else np.asarray(W)
    np.savetxt(path, M, delimiter=",", fmt="%.16e", newline="\n")


def import_mixing_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)
