"""Synthetic ground truth: random graphs, factored precisions, and samplers.

Two families of ground truth are supported.  Graph-based truths build a
weighted random graph (Erdos-Renyi, Barabasi-Albert, Watts-Strogatz, or a
Gaussian-kernel geometric graph), turn it into a precision matrix through the
graph Laplacian plus a ridge, and evolve it over windows by rewiring a
fraction of the edges.  Factored truths draw a sparse nonnegative loading
matrix Y and diagonal D directly, and evolve by resampling a fraction of the
nonzero loadings while keeping the support and D fixed.

Sampling draws exact precision-Theta data: Gaussian rows are x = L^{-T} z with
Theta = L L^T and z standard normal; Student-t rows rescale Gaussian rows by
sqrt(nu / chi2_nu), drawn independently per row (normals first, then the
chi-square block, so streams are reproducible).  Window RNGs are spawned from
one seed sequence, one child per window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .manifold import FactorPoint, RankDeficientError
from .model import WindowedDataset
from .spd import SpdMatrix, materialize

# Edge weights for the structural graph models.
EDGE_WEIGHT_RANGE = (2.0, 5.0)

# Ridge added to the graph Laplacian.
DEFAULT_RIDGE = 0.10

# Retry budget when a random factor draw comes out rank-deficient.
_MAX_DRAWS = 100


@dataclass(frozen=True)
class ErdosRenyi:
    edge_prob: float = 0.10

    def __post_init__(self):
        if not (0.0 < self.edge_prob <= 1.0):
            raise ValueError("edge_prob must lie in (0, 1]")


@dataclass(frozen=True)
class BarabasiAlbert:
    m: int = 2

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")


@dataclass(frozen=True)
class WattsStrogatz:
    k: int = 4
    beta: float = 0.30

    def __post_init__(self):
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError("k must be an even integer >= 2")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must lie in [0, 1]")


@dataclass(frozen=True)
class GaussianRGG:
    """Points uniform on the unit square; Gaussian kernel weights, pruned."""

    sigma: float = 0.5
    prune: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not (0.0 < self.prune < 1.0):
            raise ValueError("prune must lie in (0, 1)")


def _edge_weight(rng, size=None):
    lo, hi = EDGE_WEIGHT_RANGE
    return rng.uniform(lo, hi, size=size)


def gen_graph(graph_model, p: int, rng: np.random.Generator) -> np.ndarray:
    """Weighted symmetric adjacency with zero diagonal for the given model."""
    if p < 2:
        raise ValueError("need at least two nodes")
    A = np.zeros((p, p))
    if isinstance(graph_model, ErdosRenyi):
        iu = np.triu_indices(p, k=1)
        present = rng.random(len(iu[0])) < graph_model.edge_prob
        w = np.zeros(len(iu[0]))
        w[present] = _edge_weight(rng, size=int(present.sum()))
        A[iu] = w
        A = A + A.T
    elif isinstance(graph_model, BarabasiAlbert):
        m = graph_model.m
        if p < m + 1:
            raise ValueError(f"need p >= m + 1 = {m + 1}")
        deg = np.zeros(p)
        for i in range(m + 1):        # complete seed graph on m + 1 nodes
            for j in range(i + 1, m + 1):
                A[i, j] = A[j, i] = _edge_weight(rng)
        deg[: m + 1] = m
        for v in range(m + 1, p):
            targets: set = set()
            probs = deg[:v] / deg[:v].sum()
            while len(targets) < m:   # preferential attachment, distinct targets
                targets.add(int(rng.choice(v, p=probs)))
            for u in sorted(targets):
                A[v, u] = A[u, v] = _edge_weight(rng)
                deg[u] += 1
            deg[v] = m
    elif isinstance(graph_model, WattsStrogatz):
        k, beta = graph_model.k, graph_model.beta
        if p <= k:
            raise ValueError(f"need p > k = {k}")
        edges = set()
        for j in range(1, k // 2 + 1):
            for i in range(p):
                edges.add(frozenset((i, (i + j) % p)))
        for j in range(1, k // 2 + 1):   # single rewiring pass
            for i in range(p):
                e = frozenset((i, (i + j) % p))
                if e not in edges or rng.random() >= beta:
                    continue
                neighbors = {u for f in edges if i in f for u in f}
                if len(neighbors) >= p:   # node already touches everyone
                    continue
                while True:
                    u = int(rng.integers(p))
                    if u != i and frozenset((i, u)) not in edges:
                        break
                edges.remove(e)
                edges.add(frozenset((i, u)))
        for e in sorted(tuple(sorted(f)) for f in edges):
            i, j = e
            A[i, j] = A[j, i] = _edge_weight(rng)
    elif isinstance(graph_model, GaussianRGG):
        pos = rng.random((p, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        W = np.exp(-d2 / (2.0 * graph_model.sigma ** 2))
        W[W < graph_model.prune] = 0.0
        np.fill_diagonal(W, 0.0)
        A = (W + W.T) / 2.0
    else:
        raise TypeError(f"unknown graph model {type(graph_model).__name__}")
    return A


def laplacian_precision(adj: np.ndarray, kappa: float = DEFAULT_RIDGE) -> SpdMatrix:
    """Theta = diag(degree) - adjacency + kappa * I; positive definite for kappa > 0."""
    A = np.asarray(adj, dtype=float)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    L = np.diag(A.sum(axis=1)) - A
    L[np.diag_indices(L.shape[0])] += kappa
    return SpdMatrix((L + L.T) / 2.0)


def perturb_graph(adj: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    """Rewire floor(frac * E) edges: delete that many, add as many elsewhere.

    Preserves the edge count exactly.  Raises when the graph is too dense to
    host the required number of new edges.
    """
    A = np.array(adj, dtype=float, copy=True)
    if not (0.0 <= frac <= 1.0):
        raise ValueError("frac must lie in [0, 1]")
    iu = np.triu_indices(A.shape[0], k=1)
    present = np.flatnonzero(A[iu] > 0)
    absent = np.flatnonzero(A[iu] == 0)
    k = int(frac * len(present))
    if k == 0:
        return A
    if k > len(absent):
        raise ValueError(f"cannot place {k} new edges, only {len(absent)} slots are free")
    drop = rng.choice(len(present), size=k, replace=False)
    add = rng.choice(len(absent), size=k, replace=False)
    rows, cols = iu
    for idx in present[drop]:
        A[rows[idx], cols[idx]] = A[cols[idx], rows[idx]] = 0.0
    for idx, w in zip(absent[add], _edge_weight(rng, size=k)):
        A[rows[idx], cols[idx]] = A[cols[idx], rows[idx]] = w
    return A


def gen_lrad_truth(p: int, r: int, rng: np.random.Generator, density: float = 0.2,
                   load_range: tuple = (1.0, 3.0),
                   diag_range: tuple = (0.5, 1.5)) -> FactorPoint:
    """Sparse nonnegative loading matrix plus positive diagonal.

    Each loading entry is present with probability ``density`` and drawn
    uniformly from load_range (all positive, so the nonzero pattern of Y Y^T
    off the diagonal is exact, with no cancellation).  Redraws on the rare
    rank-deficient outcome.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError("density must lie in (0, 1]")
    for _ in range(_MAX_DRAWS):
        mask = rng.random((p, r)) < density
        vals = rng.uniform(load_range[0], load_range[1], size=(p, r))
        D = rng.uniform(diag_range[0], diag_range[1], size=p)
        try:
            return FactorPoint(np.where(mask, vals, 0.0), D)
        except RankDeficientError:
            continue
    raise ValueError(
        f"could not draw a full-rank loading matrix at p={p}, r={r}, density={density}")


def perturb_lrad(point: FactorPoint, frac: float, rng: np.random.Generator,
                 load_range: tuple = (1.0, 3.0)) -> FactorPoint:
    """Resample floor(frac * nnz) nonzero loadings; support and diagonal stay fixed."""
    if not (0.0 <= frac <= 1.0):
        raise ValueError("frac must lie in [0, 1]")
    nz = np.argwhere(point.Y != 0.0)
    k = int(frac * len(nz))
    if k == 0:
        return FactorPoint(point.Y, point.D)
    for _ in range(_MAX_DRAWS):
        pick = rng.choice(len(nz), size=k, replace=False)
        vals = rng.uniform(load_range[0], load_range[1], size=k)
        Y = np.array(point.Y, copy=True)
        Y[nz[pick, 0], nz[pick, 1]] = vals
        try:
            return FactorPoint(Y, point.D)
        except RankDeficientError:
            continue
    raise ValueError("could not resample loadings without losing rank")


def _dense_precision(Theta) -> np.ndarray:
    if isinstance(Theta, FactorPoint):
        return materialize(Theta).M
    if isinstance(Theta, SpdMatrix):
        return Theta.M
    return np.asarray(Theta, dtype=float)


def sample_gaussian(Theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """n centered Gaussian rows with precision Theta, via x = L^{-T} z."""
    Th = _dense_precision(Theta)
    if n < 1:
        raise ValueError("need at least one sample")
    L = np.linalg.cholesky(Th)
    Z = rng.standard_normal((n, Th.shape[0]))
    return scipy.linalg.solve_triangular(L, Z.T, lower=True, trans="T").T


def sample_student_t(Theta, nu: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n Student-t rows with shape precision Theta and nu degrees of freedom."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    G = sample_gaussian(Theta, n, rng)
    chi = rng.chisquare(nu, size=n)
    return G * np.sqrt(nu / chi)[:, None]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """A simulated sequence: dense precisions, true edge sets, optional factors."""

    precisions: tuple
    edges: tuple
    factors: tuple | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.precisions)

    @property
    def p(self) -> int:
        return self.precisions[0].shape[0]


def graph_truth_sequence(graph_model, p: int, T: int, rng: np.random.Generator,
                         frac: float = 0.10, kappa: float = DEFAULT_RIDGE) -> GroundTruth:
    """Laplacian-precision sequence evolved by edge rewiring."""
    if T < 1:
        raise ValueError("need at least one window")
    adjs = [gen_graph(graph_model, p, rng)]
    for _ in range(T - 1):
        adjs.append(perturb_graph(adjs[-1], frac, rng))
    precisions = tuple(laplacian_precision(A, kappa).M for A in adjs)
    edges = tuple((A > 0).astype(int) for A in adjs)
    meta = {"kind": type(graph_model).__name__, "p": p, "T": T,
            "frac": frac, "kappa": kappa}
    return GroundTruth(precisions=precisions, edges=edges, factors=None, meta=meta)


def lrad_truth_sequence(p: int, r: int, T: int, rng: np.random.Generator,
                        frac: float = 0.10, density: float = 0.2,
                        load_range: tuple = (1.0, 3.0),
                        diag_range: tuple = (0.5, 1.5)) -> GroundTruth:
    """Factored precision sequence evolved by loading resampling."""
    if T < 1:
        raise ValueError("need at least one window")
    factors = [gen_lrad_truth(p, r, rng, density, load_range, diag_range)]
    for _ in range(T - 1):
        factors.append(perturb_lrad(factors[-1], frac, rng, load_range))
    precisions = []
    edges = []
    for f in factors:
        precisions.append(materialize(f).M)
        B = f.Y @ f.Y.T
        E = (np.abs(B) > 0).astype(int)
        np.fill_diagonal(E, 0)
        edges.append(E)
    meta = {"kind": "lrad", "p": p, "r": r, "T": T, "frac": frac,
            "density": density}
    return GroundTruth(precisions=tuple(precisions), edges=tuple(edges),
                       factors=tuple(factors), meta=meta)


def sample_dataset(truth, n, seed, family: str = "gaussian",
                   nu: float | None = None) -> WindowedDataset:
    """Draw one sample block per window with independently spawned RNG streams.

    ``truth`` is a GroundTruth or a list of dense precisions; ``n`` is one
    count for all windows or a per-window sequence; ``seed`` is an integer or
    a numpy SeedSequence.  Window t uses the t-th spawned child stream, so
    adding windows never changes the draws of earlier ones.
    """
    precisions = truth.precisions if isinstance(truth, GroundTruth) else list(truth)
    T = len(precisions)
    counts = [int(n)] * T if np.isscalar(n) else [int(v) for v in n]
    if len(counts) != T:
        raise ValueError(f"{len(counts)} sample counts for {T} windows")
    if family not in ("gaussian", "student_t"):
        raise ValueError(f"unknown family {family!r}")
    if family == "student_t" and (nu is None or nu <= 0):
        raise ValueError("student_t sampling requires nu > 0")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    children = ss.spawn(T)
    windows = []
    for t in range(T):
        rng = np.random.Generator(np.random.PCG64(children[t]))
        if family == "gaussian":
            windows.append(sample_gaussian(precisions[t], counts[t], rng))
        else:
            windows.append(sample_student_t(precisions[t], nu, counts[t], rng))
    return WindowedDataset(tuple(windows))
