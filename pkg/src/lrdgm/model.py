"""Elliptical negative log-likelihoods, sparsity penalty, and the full objective.

The model: each data window X_t holds i.i.d. centered elliptical samples with
precision Theta_t = Y_t Y_t^T + diag(D_t).  The fitting objective couples the
windows through the squared affine-invariant distance between consecutive
precisions:

    F = sum_t [ nll_t + lam * penalty(Theta_t) ] + mu * sum_t d(Theta_t, Theta_{t+1})^2

where nll_t = -1/2 log det Theta_t + (1/n_t) sum_i rho(x_i^T Theta_t x_i) and
penalty is a smoothed absolute-value sum over off-diagonal entries.  Gradients
are returned as horizontal tangent vectors of the factor geometry.

Per-window quantities never mix across windows: with mu = 0 the gradient of
window t depends only on (Theta_t, X_t), reproducibly so, since summation
order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spd
from .manifold import FactorPoint, HorizontalTangent, StructuredGradient, egrad_to_rgrad


@dataclass(frozen=True)
class EllipticalFamily:
    """Sampling family of the per-window likelihood.

    kind is "gaussian" or "student_t"; Student-t fitting needs nu > 2 so that
    the weight function stays integrable against the model's second moments.
    """

    kind: str
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "student_t":
            if self.nu is None or not np.isfinite(self.nu) or self.nu <= 2.0:
                raise ValueError("student_t fitting requires finite nu > 2")
        elif self.nu is not None:
            raise ValueError("gaussian family takes no nu")

    @classmethod
    def gaussian(cls) -> "EllipticalFamily":
        return cls("gaussian")

    @classmethod
    def student_t(cls, nu: float) -> "EllipticalFamily":
        return cls("student_t", float(nu))

    def __str__(self):
        if self.kind == "gaussian":
            return "gaussian"
        return f"student_t(nu={self.nu:g})"


def rho(family: EllipticalFamily, s, p: int):
    """Radial potential rho(s) at squared Mahalanobis norm s.

    gaussian: s / 2.  student_t: ((nu + p) / 2) * log(1 + s / nu).
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("squared norms must be nonnegative")
    if family.kind == "gaussian":
        return s / 2.0
    return ((family.nu + p) / 2.0) * np.log1p(s / family.nu)


def u_influence(family: EllipticalFamily, s, p: int):
    """Weight u(s) = 2 rho'(s): 1 for gaussian, (nu + p) / (nu + s) for student_t."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("squared norms must be nonnegative")
    if family.kind == "gaussian":
        return np.ones_like(s)
    return (family.nu + p) / (family.nu + s)


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Sequence of sample blocks, one (n_t, p) array per time window."""

    windows: tuple

    def __post_init__(self):
        if len(self.windows) == 0:
            raise ValueError("need at least one window")
        ws = []
        p = None
        for t, X in enumerate(self.windows):
            X = np.array(X, dtype=float, copy=True)
            if X.ndim != 2 or X.shape[0] < 1:
                raise ValueError(f"window {t} must be a nonempty n x p array")
            if not np.all(np.isfinite(X)):
                raise ValueError(f"window {t} has non-finite entries")
            if p is None:
                p = X.shape[1]
            elif X.shape[1] != p:
                raise ValueError(f"window {t} has {X.shape[1]} columns, expected {p}")
            X.setflags(write=False)
            ws.append(X)
        object.__setattr__(self, "windows", tuple(ws))

    @property
    def T(self) -> int:
        return len(self.windows)

    @property
    def p(self) -> int:
        return self.windows[0].shape[1]

    @property
    def counts(self) -> tuple:
        return tuple(X.shape[0] for X in self.windows)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.windows[t]

    def __len__(self) -> int:
        return len(self.windows)


@dataclass(frozen=True, eq=False)
class PrecisionSequence:
    """One factor point per window, all sharing (p, r)."""

    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) == 0:
            raise ValueError("need at least one point")
        for t, th in enumerate(pts):
            if not isinstance(th, FactorPoint):
                raise TypeError(f"entry {t} is not a FactorPoint")
            if (th.p, th.r) != (pts[0].p, pts[0].r):
                raise ValueError("all points must share the same (p, r)")
        object.__setattr__(self, "points", pts)

    @property
    def T(self) -> int:
        return len(self.points)

    @property
    def p(self) -> int:
        return self.points[0].p

    @property
    def r(self) -> int:
        return self.points[0].r

    def __getitem__(self, t: int) -> FactorPoint:
        return self.points[t]

    def __len__(self) -> int:
        return len(self.points)

    def dense(self) -> list:
        return [spd.materialize(th).M for th in self.points]


@dataclass(frozen=True)
class ModelConfig:
    family: EllipticalFamily
    lam: float
    mu: float
    rank: int
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("lam and mu must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rank < 1:
            raise ValueError("rank must be at least 1")


def _quad_forms(theta: FactorPoint, X: np.ndarray) -> np.ndarray:
    # x^T Theta x batched: ||Y^T x||^2 + sum D x^2, O(n p r).
    Z = X @ theta.Y
    return np.einsum("ij,ij->i", Z, Z) + (X * X) @ theta.D


def nll(theta: FactorPoint, X: np.ndarray, family: EllipticalFamily) -> float:
    """Per-window negative log-likelihood up to an additive constant."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.p:
        raise ValueError(f"samples must be n x {theta.p}, got {X.shape}")
    q = _quad_forms(theta, X)
    return -0.5 * spd.factor_logdet(theta) + float(np.mean(rho(family, q, theta.p)))


def nll_egrad(theta: FactorPoint, X: np.ndarray, family: EllipticalFamily) -> np.ndarray:
    """Dense Euclidean gradient of nll with respect to Theta.

    -1/2 Theta^{-1} + (1/2n) sum_i u(q_i) x_i x_i^T, with Theta^{-1} assembled
    through the Woodbury identity.  Reference path for the structured variant.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.p:
        raise ValueError(f"samples must be n x {theta.p}, got {X.shape}")
    n = X.shape[0]
    u = u_influence(family, _quad_forms(theta, X), theta.p)
    G = -0.5 * spd.factor_inverse_dense(theta) + X.T @ ((u / (2.0 * n))[:, None] * X)
    return (G + G.T) / 2.0


def nll_egrad_structured(theta: FactorPoint, X: np.ndarray,
                         family: EllipticalFamily) -> StructuredGradient:
    """Structured form of nll_egrad; assembles to the same matrix.

    The inverse stays in factor form (-1/2 times the inverse of the point's
    own matrix) and the sample term in (X, weights) form, so products against
    Y cost O(n p r + p r^2) and remain accurate when entries of D are tiny.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.p:
        raise ValueError(f"samples must be n x {theta.p}, got {X.shape}")
    n = X.shape[0]
    u = u_influence(family, _quad_forms(theta, X), theta.p)
    return StructuredGradient(
        samples=((X, u / (2.0 * n)),),
        inverse=((theta, -0.5),),
    )


def _logcosh(t: np.ndarray) -> np.ndarray:
    # log cosh t = |t| - log 2 + log1p(exp(-2|t|)), overflow-free.
    a = np.abs(t)
    return a - np.log(2.0) + np.log1p(np.exp(-2.0 * a))


def _dense_arg(Theta) -> np.ndarray:
    if isinstance(Theta, spd.SpdMatrix):
        return Theta.M
    return np.asarray(Theta, dtype=float)


def penalty(Theta, epsilon: float) -> float:
    """Smooth sparsity surrogate sum_{q != l} eps * log cosh(Theta_ql / eps).

    Sums over ordered off-diagonal pairs, so each symmetric entry counts twice.
    Tends to the off-diagonal l1 norm as eps -> 0.
    """
    Th = _dense_arg(Theta)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    off = np.array(Th, copy=True)
    np.fill_diagonal(off, 0.0)
    return float(epsilon * np.sum(_logcosh(off / epsilon)))


def penalty_egrad(Theta, epsilon: float) -> np.ndarray:
    """Entrywise tanh(Theta_ql / eps) off the diagonal, zero on it."""
    Th = _dense_arg(Theta)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    G = np.tanh(Th / epsilon)
    np.fill_diagonal(G, 0.0)
    return G


def _check_compat(seq: PrecisionSequence, data: WindowedDataset, cfg: ModelConfig):
    if seq.T != data.T:
        raise ValueError(f"sequence has {seq.T} windows, data has {data.T}")
    if seq.p != data.p:
        raise ValueError(f"sequence dimension {seq.p} does not match data dimension {data.p}")
    if seq.r != cfg.rank:
        raise ValueError(f"sequence rank {seq.r} does not match configured rank {cfg.rank}")


def objective_value(seq: PrecisionSequence, data: WindowedDataset, cfg: ModelConfig) -> float:
    """Full coupled objective F(Theta_1, ..., Theta_T)."""
    _check_compat(seq, data, cfg)
    total = 0.0
    for th, X in zip(seq.points, data.windows):
        total += nll(th, X, cfg.family)
    need_dense = cfg.lam > 0 or (cfg.mu > 0 and seq.T > 1)
    if need_dense:
        dense = seq.dense()
        if cfg.lam > 0:
            for M in dense:
                total += cfg.lam * penalty(M, cfg.epsilon)
        if cfg.mu > 0:
            for t in range(seq.T - 1):
                total += cfg.mu * spd.geodesic_distance(dense[t], dense[t + 1]) ** 2
    return float(total)


def _temporal_terms(dense: list) -> tuple[float, list]:
    """Coupling values and Euclidean gradients for all consecutive pairs.

    Inverse square roots are computed once per window and reused by the two
    gradients each pair contributes: the forward gradient lands on window t,
    the backward one on window t + 1.
    """
    T = len(dense)
    grads = [None] * T
    isq = [spd.inv_sqrt(M).M for M in dense]
    value = 0.0

    def _acc(t, G):
        grads[t] = G if grads[t] is None else grads[t] + G

    for t in range(T - 1):
        Ai, Bi = isq[t], isq[t + 1]
        Mf = Ai @ dense[t + 1] @ Ai
        Lf = spd.matrix_log_spd((Mf + Mf.T) / 2.0)
        value += float(np.sum(Lf * Lf))
        Gf = -2.0 * (Ai @ Lf @ Ai)
        _acc(t, (Gf + Gf.T) / 2.0)
        Mb = Bi @ dense[t] @ Bi
        Lb = spd.matrix_log_spd((Mb + Mb.T) / 2.0)
        Gb = -2.0 * (Bi @ Lb @ Bi)
        _acc(t + 1, (Gb + Gb.T) / 2.0)
    return value, grads


def objective_value_and_rgrad(seq: PrecisionSequence, data: WindowedDataset,
                              cfg: ModelConfig, structured: bool = True
                              ) -> tuple[float, list]:
    """Objective value and its Riemannian gradient in one pass.

    Shares quadratic forms, dense assemblies and matrix logarithms between the
    value and the gradient; the optimizer calls this for every trial point.
    Returns (value, [HorizontalTangent per window]).
    """
    _check_compat(seq, data, cfg)
    T = seq.T
    value = 0.0
    need_dense = cfg.lam > 0 or (cfg.mu > 0 and T > 1)
    dense = seq.dense() if need_dense else None

    tval, tgrads = (0.0, [None] * T)
    if cfg.mu > 0 and T > 1:
        tval, tgrads = _temporal_terms(dense)
        value += cfg.mu * tval

    rgrads = []
    for t, (th, X) in enumerate(zip(seq.points, data.windows)):
        n = X.shape[0]
        q = _quad_forms(th, X)
        value += -0.5 * spd.factor_logdet(th) + float(np.mean(rho(cfg.family, q, th.p)))
        u = u_influence(cfg.family, q, th.p)
        w = u / (2.0 * n)

        extra = None
        if cfg.lam > 0:
            value += cfg.lam * penalty(dense[t], cfg.epsilon)
            extra = cfg.lam * penalty_egrad(dense[t], cfg.epsilon)
        if tgrads[t] is not None:
            G = cfg.mu * tgrads[t]
            extra = G if extra is None else extra + G

        if structured:
            eg = StructuredGradient(
                samples=((X, w),),
                inverse=((th, -0.5),),
                dense_part=extra,
            )
        else:
            eg = -0.5 * spd.factor_inverse_dense(th) + X.T @ (w[:, None] * X)
            eg = (eg + eg.T) / 2.0
            if extra is not None:
                eg = eg + extra
        rgrads.append(egrad_to_rgrad(th, eg))
    return float(value), rgrads


def objective_rgrad(seq: PrecisionSequence, data: WindowedDataset, cfg: ModelConfig,
                    structured: bool = True) -> list:
    """Riemannian gradient of the full objective, one horizontal vector per window."""
    return objective_value_and_rgrad(seq, data, cfg, structured=structured)[1]
