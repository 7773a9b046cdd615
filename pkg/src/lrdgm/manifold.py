"""Quotient geometry of low-rank-plus-diagonal precision factors.

A point is a pair theta = (Y, D) with Y a full-column-rank p x r factor and D
a strictly positive length-p diagonal, representing the precision matrix
Theta = Y Y^T + diag(D).  The map (Y, D) -> Y Y^T + diag(D) is invariant under
Y -> Y O for orthogonal O, so the search space is the quotient of the product
space by that gauge action.  Directions along the gauge orbit (the vertical
space {(Y Omega, 0) : Omega skew}) carry no information; optimization works in
the horizontal space, the metric-orthogonal complement

    H_theta = {(Z1, Z2) : Y^T Z1 = Z1^T Y, Z2 diagonal}.

The metric is Euclidean on the factor block and affine-invariant on the
diagonal block:

    <xi, zeta>_theta = tr(xi_Y^T zeta_Y) + sum_i xi_D[i] zeta_D[i] / D[i]^2.

All types are immutable values and all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative floor on singular values of Y: below rank_tol = RANK_RTOL * sigma_max
# the factor is declared rank-deficient (the Sylvester solve needs Y^T Y > 0).
RANK_RTOL = 1e-10

# Relative tolerance for horizontality checks; absorbs accumulated rounding in
# p x r products.
SYM_RTOL = 1e-8


class RankDeficientError(ValueError):
    """The factor matrix lost full column rank."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FactorPoint:
    """One point theta = (Y, D) of the factor space.

    Y : (p, r) array, full column rank.
    D : (p,) array, strictly positive diagonal entries.
    """

    Y: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        D = np.asarray(self.D, dtype=float)
        if Y.ndim != 2:
            raise ValueError(f"Y must be a p x r matrix, got ndim={Y.ndim}")
        if D.ndim != 1:
            raise ValueError(f"D must be a length-p vector, got ndim={D.ndim}")
        p, r = Y.shape
        if D.shape[0] != p:
            raise ValueError(f"shape mismatch: Y is {p} x {r}, D has length {D.shape[0]}")
        if not (p >= r >= 1):
            raise ValueError(f"need p >= r >= 1, got p={p}, r={r}")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(D))):
            raise ValueError("non-finite entries in factor point")
        if np.any(D <= 0.0):
            raise ValueError("D must be strictly positive")
        svals = np.linalg.svd(Y, compute_uv=False)
        if svals[0] <= 0.0 or svals[-1] <= RANK_RTOL * svals[0]:
            raise RankDeficientError(
                f"factor is rank-deficient: sigma_min/sigma_max = "
                f"{svals[-1] / svals[0] if svals[0] > 0 else 0.0:.3e}"
            )
        object.__setattr__(self, "Y", _readonly(Y))
        object.__setattr__(self, "D", _readonly(D))

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def r(self) -> int:
        return self.Y.shape[1]

    def __repr__(self):
        return f"FactorPoint(p={self.p}, r={self.r})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """A perturbation (xiY, xiD) of a factor point."""

    xiY: np.ndarray
    xiD: np.ndarray

    def __post_init__(self):
        xiY = np.asarray(self.xiY, dtype=float)
        xiD = np.asarray(self.xiD, dtype=float)
        if xiY.ndim != 2 or xiD.ndim != 1 or xiY.shape[0] != xiD.shape[0]:
            raise ValueError(
                f"inconsistent tangent shapes: xiY {xiY.shape}, xiD {xiD.shape}"
            )
        if not (np.all(np.isfinite(xiY)) and np.all(np.isfinite(xiD))):
            raise ValueError("non-finite entries in tangent vector")
        object.__setattr__(self, "xiY", _readonly(xiY))
        object.__setattr__(self, "xiD", _readonly(xiD))

    def __add__(self, other: "TangentVector") -> "TangentVector":
        cls = type(self) if type(self) is type(other) else TangentVector
        return cls(self.xiY + other.xiY, self.xiD + other.xiD)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        cls = type(self) if type(self) is type(other) else TangentVector
        return cls(self.xiY - other.xiY, self.xiD - other.xiD)

    def __mul__(self, c: float) -> "TangentVector":
        return type(self)(c * self.xiY, c * self.xiD)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return type(self)(-self.xiY, -self.xiD)

    def __repr__(self):
        return f"{type(self).__name__}(p={self.xiY.shape[0]}, r={self.xiY.shape[1]})"


class HorizontalTangent(TangentVector):
    """Tangent vector satisfying the gauge-orthogonality constraint.

    At base point theta the invariant is that Y^T xiY is symmetric (up to
    SYM_RTOL relative).  Linear combinations of horizontal vectors at the same
    base point stay horizontal, which the arithmetic operators preserve.
    """


def _scaled_factor_svd(theta: FactorPoint):
    # Thin SVD of V = D^-1/2 Y, the whitened factor: Theta = D^1/2 (I + V V^T) D^1/2.
    V = theta.Y / np.sqrt(theta.D)[:, None]
    return np.linalg.svd(V, full_matrices=False)


def factor_inverse_products(theta: FactorPoint) -> tuple:
    """The inverse-matrix products a gradient step needs, stable at tiny D.

    Returns (Theta^-1 Y, D^2 * diag(Theta^-1), logdet Theta).  The Woodbury
    split D^-1 - W C^-1 W^T cancels catastrophically once some D_i is far
    below the eigenvalues of Y Y^T (both terms grow like 1/D_i while the
    result stays bounded), and the optimizer does drive diagonal entries
    toward zero whenever the low-rank part explains a coordinate on its own.
    Writing V = D^-1/2 Y = Q diag(s) P^T telescopes the three products into

        Theta^-1 Y        = D^-1/2 Q diag(s / (1 + s^2)) P^T
        D^2 diag(Theta^-1) = D * (1 - sum_k Q_ik^2 s_k^2 / (1 + s_k^2))
        logdet Theta       = sum log D + sum log(1 + s_k^2)

    where every entry is produced by products and convex combinations of
    well-scaled quantities, with no large-term subtraction at any D > 0.
    """
    Q, sig, Pt = _scaled_factor_svd(theta)
    s2 = sig * sig
    invY = ((Q * (sig / (1.0 + s2))) @ Pt) / np.sqrt(theta.D)[:, None]
    d2diag = theta.D * np.maximum(1.0 - (Q * Q) @ (s2 / (1.0 + s2)), 0.0)
    logdet = float(np.sum(np.log(theta.D)) + np.sum(np.log1p(s2)))
    return invY, d2diag, logdet


@dataclass(frozen=True, eq=False)
class StructuredGradient:
    """Euclidean gradient of a function of Theta in assembled low-rank form.

    Represents the symmetric p x p matrix

        G = diag(diag_part) + sum_k U_k C_k U_k^T
            + sum_k X_k^T diag(w_k) X_k
            + sum_k c_k * (Y_k Y_k^T + diag(D_k))^-1 + dense_part

    without forming it, so that products G @ Y cost O(n p r + p r^2 + p^2 r)
    instead of requiring a dense intermediate.  The ``inverse`` entries are
    (FactorPoint, coefficient) pairs kept in factor form; consumers resolve
    them through factor_inverse_products so the products stay accurate when
    diagonal entries of the point are tiny.  The dense assembly
    (``to_dense``) is the reference used by tests.
    """

    diag_part: np.ndarray | None = None
    lowrank: tuple = ()      # pairs (U, C): term U C U^T, C symmetric
    samples: tuple = ()      # pairs (X, w): term X^T diag(w) X
    inverse: tuple = ()      # pairs (FactorPoint, c): term c * Theta(point)^-1
    dense_part: np.ndarray | None = None

    def apply_to(self, Y: np.ndarray) -> np.ndarray:
        out = np.zeros((Y.shape[0], Y.shape[1]))
        if self.diag_part is not None:
            out += self.diag_part[:, None] * Y
        for U, C in self.lowrank:
            out += U @ (C @ (U.T @ Y))
        for X, w in self.samples:
            out += X.T @ (w[:, None] * (X @ Y))
        for th, c in self.inverse:
            Q, sig, _ = _scaled_factor_svd(th)
            rD = np.sqrt(th.D)[:, None]
            M = Y / rD
            w = (sig * sig) / (1.0 + sig * sig)
            out += (c / rD) * (M - Q @ (w[:, None] * (Q.T @ M)))
        if self.dense_part is not None:
            out += self.dense_part @ Y
        return out

    def diagonal(self) -> np.ndarray:
        p = self._dim()
        d = np.zeros(p)
        if self.diag_part is not None:
            d += self.diag_part
        for U, C in self.lowrank:
            d += np.einsum("ik,kl,il->i", U, C, U)
        for X, w in self.samples:
            d += w @ (X * X)
        for th, c in self.inverse:
            Q, sig, _ = _scaled_factor_svd(th)
            w = (sig * sig) / (1.0 + sig * sig)
            d += c * np.maximum(1.0 - (Q * Q) @ w, 0.0) / th.D
        if self.dense_part is not None:
            d += np.diagonal(self.dense_part)
        return d

    def to_dense(self) -> np.ndarray:
        p = self._dim()
        G = np.zeros((p, p))
        if self.diag_part is not None:
            G[np.diag_indices(p)] += self.diag_part
        for U, C in self.lowrank:
            G += U @ C @ U.T
        for X, w in self.samples:
            G += X.T @ (w[:, None] * X)
        for th, c in self.inverse:
            Q, sig, _ = _scaled_factor_svd(th)
            w = (sig * sig) / (1.0 + sig * sig)
            core = -(Q * w) @ Q.T
            core[np.diag_indices(p)] += 1.0
            rD = np.sqrt(th.D)
            G += c * (core / rD[:, None] / rD[None, :])
        if self.dense_part is not None:
            G += self.dense_part
        return G

    def _dim(self) -> int:
        if self.diag_part is not None:
            return self.diag_part.shape[0]
        if self.lowrank:
            return self.lowrank[0][0].shape[0]
        if self.samples:
            return self.samples[0][0].shape[1]
        if self.inverse:
            return self.inverse[0][0].p
        if self.dense_part is not None:
            return self.dense_part.shape[0]
        raise ValueError("empty structured gradient")


def _check_tangent(theta: FactorPoint, xi: TangentVector, name: str = "xi"):
    if xi.xiY.shape != theta.Y.shape or xi.xiD.shape != theta.D.shape:
        raise ValueError(
            f"{name} has shape ({xi.xiY.shape}, {xi.xiD.shape}); "
            f"point expects ({theta.Y.shape}, {theta.D.shape})"
        )


def metric_inner(theta: FactorPoint, xi: TangentVector, zeta: TangentVector) -> float:
    """Riemannian inner product tr(xiY^T zetaY) + tr(D^-1 xiD D^-1 zetaD)."""
    _check_tangent(theta, xi)
    _check_tangent(theta, zeta, "zeta")
    diag_term = np.dot(xi.xiD / theta.D, zeta.xiD / theta.D)
    return float(np.sum(xi.xiY * zeta.xiY) + diag_term)


def metric_norm(theta: FactorPoint, xi: TangentVector) -> float:
    return float(np.sqrt(max(metric_inner(theta, xi, xi), 0.0)))


def solve_sylvester(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Solve Omega Q + Q Omega = R for skew-symmetric Omega, Q SPD.

    Diagonalizing Q = V diag(lam) V^T turns the equation into the entrywise
    division Omega~_ij = R~_ij / (lam_i + lam_j) in the eigenbasis, which is
    well posed because lam_i + lam_j > 0.  Skewness of R makes the solution
    skew-symmetric.
    """
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape != R.shape:
        raise ValueError(f"expected square matrices of equal size, got {Q.shape} and {R.shape}")
    nrm = np.linalg.norm(R)
    if nrm > 0 and np.linalg.norm(R + R.T) > SYM_RTOL * nrm:
        raise ValueError("right-hand side is not skew-symmetric")
    Qs = (Q + Q.T) / 2.0
    Rk = (R - R.T) / 2.0
    lam, V = np.linalg.eigh(Qs)
    if lam[-1] <= 0.0 or lam[0] <= (RANK_RTOL ** 2) * lam[-1]:
        raise RankDeficientError(
            f"Gram matrix is numerically singular: lambda_min/lambda_max = "
            f"{lam[0] / lam[-1] if lam[-1] > 0 else 0.0:.3e}"
        )
    Rt = V.T @ Rk @ V
    Om = V @ (Rt / (lam[:, None] + lam[None, :])) @ V.T
    return (Om - Om.T) / 2.0


def project_horizontal(theta: FactorPoint, Z: TangentVector) -> HorizontalTangent:
    """Metric-orthogonal projection of an ambient tangent onto the horizontal space.

    The removed component is (Y Omega, 0) with Omega solving the skew Sylvester
    equation Omega (Y^T Y) + (Y^T Y) Omega = Y^T Z1 - Z1^T Y; the diagonal block
    passes through unchanged.
    """
    _check_tangent(theta, Z, "Z")
    G = theta.Y.T @ Z.xiY
    Om = solve_sylvester(theta.Y.T @ theta.Y, G - G.T)
    return HorizontalTangent(Z.xiY - theta.Y @ Om, Z.xiD)


def is_horizontal(theta: FactorPoint, xi: TangentVector, rtol: float = SYM_RTOL) -> bool:
    """Check the gauge-orthogonality invariant ||Y^T xiY - (Y^T xiY)^T|| <= rtol ||xiY||."""
    _check_tangent(theta, xi)
    S = theta.Y.T @ xi.xiY
    nrm = np.linalg.norm(xi.xiY)
    if nrm == 0.0:
        return True
    return bool(np.linalg.norm(S - S.T) <= rtol * nrm)


def egrad_to_rgrad(theta: FactorPoint, grad) -> HorizontalTangent:
    """Riemannian gradient from the Euclidean gradient G of f(Y Y^T + diag(D)).

    The chain rule gives the Euclidean block gradient (2 G Y, ddiag(G)); under
    the metric the diagonal block is rescaled by D on both sides, so the result
    is (2 G Y, D * diag(G) * D).  It is horizontal with no extra projection
    because G is symmetric.

    ``grad`` is a dense symmetric (p, p) array or a StructuredGradient.  An
    inverse piece whose point is the base point itself is resolved through
    factor_inverse_products; routing it through the generic products would
    reintroduce the large-term cancellation that representation avoids.
    """
    if isinstance(grad, StructuredGradient):
        own = [pair for pair in grad.inverse if pair[0] is theta]
        rest = StructuredGradient(grad.diag_part,
                                  grad.lowrank,
                                  grad.samples,
                                  tuple(pair for pair in grad.inverse if pair[0] is not theta),
                                  grad.dense_part)
        GY = rest.apply_to(theta.Y)
        gd2 = theta.D * rest.diagonal() * theta.D
        if own:
            invY, d2diag, _ = factor_inverse_products(theta)
            c = sum(pair[1] for pair in own)
            GY = GY + c * invY
            gd2 = gd2 + c * d2diag
        return HorizontalTangent(2.0 * GY, gd2)
    G = np.asarray(grad, dtype=float)
    if G.shape != (theta.p, theta.p):
        raise ValueError(f"gradient shape {G.shape} does not match p={theta.p}")
    return HorizontalTangent(2.0 * (G @ theta.Y), theta.D * np.diagonal(G) * theta.D)


def retract(theta: FactorPoint, xi: TangentVector) -> FactorPoint:
    """Second-order retraction (Y + xiY, D + xiD + xiD^2 / (2 D)).

    The diagonal update equals D * (1 + e + e^2/2) with e = xiD / D entrywise,
    and 1 + e + e^2/2 = ((e + 1)^2 + 1) / 2 >= 1/2, so the new diagonal is
    positive for every step.  A factor that loses rank raises
    RankDeficientError; callers shrink the step instead of repairing Y.
    """
    _check_tangent(theta, xi)
    newD = theta.D + xi.xiD + xi.xiD * xi.xiD / (2.0 * theta.D)
    return FactorPoint(theta.Y + xi.xiY, newD)


def transport(frm: FactorPoint, to: FactorPoint, xi: HorizontalTangent) -> HorizontalTangent:
    """Vector transport by horizontal projection at the target point."""
    if frm.Y.shape != to.Y.shape:
        raise ValueError("transport endpoints have mismatched shapes")
    return project_horizontal(to, xi)
