"""Riemannian conjugate gradient over sequences of precision factors.

Minimizes the coupled objective with a nonlinear conjugate gradient method on
the product of per-window factor spaces: one global step size, one direction
per window.  Search directions combine the new negative gradient with the
transported previous direction through a per-window Hestenes-Stiefel
coefficient (clipped at zero); a global safeguard falls back to steepest
descent whenever the combined direction loses sufficient descent.  The step
size satisfies the strong Wolfe conditions via bracketing and sectioning
(Nocedal & Wright, Numerical Optimization, Algorithm 3.5/3.6).

A trial step that destroys full column rank of any factor is treated as an
objective value of +inf, which makes the bracketing phase shrink away from it
rather than aborting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import (
    FactorPoint,
    RankDeficientError,
    metric_inner,
    metric_norm,
    retract,
    transport,
)
from .model import ModelConfig, PrecisionSequence, WindowedDataset, objective_value_and_rgrad

# Covariance eigenvalues at or below INIT_EIG_RTOL * lambda_max cannot seed a
# factor column.
INIT_EIG_RTOL = 1e-10

# Relative floor for the diagonal initializer.
INIT_DIAG_RTOL = 1e-6

# A run whose relative objective decrease over the trailing STAGNATION_RUN
# iterations falls under STAGNATION_RTOL terminates with reason "stagnation".
STAGNATION_RTOL = 1e-12
STAGNATION_RUN = 5

_ALPHA_MAX = 1e12


class LineSearchError(RuntimeError):
    """The step-size search could not satisfy the strong Wolfe conditions."""


@dataclass(frozen=True)
class SolverConfig:
    """Optimizer settings.

    seed and deterministic are recorded in run manifests; the solver itself
    draws no random numbers and its summation order is fixed, so repeated runs
    on identical inputs reproduce traces bitwise either way.
    """

    model: ModelConfig
    eps_tol: float = 1e-6
    max_iter: int = 500
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    restart_c0: float = 1e-4
    ls_max_evals: int = 40
    seed: int = 0
    deterministic: bool = True
    structured: bool = True

    def __post_init__(self):
        if not isinstance(self.model, ModelConfig):
            raise TypeError("model must be a ModelConfig")
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if not (0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0):
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.restart_c0 <= 0:
            raise ValueError("restart_c0 must be positive")
        if self.ls_max_evals < 2:
            raise ValueError("ls_max_evals must be at least 2")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True, eq=False)
class SolverTrace:
    """Per-iteration record of a fit; row 0 is the initial point.

    termination is one of "converged", "budget", "stagnation",
    "line_search_failure"; detail carries the diagnostic for failures.
    """

    iters: np.ndarray
    objective: np.ndarray
    max_grad_norm: np.ndarray
    step: np.ndarray
    restarted: np.ndarray
    termination: str
    detail: str = ""

    @property
    def num_iterations(self) -> int:
        return len(self.iters) - 1

    def rows(self):
        for k in range(len(self.iters)):
            yield {
                "iter": int(self.iters[k]),
                "objective": float(self.objective[k]),
                "max_grad_norm": float(self.max_grad_norm[k]),
                "step": float(self.step[k]),
                "restarted": bool(self.restarted[k]),
            }


def init_sequence(data: WindowedDataset, r: int) -> PrecisionSequence:
    """Spectral initializer from per-window sample covariances.

    Loads the top-r covariance eigenpairs into Y (columns sqrt(lambda_j) v_j)
    and starts D at the covariance diagonal, floored at a small multiple of
    its mean.  Windows whose covariance cannot support rank r raise
    RankDeficientError; choose a smaller rank in that case.
    """
    if r < 1:
        raise ValueError("rank must be at least 1")
    if r > data.p:
        raise ValueError(f"rank {r} exceeds dimension {data.p}")
    points = []
    for t, X in enumerate(data.windows):
        n = X.shape[0]
        S = (X.T @ X) / n
        S = (S + S.T) / 2.0
        lam, V = np.linalg.eigh(S)
        top = lam[::-1][:r]
        if lam[-1] <= 0.0 or top[-1] <= INIT_EIG_RTOL * lam[-1]:
            raise RankDeficientError(
                f"window {t}: covariance eigenvalue {top[-1]:.3e} is too small "
                f"to seed rank {r}; reduce the rank"
            )
        Y = V[:, ::-1][:, :r] * np.sqrt(top)[None, :]
        d = np.diagonal(S)
        D = np.maximum(d, INIT_DIAG_RTOL * float(np.mean(d)))
        points.append(FactorPoint(Y, D))
    return PrecisionSequence(tuple(points))


def _cubic_min(a, fa, da, b, fb, db):
    # Minimizer of the cubic Hermite interpolant on [a, b]; nan on failure.
    with np.errstate(all="ignore"):
        d1 = da + db - 3.0 * (fa - fb) / (a - b)
        disc = d1 * d1 - da * db
        if not np.isfinite(disc) or disc < 0.0:
            return np.nan
        d2 = np.sign(b - a) * np.sqrt(disc)
        denom = db - da + 2.0 * d2
        if denom == 0.0 or not np.isfinite(denom):
            return np.nan
        return b - (b - a) * (db + d2 - d1) / denom


class _PhiEvaluator:
    """phi(alpha) = F(retraction of alpha * direction), with a slope surrogate.

    The slope pairs the gradient at the trial point with the direction
    transported there, not with the exact path velocity.  At alpha = 0 the two
    agree, so descent logic is unchanged; away from 0 the transported pairing
    is deliberately stricter along directions the metric stretches.  When the
    minimizer of a diagonal entry sits at D_i -> 0, the objective decays along
    an asymptote: the exact-velocity slope shrinks together with the metric and
    the curvature condition passes at tiny steps, creeping down the funnel,
    while the transported slope holds its size and keeps the bracketing phase
    doubling alpha, covering many e-folds of D_i per line search.

    Rank-breaking trial points report phi = +inf so the search backs away from
    them.  Every call counts toward the evaluation budget.
    """

    def __init__(self, seq, direction, data, cfg: SolverConfig):
        self.seq = seq
        self.direction = direction
        self.data = data
        self.cfg = cfg
        self.evals = 0

    def __call__(self, alpha: float):
        if self.evals >= self.cfg.ls_max_evals:
            raise LineSearchError(
                f"no strong Wolfe step within {self.cfg.ls_max_evals} evaluations"
            )
        self.evals += 1
        pts = []
        try:
            for th, xi in zip(self.seq.points, self.direction):
                pts.append(retract(th, alpha * xi))
        except RankDeficientError:
            return np.inf, np.nan, None, None, None
        newseq = PrecisionSequence(tuple(pts))
        F, grads = objective_value_and_rgrad(
            newseq, self.data, self.cfg.model, structured=self.cfg.structured)
        dphi = 0.0
        txis = []
        for t in range(len(pts)):
            txi = transport(self.seq.points[t], pts[t], self.direction[t])
            dphi += metric_inner(pts[t], grads[t], txi)
            txis.append(txi)
        return F, dphi, newseq, grads, txis


def _zoom(ev, alo, philo, dphilo, ahi, phihi, dphihi, f0, dphi0, c1, c2):
    # Cubic steps alone can cluster near one endpoint and stall the bracket;
    # whenever two rounds fail to shrink it by 2/3, the next trial bisects.
    width_prev = width_prev2 = np.inf
    while True:
        lo, hi = (alo, ahi) if alo < ahi else (ahi, alo)
        width = hi - lo
        if width <= 1e-14 * max(1.0, hi):
            raise LineSearchError("bracketing interval collapsed")
        aj = _cubic_min(alo, philo, dphilo, ahi, phihi, dphihi)
        if (not np.isfinite(aj) or aj <= lo + 0.1 * width or aj >= hi - 0.1 * width
                or width > 0.66 * width_prev2):
            aj = lo + 0.5 * width
        width_prev2, width_prev = width_prev, width
        phi, dphi, seq, grads, txis = ev(aj)
        if not (phi <= f0 + c1 * aj * dphi0) or phi >= philo:
            ahi, phihi, dphihi = aj, phi, dphi
        else:
            if abs(dphi) <= -c2 * dphi0:
                return aj, phi, seq, grads, txis
            if dphi * (ahi - alo) >= 0.0:
                ahi, phihi, dphihi = alo, philo, dphilo
            alo, philo, dphilo = aj, phi, dphi


def _strong_wolfe(ev, f0, dphi0, alpha0, c1, c2):
    """Bracketing phase; returns (alpha, phi, sequence, grads, transported dir).

    A trial that already satisfies both Wolfe conditions is remembered rather
    than returned at once: the search keeps doubling while successive trials
    keep satisfying them with strictly lower objective, and hands back the
    best such point when the run ends.  Long shallow valleys are covered in
    one search this way instead of one small accepted step per iteration.
    """
    if not (dphi0 < 0.0):
        raise LineSearchError(f"not a descent direction (slope {dphi0:.3e})")
    a_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    a = min(max(alpha0, 1e-300), _ALPHA_MAX)
    first = True
    best = None
    while True:
        try:
            phi, dphi, seq, grads, txis = ev(a)
        except LineSearchError:
            if best is not None:
                return best
            raise
        armijo = phi <= f0 + c1 * a * dphi0
        if not armijo or (not first and phi >= phi_prev):
            if best is not None:
                return best
            return _zoom(ev, a_prev, phi_prev, dphi_prev, a, phi, dphi, f0, dphi0, c1, c2)
        if abs(dphi) <= -c2 * dphi0:
            if best is not None and phi >= best[1]:
                return best
            best = (a, phi, seq, grads, txis)
            if a >= _ALPHA_MAX:
                return best
        elif dphi >= 0.0:
            if best is not None:
                return best
            return _zoom(ev, a, phi, dphi, a_prev, phi_prev, dphi_prev, f0, dphi0, c1, c2)
        a_prev, phi_prev, dphi_prev = a, phi, dphi
        if a >= _ALPHA_MAX:
            raise LineSearchError("step size reached its maximum")
        a = min(2.0 * a, _ALPHA_MAX)
        first = False


def wolfe_line_search(seq: PrecisionSequence, direction: list, data: WindowedDataset,
                      cfg: SolverConfig, alpha0: float = 1.0) -> float:
    """Strong Wolfe step size along a joint direction (one tangent per window)."""
    f0, grads = objective_value_and_rgrad(seq, data, cfg.model, structured=cfg.structured)
    dphi0 = sum(metric_inner(th, g, xi)
                for th, g, xi in zip(seq.points, grads, direction))
    if dphi0 >= 0.0:
        raise ValueError(f"direction is not a descent direction (slope {dphi0:.3e})")
    ev = _PhiEvaluator(seq, direction, data, cfg)
    alpha, _, _, _, _ = _strong_wolfe(ev, f0, dphi0, alpha0, cfg.wolfe_c1, cfg.wolfe_c2)
    return float(alpha)


def fit(data: WindowedDataset, cfg: SolverConfig):
    """Run the conjugate gradient solver from the spectral initializer.

    Returns (PrecisionSequence, SolverTrace).  The trace starts at the initial
    point and its objective column is non-increasing.  A failed line search is
    retried once from steepest descent before the solver gives up with
    termination "line_search_failure", returning the last accepted iterate.
    """
    mcfg = cfg.model
    seq = init_sequence(data, mcfg.rank)
    F, grads = objective_value_and_rgrad(seq, data, mcfg, structured=cfg.structured)
    gmax = max(metric_norm(th, g) for th, g in zip(seq.points, grads))

    it_l, obj_l, grad_l, step_l, rest_l = [0], [F], [gmax], [0.0], [False]
    termination = None
    detail = ""

    tg = None          # previous gradients transported to the current point
    txi = None         # previous direction transported to the current point
    alpha_prev = 1.0
    recent = [F]       # objective over the trailing stagnation window

    if cfg.max_iter == 0:
        termination = "budget"

    s = 0
    while termination is None and s < cfg.max_iter:
        s += 1
        if gmax < cfg.eps_tol:
            termination = "converged"
            break
        sq_sum = sum(metric_inner(th, g, g) for th, g in zip(seq.points, grads))

        restarted = False
        if tg is not None:
            direction = []
            for t in range(seq.T):
                y = grads[t] - tg[t]
                denom = metric_inner(seq.points[t], txi[t], y)
                num = metric_inner(seq.points[t], grads[t], y)
                beta = num / denom if denom != 0.0 and np.isfinite(denom) else 0.0
                beta = max(beta, 0.0) if np.isfinite(beta) else 0.0
                direction.append(-grads[t] + beta * txi[t])
            dphi0 = sum(metric_inner(th, g, d)
                        for th, g, d in zip(seq.points, grads, direction))
            if not (dphi0 <= -cfg.restart_c0 * sq_sum):
                direction = [-g for g in grads]
                dphi0 = -sq_sum
                restarted = True
        else:
            direction = [-g for g in grads]
            dphi0 = -sq_sum

        try:
            ev = _PhiEvaluator(seq, direction, data, cfg)
            alpha, newF, newseq, newgrads, txis = _strong_wolfe(
                ev, F, dphi0, alpha_prev, cfg.wolfe_c1, cfg.wolfe_c2)
        except LineSearchError as first_err:
            if restarted or tg is None:
                termination = "line_search_failure"
                detail = str(first_err)
                break
            direction = [-g for g in grads]
            dphi0 = -sq_sum
            restarted = True
            try:
                ev = _PhiEvaluator(seq, direction, data, cfg)
                alpha, newF, newseq, newgrads, txis = _strong_wolfe(
                    ev, F, dphi0, 1.0, cfg.wolfe_c1, cfg.wolfe_c2)
            except LineSearchError as second_err:
                termination = "line_search_failure"
                detail = f"{first_err}; steepest-descent retry: {second_err}"
                break

        tg = [transport(seq.points[t], newseq.points[t], grads[t]) for t in range(seq.T)]
        txi = txis
        seq, F, grads = newseq, newF, newgrads
        gmax = max(metric_norm(th, g) for th, g in zip(seq.points, grads))
        it_l.append(s)
        obj_l.append(F)
        grad_l.append(gmax)
        step_l.append(float(alpha))
        rest_l.append(restarted)
        alpha_prev = float(alpha)
        recent.append(F)
        if len(recent) > STAGNATION_RUN + 1:
            del recent[0]
        if (len(recent) == STAGNATION_RUN + 1
                and recent[0] - F < STAGNATION_RTOL * max(1.0, abs(recent[0]))):
            termination = "stagnation"
            break

    if termination is None:
        termination = "converged" if gmax < cfg.eps_tol else "budget"

    trace = SolverTrace(
        iters=np.asarray(it_l, dtype=int),
        objective=np.asarray(obj_l, dtype=float),
        max_grad_norm=np.asarray(grad_l, dtype=float),
        step=np.asarray(step_l, dtype=float),
        restarted=np.asarray(rest_l, dtype=bool),
        termination=termination,
        detail=detail,
    )
    return seq, trace
