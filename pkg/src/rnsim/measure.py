"""Entropy-based change of measure on one-step instrument gains.

Given Monte Carlo samples of one-step gains ``dX`` (one row per sampled
next state, one column per tradeable instrument, everything normalized by
the current spot), maximizing expected exponential utility of ``a . dX``
is equivalent to minimizing

    L(a) = mean_j exp(-lam * a . dx_j),

a smooth convex problem solved here by damped Newton iterations with an
explicit Hessian. The optimizer ``a*`` defines gains ``G*_j = a* . dx_j``
and reweighting

    w_j = exp(-lam * G*_j) / mean_i exp(-lam * G*_i),

which is strictly positive, has sample mean exactly 1, and satisfies the
first-order condition ``mean_j w_j dx_j = 0`` per instrument: under the
reweighted sample every instrument is driftless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError
from .grid import GridSpec

__all__ = [
    "InstrumentSet",
    "MeasureChange",
    "exp_utility",
    "certainty_equivalent",
    "utility_loss",
    "solve_optimal_action",
    "compute_weights",
    "change_of_measure",
]


@dataclass(frozen=True)
class InstrumentSet:
    """The spot plus a set of (tau, strike) option pillars from the grid."""

    options: tuple[tuple[int, float], ...] = ((60, 1.0), (120, 1.0))

    def __post_init__(self):
        if len(set(self.options)) != len(self.options):
            raise DataError("duplicate option instruments")

    @property
    def size(self) -> int:
        return 1 + len(self.options)

    def labels(self) -> list[str]:
        return ["spot"] + [f"call_{int(tau)}_{k:.2f}" for tau, k in self.options]

    def validate_against(self, spec: GridSpec) -> None:
        for tau, k in self.options:
            if not np.any(spec.maturities == tau) or not np.any(spec.strikes == k):
                raise DataError(
                    f"instrument (tau={tau}, k={k}) is not a grid pillar"
                )


def exp_utility(x, risk_aversion: float):
    """Exponential utility (1 - exp(-lam*x)) / lam; concave, increasing, u(0)=0."""
    if risk_aversion <= 0:
        raise DataError("risk aversion must be positive")
    x = np.asarray(x, dtype=float)
    out = (1.0 - np.exp(-risk_aversion * x)) / risk_aversion
    return float(out) if out.ndim == 0 else out


def certainty_equivalent(mean_utility: float, risk_aversion: float) -> float:
    """Inverse utility of an achieved mean utility (the riskless equivalent)."""
    arg = -risk_aversion * mean_utility
    if arg <= -1.0:
        return np.inf
    return float(-np.log1p(arg) / risk_aversion)


def _validate_gains(gains) -> np.ndarray:
    dx = np.asarray(gains, dtype=float)
    if dx.ndim != 2 or dx.shape[0] < 2:
        raise DataError("gains must be a 2-d sample with at least 2 rows")
    if not np.all(np.isfinite(dx)):
        raise DataError("gains must be finite")
    return dx


def _shifted_moments(dx: np.ndarray, a: np.ndarray, lam: float):
    """log L, grad(log L) and Hessian/L at action ``a``, max-shifted.

    ``grad(log L) = grad L / L`` and ``H / L`` are exactly what the Newton
    step needs; the common factor exp(shift) cancels, so the computation
    never overflows for finite inputs.
    """
    z = -lam * (dx @ a)
    m = float(np.max(z))
    e = np.exp(z - m)
    s = float(np.mean(e))
    p = e / (e.sum())
    xbar = p @ dx
    grad_over_l = -lam * xbar
    hess_over_l = lam**2 * (dx.T * p) @ dx
    logl = m + np.log(s)
    return logl, grad_over_l, hess_over_l, xbar


def utility_loss(action, gains, risk_aversion: float = 1.0):
    """MC utility loss, its gradient and Hessian at ``action``.

    loss = mean_j exp(-lam a.dx_j); grad = -lam * mean_j exp(...) dx_j;
    hess = lam^2 * mean_j exp(...) dx_j dx_j^T (positive semidefinite).
    Raw values can overflow for extreme actions; the solver works on the
    max-shifted log form instead.
    """
    if risk_aversion <= 0:
        raise DataError("risk aversion must be positive")
    dx = _validate_gains(gains)
    a = np.asarray(action, dtype=float)
    if a.shape != (dx.shape[1],):
        raise DataError("action length must match the number of instruments")
    logl, grad_over_l, hess_over_l, _ = _shifted_moments(dx, a, risk_aversion)
    loss = np.exp(logl)
    return loss, loss * grad_over_l, loss * hess_over_l


@dataclass
class MeasureChange:
    """Optimal action, reweighting and solver diagnostics for one condition."""

    action: np.ndarray
    risk_aversion: float
    weights: np.ndarray
    gains: np.ndarray  # optimal per-sample gains G*_j = a* . dx_j
    iterations: int
    grad_norm: float

    @property
    def reweighted_drift(self) -> np.ndarray:
        """mean_j w_j dx_j per instrument; ~0 at convergence."""
        return self._dx.T @ self.weights / self.weights.size

    _dx: np.ndarray = None  # set by change_of_measure


def solve_optimal_action(
    gains,
    risk_aversion: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100,
):
    """Minimize the MC utility loss by damped, regularized Newton steps.

    Converged when the sup-norm of ``grad L / L`` falls to ``tol`` (the
    scale-free first-order condition; at that point the reweighted drift
    per instrument is at most ``tol / lam``). Returns
    ``(action, iterations, grad_norm)``.
    """
    if risk_aversion <= 0:
        raise DataError("risk aversion must be positive")
    dx = _validate_gains(gains)
    d = dx.shape[1]
    a = np.zeros(d)
    lam = risk_aversion
    diag_scale = max(float(np.mean(dx**2)) * lam**2, 1e-300)

    logl, g, h, _ = _shifted_moments(dx, a, lam)
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            return a, it - 1, gnorm
        reg = 1e-12 * diag_scale
        step_ok = False
        for _ in range(8):
            try:
                direction = np.linalg.solve(h + reg * np.eye(d), -g)
            except np.linalg.LinAlgError:
                reg *= 100.0
                continue
            slope = float(g @ direction)
            if slope >= 0:
                reg *= 100.0
                continue
            t = 1.0
            for _ in range(60):
                cand = a + t * direction
                new_logl, new_g, new_h, _ = _shifted_moments(dx, cand, lam)
                if new_logl <= logl + 1e-4 * t * slope:
                    a, logl, g, h = cand, new_logl, new_g, new_h
                    step_ok = True
                    break
                t *= 0.5
            if step_ok:
                break
            reg *= 100.0
        if not step_ok:
            raise ConvergenceError(
                f"Newton line search stalled at iteration {it} "
                f"(grad sup-norm {gnorm:.3e})"
            )
    gnorm = float(np.max(np.abs(g)))
    if gnorm <= tol:
        return a, max_iter, gnorm
    raise ConvergenceError(
        f"Newton did not reach tolerance {tol:.1e} in {max_iter} iterations "
        f"(grad sup-norm {gnorm:.3e}); the sampled gains may admit unbounded "
        "utility (single-signed portfolio gains)"
    )


def compute_weights(gains, action, risk_aversion: float = 1.0) -> np.ndarray:
    """Normalized change-of-measure weights for a solved action.

    Strictly positive with sample mean exactly 1 (up to rounding); a
    decreasing function of the realized optimal gains.
    """
    dx = _validate_gains(gains)
    a = np.asarray(action, dtype=float)
    z = -risk_aversion * (dx @ a)
    e = np.exp(z - np.max(z))
    return e / np.mean(e)


def change_of_measure(
    gains,
    risk_aversion: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> MeasureChange:
    """Solve for the optimal action and return the full measure change."""
    dx = _validate_gains(gains)
    action, iters, gnorm = solve_optimal_action(dx, risk_aversion, tol, max_iter)
    weights = compute_weights(dx, action, risk_aversion)
    mc = MeasureChange(
        action=action,
        risk_aversion=risk_aversion,
        weights=weights,
        gains=dx @ action,
        iterations=iters,
        grad_norm=gnorm,
    )
    mc._dx = dx
    return mc
