"""Autoregressive conditional density model with piecewise-linear spline bins.

Each modeled coordinate gets its own conditioner network that maps the
condition vector plus the already-generated coordinates of the new state
to bin logits. The conditional density of a coordinate is piecewise
constant on ``n_bins`` equal bins of [0, 1] (value ``n_bins * p_k`` on bin
k), so the log-density is exact, the CDF is piecewise linear and strictly
increasing, and sampling inverts it in closed form. Raw coordinates are
mapped to the unit interval by per-dimension affine rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ConvergenceError, DataError, RangeError
from .nets import Adam, EarlyStopper, Mlp, softmax

__all__ = ["ConditionalSplineFlow", "FlowTrainReport", "fit_bounds"]


def fit_bounds(data: np.ndarray, margin: float = 0.1):
    """Per-column (lo, hi) covering ``data`` expanded by ``margin`` * range."""
    data = np.asarray(data, dtype=float)
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    span = hi - lo
    pad = np.where(span > 0, margin * span, np.maximum(np.abs(lo), 1.0) * 1e-9)
    return lo - pad, hi + pad


@dataclass
class FlowTrainReport:
    """Loss curves and the early-stopping outcome of one fit."""

    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf
    n_epochs: int = 0


class ConditionalSplineFlow(BaseEstimator):
    """Conditional density estimator with exact sampling and log-density.

    Parameters follow scikit-learn conventions: hyperparameters in
    ``__init__``, fitted state in trailing-underscore attributes. ``fit``
    takes the next-state rows ``X`` (N, n_dims), the condition rows
    (N, cond_dims) and optional nonnegative ``sample_weight``.
    """

    def __init__(
        self,
        n_dims: int = 4,
        cond_dims: int = 3,
        n_bins: int = 64,
        hidden: tuple = (64, 64),
        learning_rate: float = 1e-3,
        batch_size: int = 256,
        max_epochs: int = 500,
        min_epochs: int = 100,
        patience: int = 50,
        val_fraction: float = 0.2,
        clip_norm: float = 10.0,
        bound_margin: float = 0.1,
        random_state: int = 0,
    ):
        self.n_dims = n_dims
        self.cond_dims = cond_dims
        self.n_bins = n_bins
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.min_epochs = min_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.clip_norm = clip_norm
        self.bound_margin = bound_margin
        self.random_state = random_state

    # -- fitted-state helpers ------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "conditioners_"):
            raise NotFittedError("this ConditionalSplineFlow is not fitted yet")

    def _init_networks(self, rng: np.random.Generator) -> None:
        if self.n_bins < 2:
            raise DataError("n_bins must be at least 2")
        self.conditioners_ = [
            Mlp(
                [self.cond_dims + j, *self.hidden, self.n_bins],
                rng=rng,
                zero_final=True,
            )
            for j in range(self.n_dims)
        ]

    # -- rescaling -----------------------------------------------------------

    def _to_unit(self, x: np.ndarray, lo: np.ndarray, hi: np.ndarray, what: str):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != lo.size:
            raise DataError(f"{what} rows must have {lo.size} columns")
        below = x < lo
        above = x > hi
        if np.any(below) or np.any(above):
            bad = np.nonzero(below | above)
            j = int(bad[1][0])
            raise RangeError(
                f"{what} coordinate {j} outside calibrated bounds "
                f"[{lo[j]:g}, {hi[j]:g}]: {x[bad[0][0], j]:g}"
            )
        return (x - lo) / (hi - lo)

    def rescale_to_unit(self, x: np.ndarray) -> np.ndarray:
        """Map raw state rows into [0, 1]^d; errors on out-of-range values."""
        self._check_fitted()
        return self._to_unit(x, self.lo_, self.hi_, "state")

    def rescale_from_unit(self, u: np.ndarray) -> np.ndarray:
        """Exact inverse of :meth:`rescale_to_unit`."""
        self._check_fitted()
        u = np.asarray(u, dtype=float)
        return self.lo_ + u * (self.hi_ - self.lo_)

    def _cond_to_unit(self, conditions: np.ndarray, clip: bool = False):
        """Rescale condition rows; optionally clip instead of raising.

        Returns (unit_conditions, n_clipped_rows). Clipping is used at
        generation time, where iterated sampling may drift conditions
        slightly past the calibrated range.
        """
        c = np.asarray(conditions, dtype=float)
        if c.ndim == 1:
            c = c[None, :]
        if self.cond_dims == 0:
            return np.zeros((c.shape[0], 0)), 0
        if clip:
            clipped = np.clip(c, self.cond_lo_, self.cond_hi_)
            n_bad = int(np.sum(np.any(clipped != c, axis=1)))
            u = (clipped - self.cond_lo_) / (self.cond_hi_ - self.cond_lo_)
            return u, n_bad
        return self._to_unit(c, self.cond_lo_, self.cond_hi_, "condition"), 0

    def _bin_index(self, u: np.ndarray) -> np.ndarray:
        """Right-open bin membership on [0, 1]; the top point joins the last bin."""
        idx = np.floor(u * self.n_bins).astype(np.int64)
        return np.minimum(idx, self.n_bins - 1)

    # -- density / sampling --------------------------------------------------

    def bin_probs(self, j: int, conditions: np.ndarray, prefix: np.ndarray):
        """Bin probabilities of coordinate ``j`` given condition and prefix.

        ``prefix`` holds the unit-rescaled coordinates ``0..j-1`` of the new
        state. Rows are strictly positive and sum to 1.
        """
        self._check_fitted()
        cu, _ = self._cond_to_unit(conditions, clip=True)
        prefix = np.asarray(prefix, dtype=float)
        if prefix.ndim == 1:
            prefix = prefix[None, :]
        inp = np.concatenate([cu, prefix[:, :j]], axis=1)
        return softmax(self.conditioners_[j].forward(inp))

    def log_density(self, X: np.ndarray, conditions: np.ndarray) -> np.ndarray:
        """Exact conditional log-density of next-state rows ``X``."""
        self._check_fitted()
        u = self.rescale_to_unit(X)
        cu, _ = self._cond_to_unit(conditions, clip=True)
        n = u.shape[0]
        kidx = self._bin_index(u)
        out = np.zeros(n)
        # the affine rescaling is shared by data and model, so its Jacobian
        # is a constant that cancels out of every comparison; log-density is
        # reported on the unit cube
        for j in range(self.n_dims):
            inp = np.concatenate([cu, u[:, :j]], axis=1)
            probs = softmax(self.conditioners_[j].forward(inp))
            out += np.log(self.n_bins * probs[np.arange(n), kidx[:, j]])
        return out

    def sample(
        self,
        conditions: np.ndarray,
        u: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        return_clip_count: bool = False,
    ):
        """Draw one next state per condition row via inverse-CDF sampling.

        ``u`` may supply the latent uniforms (N, n_dims) explicitly;
        otherwise they are drawn from ``rng``. Coordinates are generated in
        order, each conditioner consuming the previously generated ones.
        """
        self._check_fitted()
        cu, n_clipped = self._cond_to_unit(conditions, clip=True)
        n = cu.shape[0]
        if u is None:
            if rng is None:
                raise DataError("either latent uniforms u or rng must be given")
            u = rng.random((n, self.n_dims))
        else:
            u = np.asarray(u, dtype=float)
            if u.ndim == 1:
                u = u[None, :]
            if u.shape != (n, self.n_dims):
                raise DataError("latent uniforms must have shape (n_conditions, n_dims)")
            if np.any(u < 0) or np.any(u > 1):
                raise DataError("latent uniforms must lie in [0, 1]")
        out_unit = np.empty((n, self.n_dims))
        for j in range(self.n_dims):
            inp = np.concatenate([cu, out_unit[:, :j]], axis=1)
            probs = softmax(self.conditioners_[j].forward(inp))
            cdf = np.cumsum(probs, axis=1)
            cdf[:, -1] = 1.0
            uj = u[:, j]
            k = np.minimum((uj[:, None] > cdf).sum(axis=1), self.n_bins - 1)
            left = np.where(k > 0, np.take_along_axis(cdf, np.maximum(k - 1, 0)[:, None], 1)[:, 0], 0.0)
            pk = probs[np.arange(n), k]
            out_unit[:, j] = (k + (uj - left) / pk) / self.n_bins
        np.clip(out_unit, 0.0, 1.0, out=out_unit)
        x = self.rescale_from_unit(out_unit)
        if return_clip_count:
            return x, n_clipped
        return x

    def forward_uniform(self, X: np.ndarray, conditions: np.ndarray) -> np.ndarray:
        """Latent uniforms that :meth:`sample` would map to ``X`` (the CDF)."""
        self._check_fitted()
        u = self.rescale_to_unit(X)
        cu, _ = self._cond_to_unit(conditions, clip=True)
        n = u.shape[0]
        kidx = self._bin_index(u)
        out = np.empty_like(u)
        for j in range(self.n_dims):
            inp = np.concatenate([cu, u[:, :j]], axis=1)
            probs = softmax(self.conditioners_[j].forward(inp))
            cdf = np.cumsum(probs, axis=1)
            k = kidx[:, j]
            left = np.where(k > 0, np.take_along_axis(cdf, np.maximum(k - 1, 0)[:, None], 1)[:, 0], 0.0)
            pk = probs[np.arange(n), k]
            out[:, j] = left + (u[:, j] * self.n_bins - k) * pk
        return out

    # -- training ------------------------------------------------------------

    def weighted_nll(self, X, conditions, sample_weight=None) -> float:
        """Mean of ``-w * log_density`` over the given records."""
        ld = self.log_density(X, conditions)
        if sample_weight is None:
            return float(-np.mean(ld))
        w = np.asarray(sample_weight, dtype=float)
        return float(-np.mean(w * ld))

    def _loss_and_grads(self, u, cu, kidx, w):
        """Weighted NLL over pre-rescaled records plus parameter gradients."""
        n = u.shape[0]
        loss = 0.0
        grads: list[np.ndarray] = []
        rows = np.arange(n)
        for j in range(self.n_dims):
            inp = np.concatenate([cu, u[:, :j]], axis=1)
            cache: list = []
            logits = self.conditioners_[j].forward(inp, cache=cache)
            probs = softmax(logits)
            picked = probs[rows, kidx[:, j]]
            loss += float(-np.sum(w * np.log(self.n_bins * picked)) / n)
            gout = probs * (w / n)[:, None]
            gout[rows, kidx[:, j]] -= w / n
            pg, _ = self.conditioners_[j].backward(cache, gout)
            grads.extend(pg)
        return loss, grads

    def fit(self, X, conditions, sample_weight=None):
        """Train by mini-batch weighted NLL with early stopping.

        The split is chronological: the first ``1 - val_fraction`` of the
        records train, the tail validates. Returns ``self`` with the
        best-validation parameters restored and ``report_`` attached.
        """
        X = np.asarray(X, dtype=float)
        conditions = np.asarray(conditions, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_dims:
            raise DataError(f"X must have shape (n_records, {self.n_dims})")
        n = X.shape[0]
        if conditions.shape != (n, self.cond_dims):
            raise DataError(f"conditions must have shape ({n}, {self.cond_dims})")
        if sample_weight is None:
            w = np.ones(n)
        else:
            w = np.asarray(sample_weight, dtype=float)
            if w.shape != (n,):
                raise DataError("sample_weight must be one scalar per record")
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise DataError("sample weights must be finite and nonnegative")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(conditions)):
            raise DataError("training data must be finite")

        n_val = int(round(self.val_fraction * n))
        n_train = n - n_val
        if n_train < 1 or n_val < 1:
            raise DataError(
                f"chronological split produced an empty part (train={n_train}, val={n_val})"
            )

        # bounds cover the full dataset so validation stays inside the
        # support; the margin leaves room for unseen data
        self.lo_, self.hi_ = fit_bounds(X, self.bound_margin)
        if self.cond_dims > 0:
            self.cond_lo_, self.cond_hi_ = fit_bounds(conditions, self.bound_margin)
        else:
            self.cond_lo_ = np.zeros(0)
            self.cond_hi_ = np.ones(0)

        rng = np.random.default_rng(self.random_state)
        self._init_networks(rng)

        u = self.rescale_to_unit(X)
        cu, _ = self._cond_to_unit(conditions)
        kidx = self._bin_index(u)

        u_tr, u_va = u[:n_train], u[n_train:]
        c_tr, c_va = cu[:n_train], cu[n_train:]
        k_tr, k_va = kidx[:n_train], kidx[n_train:]
        w_tr, w_va = w[:n_train], w[n_train:]

        params: list[np.ndarray] = []
        for net in self.conditioners_:
            params.extend(net.parameters())
        opt = Adam(params, learning_rate=self.learning_rate, clip_norm=self.clip_norm)
        stopper = EarlyStopper(patience=self.patience, min_epochs=self.min_epochs)
        report = FlowTrainReport()

        def snapshot():
            return [p.copy() for p in params]

        bs = min(self.batch_size, n_train)
        for epoch in range(self.max_epochs):
            order = rng.permutation(n_train)
            epoch_loss = 0.0
            for start in range(0, n_train, bs):
                idx = order[start : start + bs]
                loss, grads = self._loss_and_grads(u_tr[idx], c_tr[idx], k_tr[idx], w_tr[idx])
                opt.step(grads)
                epoch_loss += loss * idx.size
            epoch_loss /= n_train
            if not np.isfinite(epoch_loss):
                raise ConvergenceError(f"training loss diverged at epoch {epoch}")
            val_loss = self._eval_nll(u_va, c_va, k_va, w_va)
            report.train_losses.append(epoch_loss)
            report.val_losses.append(val_loss)
            if stopper.update(epoch, val_loss, snapshot):
                break

        if stopper.best_state is not None:
            for p, best in zip(params, stopper.best_state):
                p[...] = best
        report.best_epoch = stopper.best_epoch
        report.best_val_loss = stopper.best_loss
        report.n_epochs = len(report.val_losses)
        self.report_ = report
        return self

    def _eval_nll(self, u, cu, kidx, w) -> float:
        n = u.shape[0]
        rows = np.arange(n)
        total = 0.0
        for j in range(self.n_dims):
            inp = np.concatenate([cu, u[:, :j]], axis=1)
            probs = softmax(self.conditioners_[j].forward(inp))
            picked = probs[rows, kidx[:, j]]
            total += float(-np.sum(w * np.log(self.n_bins * picked)) / n)
        return total

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "n_dims": self.n_dims,
            "cond_dims": self.cond_dims,
            "n_bins": self.n_bins,
            "hidden": list(self.hidden),
            "lo": self.lo_.tolist(),
            "hi": self.hi_.tolist(),
            "cond_lo": self.cond_lo_.tolist(),
            "cond_hi": self.cond_hi_.tolist(),
            "conditioners": [net.to_dict() for net in self.conditioners_],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConditionalSplineFlow":
        flow = cls(
            n_dims=int(data["n_dims"]),
            cond_dims=int(data["cond_dims"]),
            n_bins=int(data["n_bins"]),
            hidden=tuple(data["hidden"]),
        )
        flow.conditioners_ = [Mlp.from_dict(d) for d in data["conditioners"]]
        flow.lo_ = np.asarray(data["lo"], dtype=float)
        flow.hi_ = np.asarray(data["hi"], dtype=float)
        flow.cond_lo_ = np.asarray(data["cond_lo"], dtype=float)
        flow.cond_hi_ = np.asarray(data["cond_hi"], dtype=float)
        return flow
