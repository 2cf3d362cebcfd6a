"""Arbitrage-free call price grids parametrized by discrete local volatilities.

The market state is a spot level plus a floating grid of normalized call
prices: entry ``C[i, j]`` is the price of the payoff
``(S_{t+tau_i} / S_t - k_j)^+`` for time-to-maturity pillar ``tau_i``
(business days) and relative strike ``k_j`` around the unit forward.

The grid is parametrized by a matrix of strictly positive discrete local
volatilities (DLVs). Pricing steps layer by layer in maturity: starting
from the intrinsic payoff at ``tau = 0``, each layer solves the implicit
finite-difference system

    (I - dtau_i * A(sigma_i)) C_{i+1} = C_i,
    (A(sigma) C)_j = 0.5 * sigma_j^2 * k_j^2 * (d2C)_j,

where ``d2`` is the three-point second difference on the (generally
nonuniform) strike grid extended by two boundary strikes pinned to
intrinsic value. The system matrix is an M-matrix for any positive DLVs,
so the resulting grid is statically arbitrage-free by construction, and
the step inverts in closed form layer by layer, which makes the map a
bijection between positive DLV grids and strictly arbitrage-free price
grids.

Internally prices are carried as ``intrinsic + time value``; keeping the
time value separately avoids catastrophic cancellation deep in the money,
where time values sit far below the floating-point resolution of the
total price.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, GridDomainError, StaticArbitrageError

__all__ = [
    "GridSpec",
    "DlvGrid",
    "PriceGrid",
    "MarketState",
    "MarketSeries",
    "ArbitrageViolation",
    "price_from_dlv",
    "dlv_from_price",
    "check_static_arbitrage",
    "interp_call",
    "roll_option_value",
]


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Floating maturity/strike layout of the option grid.

    Maturities are business days (strictly increasing, >= 1), strikes are
    relative to the unit forward (strictly increasing, must contain the
    at-the-money pillar 1.0). The two boundary strikes bracket the strike
    range; grid values there are pinned to intrinsic value and act as
    Dirichlet boundaries for pricing and interpolation.
    """

    maturities: np.ndarray
    strikes: np.ndarray
    low_boundary_strike: float = 0.4
    high_boundary_strike: float = 1.6
    day_count: int = 252

    def __post_init__(self):
        mats = np.asarray(self.maturities, dtype=float)
        ks = np.asarray(self.strikes, dtype=float)
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "strikes", ks)
        if mats.ndim != 1 or mats.size == 0:
            raise DataError("maturities must be a nonempty 1-d array")
        if ks.ndim != 1 or ks.size == 0:
            raise DataError("strikes must be a nonempty 1-d array")
        if np.any(mats < 1) or np.any(np.diff(mats) <= 0):
            raise DataError("maturities must be strictly increasing and >= 1 day")
        if np.any(ks <= 0) or np.any(np.diff(ks) <= 0):
            raise DataError("strikes must be positive and strictly increasing")
        if not np.any(ks == 1.0):
            raise DataError("strike grid must contain the at-the-money pillar 1.0")
        if not self.low_boundary_strike < ks[0]:
            raise DataError("low boundary strike must lie below the strike grid")
        if not self.high_boundary_strike > ks[-1]:
            raise DataError("high boundary strike must lie above the strike grid")
        if self.low_boundary_strike <= 0:
            raise DataError("low boundary strike must be positive")
        if self.day_count <= 0:
            raise DataError("day_count must be positive")

    @property
    def n_maturities(self) -> int:
        return int(self.maturities.size)

    @property
    def n_strikes(self) -> int:
        return int(self.strikes.size)

    @property
    def size(self) -> int:
        return self.n_maturities * self.n_strikes

    @property
    def atm_index(self) -> int:
        return int(np.flatnonzero(self.strikes == 1.0)[0])

    @property
    def augmented_strikes(self) -> np.ndarray:
        """Strike grid extended by the two boundary strikes."""
        return np.concatenate(
            ([self.low_boundary_strike], self.strikes, [self.high_boundary_strike])
        )

    @property
    def maturity_year_gaps(self) -> np.ndarray:
        """Year fractions between consecutive layers, the first from tau=0."""
        mats = np.concatenate(([0.0], self.maturities))
        return np.diff(mats) / float(self.day_count)

    def intrinsic(self) -> np.ndarray:
        """Intrinsic call values (1 - k)^+ on the strike grid."""
        return np.maximum(1.0 - self.strikes, 0.0)

    def column_labels(self) -> list[str]:
        """Stable per-node labels in maturity-major, strike-minor order."""
        return [
            f"dlv_{int(tau)}_{k:.2f}"
            for tau in self.maturities
            for k in self.strikes
        ]


def _check_values(spec: GridSpec, values, positive: bool) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    if vals.shape != (spec.n_maturities, spec.n_strikes):
        raise DataError(
            f"grid values must have shape {(spec.n_maturities, spec.n_strikes)}, "
            f"got {vals.shape}"
        )
    if not np.all(np.isfinite(vals)):
        raise DataError("grid values must be finite")
    if positive and not np.all(vals > 0):
        raise DataError("DLV entries must be strictly positive")
    return vals


@dataclass(frozen=True, eq=False)
class DlvGrid:
    """Strictly positive discrete local volatilities (annualized)."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.spec, self.values, True))


@dataclass(frozen=True, eq=False)
class PriceGrid:
    """Normalized call prices on the floating grid.

    ``time_values`` carries ``values - intrinsic`` explicitly. When a grid
    is produced by :func:`price_from_dlv` the time values are exact; for
    externally supplied prices they are recomputed by subtraction and
    inherit its rounding.
    """

    spec: GridSpec
    values: np.ndarray
    time_values: np.ndarray | None = None

    def __post_init__(self):
        vals = _check_values(self.spec, self.values, False)
        object.__setattr__(self, "values", vals)
        if self.time_values is None:
            tv = vals - self.spec.intrinsic()[None, :]
            object.__setattr__(self, "time_values", tv)
        else:
            tv = _check_values(self.spec, self.time_values, False)
            object.__setattr__(self, "time_values", tv)


@dataclass(frozen=True, eq=False)
class MarketState:
    """Spot level plus the call price grid observed on one day."""

    spot: float
    prices: PriceGrid

    def __post_init__(self):
        if not np.isfinite(self.spot) or self.spot <= 0:
            raise DataError("spot must be positive and finite")


@dataclass(eq=False)
class MarketSeries:
    """A dated time series of market states sharing one grid spec."""

    spec: GridSpec
    dates: list[str]
    spots: np.ndarray
    dlvs: np.ndarray  # (T, m, n)
    price_values: np.ndarray = field(init=False)
    price_time_values: np.ndarray = field(init=False)

    def __post_init__(self):
        self.spots = np.asarray(self.spots, dtype=float)
        self.dlvs = np.asarray(self.dlvs, dtype=float)
        T = len(self.dates)
        if self.spots.shape != (T,):
            raise DataError("spots must have one entry per date")
        if self.dlvs.shape != (T, self.spec.n_maturities, self.spec.n_strikes):
            raise DataError("dlv array shape does not match the grid spec")
        if np.any(self.spots <= 0):
            raise DataError("spots must be positive")
        if np.any(self.dlvs <= 0):
            raise DataError("DLVs must be strictly positive")
        tv = _price_time_values(self.spec, self.dlvs)
        self.price_time_values = tv
        self.price_values = tv + self.spec.intrinsic()[None, None, :]

    def __len__(self) -> int:
        return len(self.dates)

    def state(self, t: int) -> MarketState:
        grid = PriceGrid(
            self.spec, self.price_values[t], time_values=self.price_time_values[t]
        )
        return MarketState(spot=float(self.spots[t]), prices=grid)

    def returns(self) -> np.ndarray:
        """One-step relative spot returns, length T-1."""
        return self.spots[1:] / self.spots[:-1] - 1.0


# ---------------------------------------------------------------------------
# pricing: DLV -> price
# ---------------------------------------------------------------------------


def _second_diff_coeffs(k_aug: np.ndarray):
    """Three-point second-difference weights on the augmented strike grid.

    Returns (cl, cc, cr) so that (d2C)_j = cl_j*C_{j-1} + cc_j*C_j + cr_j*C_{j+1}
    for the interior nodes j = 1..n of ``k_aug``. On a uniform grid with
    spacing h this reduces to (C_{j-1} - 2 C_j + C_{j+1}) / h^2.
    """
    h0 = k_aug[1:-1] - k_aug[:-2]
    h1 = k_aug[2:] - k_aug[1:-1]
    cl = 2.0 / (h0 * (h0 + h1))
    cr = 2.0 / (h1 * (h0 + h1))
    cc = -2.0 / (h0 * h1)
    return cl, cc, cr


def _solve_tridiag(sub, diag, sup, rhs) -> np.ndarray:
    """Thomas algorithm over the last axis; batched over leading axes.

    The pricing systems are strictly diagonally dominant, so no pivoting.
    """
    n = rhs.shape[-1]
    dc = diag.copy()
    rc = rhs.copy()
    for i in range(1, n):
        w = sub[..., i] / dc[..., i - 1]
        dc[..., i] = dc[..., i] - w * sup[..., i - 1]
        rc[..., i] = rc[..., i] - w * rc[..., i - 1]
    out = np.empty_like(rc)
    out[..., n - 1] = rc[..., n - 1] / dc[..., n - 1]
    for i in range(n - 2, -1, -1):
        out[..., i] = (rc[..., i] - sup[..., i] * out[..., i + 1]) / dc[..., i]
    return out


def _kink_source(spec: GridSpec) -> np.ndarray:
    """Second difference of the intrinsic payoff on the strike grid.

    Nonzero only at the at-the-money node, where the payoff kinks.
    """
    k_aug = spec.augmented_strikes
    cl, cc, cr = _second_diff_coeffs(k_aug)
    intrinsic_aug = np.maximum(1.0 - k_aug, 0.0)
    return cl * intrinsic_aug[:-2] + cc * intrinsic_aug[1:-1] + cr * intrinsic_aug[2:]


def _price_time_values(spec: GridSpec, sig: np.ndarray) -> np.ndarray:
    """Time values of the price grid for DLV arrays ``sig`` (..., m, n)."""
    sig = np.asarray(sig, dtype=float)
    k = spec.strikes
    cl, cc, cr = _second_diff_coeffs(spec.augmented_strikes)
    kink = _kink_source(spec)
    gaps = spec.maturity_year_gaps
    m = spec.n_maturities

    tv_prev = np.zeros(sig.shape[:-2] + (spec.n_strikes,))
    layers = []
    for i in range(m):
        # coef_j = 0.5 * dtau * sigma_j^2 * k_j^2
        coef = 0.5 * gaps[i] * sig[..., i, :] ** 2 * k**2
        sub = -coef * cl
        sup = -coef * cr
        diag = 1.0 - coef * cc
        # time value obeys the same system with the payoff kink as source;
        # boundary time values are zero (intrinsic pin), so no RHS terms.
        rhs = tv_prev + coef * kink
        tv_next = _solve_tridiag(sub, diag, sup, rhs)
        layers.append(tv_next)
        tv_prev = tv_next
    return np.stack(layers, axis=-2)


def price_from_dlv(dlv: DlvGrid) -> PriceGrid:
    """Map a positive DLV grid to its arbitrage-free call price grid."""
    tv = _price_time_values(dlv.spec, dlv.values)
    values = tv + dlv.spec.intrinsic()[None, :]
    return PriceGrid(dlv.spec, values, time_values=tv)


# ---------------------------------------------------------------------------
# inversion: price -> DLV
# ---------------------------------------------------------------------------


def _dlv_values_from_time_values(spec: GridSpec, tv: np.ndarray) -> np.ndarray:
    """Closed-form layer-wise inversion of the pricing scheme.

    Solving the implicit layer step for sigma gives
    sigma_{i,j}^2 = (C_{i+1,j} - C_{i,j}) / (0.5 * dtau_i * k_j^2 * (d2 C_{i+1})_j),
    evaluated here on time values (the intrinsic parts cancel in the calendar
    spread and contribute the payoff kink to the curvature).
    """
    k = spec.strikes
    cl, cc, cr = _second_diff_coeffs(spec.augmented_strikes)
    kink = _kink_source(spec)
    gaps = spec.maturity_year_gaps
    m = spec.n_maturities

    sig2 = np.empty_like(tv)
    tv_prev = np.zeros(spec.n_strikes)
    for i in range(m):
        row = tv[i]
        # curvature of the full price row: d2(time value) + payoff kink
        curv = np.empty(spec.n_strikes)
        curv[:] = cc * row + kink
        curv[1:] += cl[1:] * row[:-1]
        curv[:-1] += cr[:-1] * row[1:]
        # boundary neighbours have zero time value, nothing to add
        cal = row - tv_prev
        for j in range(spec.n_strikes):
            if curv[j] < 0 or (curv[j] == 0 and cal[j] != 0):
                raise StaticArbitrageError(
                    "butterfly",
                    i,
                    j,
                    float(curv[j]),
                    f"negative butterfly at maturity index {i} "
                    f"(tau={int(spec.maturities[i])}), strike {k[j]:g}",
                )
            if curv[j] == 0 or cal[j] <= 0:
                if cal[j] < 0:
                    raise StaticArbitrageError(
                        "calendar",
                        i,
                        j,
                        float(cal[j]),
                        "non-increasing calendar spread between maturity "
                        f"indices {i - 1} and {i} at strike {k[j]:g}",
                    )
                raise StaticArbitrageError(
                    "degenerate_butterfly",
                    i,
                    j,
                    float(curv[j]),
                    "degenerate input: price at intrinsic (zero butterfly / "
                    f"zero calendar spread) at maturity index {i}, strike {k[j]:g}; "
                    "no positive DLV reproduces it",
                )
        sig2[i] = cal / (0.5 * gaps[i] * k**2 * curv)
        tv_prev = row
    return np.sqrt(sig2)


def dlv_from_price(prices: PriceGrid) -> DlvGrid:
    """Recover the unique positive DLV grid of a strictly arbitrage-free grid."""
    sig = _dlv_values_from_time_values(prices.spec, prices.time_values)
    return DlvGrid(prices.spec, sig)


# ---------------------------------------------------------------------------
# static-arbitrage diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArbitrageViolation:
    """One violated ordering constraint; indices refer to the stored grid."""

    kind: str
    maturity_index: int
    strike_index: int
    magnitude: float


def check_static_arbitrage(
    prices: PriceGrid, tol: float = 1e-12
) -> list[ArbitrageViolation]:
    """Report all static-arbitrage violations of a price grid.

    Checks price bounds, monotonicity in maturity (against the intrinsic
    layer for the first pillar), monotonicity in strike and discrete
    convexity in strike on the grid augmented by the boundary columns.
    Violations smaller than ``tol`` (price units) are ignored.
    """
    spec = prices.spec
    vals = prices.values
    out: list[ArbitrageViolation] = []
    intrinsic = spec.intrinsic()

    lower = intrinsic[None, :] - vals
    upper = vals - 1.0
    for i, j in zip(*np.nonzero(lower > tol)):
        out.append(ArbitrageViolation("lower_bound", int(i), int(j), float(lower[i, j])))
    for i, j in zip(*np.nonzero(upper > tol)):
        out.append(ArbitrageViolation("upper_bound", int(i), int(j), float(upper[i, j])))

    rows = np.vstack([intrinsic[None, :], vals])
    cal = rows[:-1] - rows[1:]  # positive entry = calendar violation
    for i, j in zip(*np.nonzero(cal > tol)):
        out.append(ArbitrageViolation("calendar", int(i), int(j), float(cal[i, j])))

    k_aug = spec.augmented_strikes
    aug = np.empty((spec.n_maturities, k_aug.size))
    aug[:, 0] = 1.0 - spec.low_boundary_strike
    aug[:, 1:-1] = vals
    aug[:, -1] = max(1.0 - spec.high_boundary_strike, 0.0)

    mono = aug[:, 1:] - aug[:, :-1]  # positive entry = increasing in strike
    for i, j in zip(*np.nonzero(mono > tol)):
        out.append(
            ArbitrageViolation("strike_monotonicity", int(i), int(j), float(mono[i, j]))
        )

    # butterfly cost in price units: interpolated wings minus body
    h0 = k_aug[1:-1] - k_aug[:-2]
    h1 = k_aug[2:] - k_aug[1:-1]
    fly = (h1 * aug[:, :-2] + h0 * aug[:, 2:]) / (h0 + h1) - aug[:, 1:-1]
    for i, j in zip(*np.nonzero(fly < -tol)):
        out.append(ArbitrageViolation("convexity", int(i), int(j), float(fly[i, j])))

    return out


# ---------------------------------------------------------------------------
# interpolation and roll-down
# ---------------------------------------------------------------------------


def _augmented_table(spec: GridSpec, values: np.ndarray):
    """Interpolation lattice: tau=0 intrinsic layer plus boundary columns.

    ``values`` may carry leading batch axes; returns (taus, ks, table).
    """
    k_aug = spec.augmented_strikes
    taus = np.concatenate(([0.0], spec.maturities))
    batch = values.shape[:-2]
    table = np.empty(batch + (spec.n_maturities + 1, k_aug.size))
    table[..., 0, 1:-1] = spec.intrinsic()
    table[..., 1:, 1:-1] = values
    table[..., :, 0] = 1.0 - spec.low_boundary_strike
    table[..., :, -1] = max(1.0 - spec.high_boundary_strike, 0.0)
    return taus, k_aug, table


def _interp_batch(spec: GridSpec, values: np.ndarray, tau: float, k: np.ndarray):
    """Bilinear interpolation at one maturity and per-sample strikes.

    ``values`` has shape (B, m, n) (or (m, n)); ``k`` broadcasts to (B,).
    """
    taus, ks, table = _augmented_table(spec, values)
    if not 0.0 <= tau <= taus[-1]:
        raise GridDomainError(
            f"maturity {tau} outside the lattice [0, {taus[-1]:g}]"
        )
    k = np.asarray(k, dtype=float)
    if np.any(k < ks[0]) or np.any(k > ks[-1]):
        raise GridDomainError(
            f"strike outside the lattice [{ks[0]:g}, {ks[-1]:g}]"
        )
    it = int(np.searchsorted(taus, tau, side="right") - 1)
    it = min(it, taus.size - 2)
    wt = (tau - taus[it]) / (taus[it + 1] - taus[it])

    jk = np.searchsorted(ks, k, side="right") - 1
    jk = np.minimum(jk, ks.size - 2)
    wk = (k - ks[jk]) / (ks[jk + 1] - ks[jk])

    if table.ndim == 2:
        row0 = table[it]
        row1 = table[it + 1]
        lo = row0[jk] * (1 - wk) + row0[jk + 1] * wk
        hi = row1[jk] * (1 - wk) + row1[jk + 1] * wk
    else:
        b = np.arange(table.shape[0])
        jk = np.broadcast_to(jk, (table.shape[0],))
        wk = np.broadcast_to(wk, (table.shape[0],))
        lo = table[b, it, jk] * (1 - wk) + table[b, it, jk + 1] * wk
        hi = table[b, it + 1, jk] * (1 - wk) + table[b, it + 1, jk + 1] * wk
    return lo * (1 - wt) + hi * wt


def interp_call(prices: PriceGrid, tau: float, k: float) -> float:
    """Bilinearly interpolated normalized call price at (tau, k).

    The lattice is the stored grid augmented by the tau=0 intrinsic layer
    and the boundary-strike columns pinned to intrinsic value; queries are
    exact at lattice nodes.
    """
    return float(_interp_batch(prices.spec, prices.values, float(tau), k))


def _roll_values_batch(
    spec: GridSpec,
    next_values: np.ndarray,
    ratios: np.ndarray,
    tau: float,
    k: float,
) -> np.ndarray:
    """Next-day values of an option bought at (tau, k), batched over samples.

    ``next_values``: (B, m, n) next-day price grids; ``ratios``: (B,) gross
    spot ratios S_{t+1}/S_t. Strikes that drift outside the boundary range
    are valued at intrinsic.
    """
    if tau < 1:
        raise GridDomainError("roll requires at least one day to maturity")
    ratios = np.asarray(ratios, dtype=float)
    k_shift = k / ratios
    lo = spec.low_boundary_strike
    hi = spec.high_boundary_strike
    inside = (k_shift >= lo) & (k_shift <= hi)
    out = ratios * np.maximum(1.0 - k_shift, 0.0)  # intrinsic fallback
    if np.any(inside):
        vals = next_values[inside] if next_values.ndim == 3 else next_values
        interp = _interp_batch(spec, vals, float(tau) - 1.0, k_shift[inside])
        out = out.copy()
        out[inside] = ratios[inside] * interp
    return out


def roll_option_value(
    state_next: MarketState,
    state_prev: MarketState,
    tau: float,
    k: float,
) -> tuple[float, float]:
    """Value an option bought yesterday at (tau, k) and its one-day change.

    Returns ``(value, dc)`` where ``value`` is the next-day price of the
    option normalized by the previous spot and ``dc`` subtracts yesterday's
    interpolated grid price. If the spot move pushes the shifted strike
    outside the boundary range, the option is valued at intrinsic.
    """
    ratio = state_next.spot / state_prev.spot
    value = float(
        _roll_values_batch(
            state_next.prices.spec,
            state_next.prices.values,
            np.array([ratio]),
            tau,
            k,
        )[0]
    )
    dc = value - interp_call(state_prev.prices, tau, k)
    return value, dc
