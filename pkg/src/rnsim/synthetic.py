"""Synthetic spot + option market with known low-dimensional structure.

Three mean-reverting latent factors (overall vol level, term-structure
tilt, skew tilt) drive the log-DLV surface through fixed loadings on top
of a static smile. Spot returns are Gaussian with a constant drift and a
realized volatility proportional to the current at-the-money DLV level;
a multiplier above 1 makes options trade cheap relative to realized
variance, so holding them carries positive drift under the generating
measure. Pricing every surface through the DLV map keeps each generated
grid statically arbitrage-free by construction, and the exact factor
dimension (3) makes the intrinsic dimension of the surfaces known.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .grid import GridSpec, MarketSeries, _price_time_values

__all__ = ["SyntheticMarketConfig", "SyntheticMarket", "default_grid_spec"]


def default_grid_spec() -> GridSpec:
    """Strikes 0.70..1.30 in 0.05 steps, maturity pillars 60 and 120 days."""
    strikes = np.round(0.70 + 0.05 * np.arange(13), 2)
    return GridSpec(maturities=np.array([60.0, 120.0]), strikes=strikes)


@dataclass(frozen=True)
class SyntheticMarketConfig:
    """Parameters of the synthetic market generator."""

    grid: GridSpec = field(default_factory=default_grid_spec)
    n_steps: int = 2500
    seed: int = 12345
    s0: float = 1.0
    base_vol: float = 0.20
    smile_skew: float = 0.12
    smile_curvature: float = 0.40
    spot_drift: float = 1.5e-3
    realized_vol_multiplier: float = 1.1
    level_kappa: float = 0.25
    level_sigma: float = 0.030
    term_kappa: float = 0.25
    term_sigma: float = 0.035
    skew_kappa: float = 0.10
    skew_sigma: float = 0.015
    term_anchor_days: float = 45.0
    start_date: str = "2011-01-03"

    def __post_init__(self):
        if self.n_steps < 1:
            raise DataError("n_steps must be positive")
        if self.base_vol <= 0 or self.realized_vol_multiplier <= 0:
            raise DataError("volatilities and the realized-vol multiplier must be positive")
        for kappa in (self.level_kappa, self.term_kappa, self.skew_kappa):
            if not 0 < kappa < 1:
                raise DataError("mean-reversion speeds must lie in (0, 1) per step")


class SyntheticMarket:
    """Seeded generator producing a :class:`MarketSeries` plus factor paths."""

    N_FACTORS = 3

    def __init__(self, config: SyntheticMarketConfig):
        self.config = config
        spec = config.grid
        log_k = np.log(spec.strikes)
        self._smile = config.smile_skew * (-log_k) + config.smile_curvature * log_k**2
        self._g_term = np.log(spec.maturities / config.term_anchor_days) / np.log(
            spec.maturities[-1] / config.term_anchor_days
        )
        scale = np.max(np.abs(log_k)) or 1.0
        self._g_skew = -log_k / scale
        self._kappas = np.array(
            [config.level_kappa, config.term_kappa, config.skew_kappa]
        )
        self._sigmas = np.array(
            [config.level_sigma, config.term_sigma, config.skew_sigma]
        )

    # -- factor dynamics -------------------------------------------------------

    def stationary_std(self) -> np.ndarray:
        k = self._kappas
        return self._sigmas / np.sqrt(2.0 * k - k**2)

    def step_factors(self, z: np.ndarray, eps: np.ndarray) -> np.ndarray:
        return z * (1.0 - self._kappas) + self._sigmas * eps

    def reference_factors(self) -> np.ndarray:
        """The stationary mean state (all factors at zero)."""
        return np.zeros(self.N_FACTORS)

    # -- surface map -------------------------------------------------------------

    def dlv_values(self, z: np.ndarray) -> np.ndarray:
        """Map factor rows (..., 3) to DLV grids (..., m, n)."""
        z = np.asarray(z, dtype=float)
        log_v = (
            np.log(self.config.base_vol)
            + self._smile[None, :]
            + z[..., 0, None, None]
            + z[..., 1, None, None] * self._g_term[:, None]
            + z[..., 2, None, None] * self._g_skew[None, :]
        )
        return np.exp(log_v)

    def atm_vol(self, z: np.ndarray) -> np.ndarray:
        """Annualized at-the-money DLV level at factor state ``z``."""
        z = np.asarray(z, dtype=float)
        return self.config.base_vol * np.exp(
            z[..., 0] + z[..., 1] * float(np.mean(self._g_term))
        )

    def spot_vol(self, z: np.ndarray) -> np.ndarray:
        """Realized (per-step) spot volatility at factor state ``z``."""
        return (
            self.config.realized_vol_multiplier
            * self.atm_vol(z)
            / np.sqrt(self.config.grid.day_count)
        )

    # -- generation ---------------------------------------------------------------

    def generate(self) -> tuple[MarketSeries, np.ndarray]:
        """Simulate the market; returns (series, factor_path).

        The series has ``n_steps + 1`` states; factor_path has matching
        shape (n_steps + 1, 3). Deterministic for a fixed config.
        """
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        T = cfg.n_steps
        z = np.empty((T + 1, self.N_FACTORS))
        z[0] = self.stationary_std() * rng.standard_normal(self.N_FACTORS)
        eps_z = rng.standard_normal((T, self.N_FACTORS))
        eps_s = rng.standard_normal(T)
        for t in range(T):
            z[t + 1] = self.step_factors(z[t], eps_z[t])
        returns = cfg.spot_drift + self.spot_vol(z[:-1]) * eps_s
        if np.any(returns <= -1.0):
            raise DataError("generated a spot return at or below -100%")
        spots = cfg.s0 * np.concatenate(([1.0], np.cumprod(1.0 + returns)))
        dlvs = self.dlv_values(z)
        dates = self._business_dates(T + 1)
        series = MarketSeries(spec=cfg.grid, dates=dates, spots=spots, dlvs=dlvs)
        return series, z

    def _business_dates(self, count: int) -> list[str]:
        start = np.datetime64(self.config.start_date)
        offsets = np.busday_offset(start, np.arange(count), roll="forward")
        return [str(d) for d in offsets]

    # -- one-step oracle sampling ---------------------------------------------------

    def sample_transitions(
        self, z: np.ndarray, n: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sample ``n`` one-step transitions from factor state ``z``.

        Returns (spot_returns (n,), next_dlvs (n, m, n_strikes)); used as an
        independent Monte Carlo oracle on the generator itself.
        """
        eps_z = rng.standard_normal((n, self.N_FACTORS))
        eps_s = rng.standard_normal(n)
        z_next = self.step_factors(z[None, :], eps_z)
        returns = self.config.spot_drift + float(self.spot_vol(z)) * eps_s
        return returns, self.dlv_values(z_next)

    def price_time_values(self, dlvs: np.ndarray) -> np.ndarray:
        """Batch-price DLV grids; thin wrapper for oracle computations."""
        return _price_time_values(self.config.grid, dlvs)
