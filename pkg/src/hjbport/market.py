"""Market data ingestion and moment estimation.

Reads per-period prices or log-returns from CSV (headers = asset names, one
row per period), estimates annualized mean returns and covariance, and
ships a fixed synthetic five-asset market for reproducible studies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .alpha import MarketModel
from .errors import ConfigError, SingularCovariance


@dataclass(frozen=True)
class ReturnsMatrix:
    """Clean per-period log-returns: T_obs x n, no missing entries."""

    asset_names: list[str]
    observations: np.ndarray
    period_per_year: float = 1.0

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        object.__setattr__(self, "observations", obs)
        if obs.ndim != 2 or obs.shape[1] != len(self.asset_names):
            raise ConfigError("observations must be T_obs x n_assets")
        if np.any(~np.isfinite(obs)):
            raise ConfigError("missing entries must be dropped before construction")
        if self.period_per_year <= 0:
            raise ConfigError("period_per_year must be positive")


def load_returns_csv(path, input_kind: str = "log-returns", period_per_year: float = 1.0):
    """Read a returns CSV; rows with any missing value are dropped.

    input_kind 'prices' converts to log-returns of consecutive rows.
    Returns (ReturnsMatrix, number of dropped rows).
    """
    if input_kind not in ("log-returns", "prices"):
        raise ConfigError(f"unknown input kind {input_kind!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = [name.strip() for name in header]
        rows = []
        dropped = 0
        for raw in reader:
            if not raw or all(not cell.strip() for cell in raw):
                continue
            try:
                vals = [float(cell) for cell in raw]
            except ValueError:
                dropped += 1
                continue
            if len(vals) != len(names) or any(not np.isfinite(v) for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    data = np.asarray(rows, dtype=float)
    if input_kind == "prices":
        if np.any(data <= 0):
            raise ConfigError("prices must be positive to take log-returns")
        data = np.diff(np.log(data), axis=0)
    return ReturnsMatrix(names, data, period_per_year), dropped


def estimate_moments(
    returns: ReturnsMatrix, epsilon: float = 0.0, rate: float = 0.0
) -> MarketModel:
    """Annualized sample mean and unbiased sample covariance.

    Raises SingularCovariance when the sample covariance has no Cholesky
    factor (too few observations or a degenerate asset); shrinkage via
    `shrink_covariance` is the suggested remedy.
    """
    obs = returns.observations
    t_obs, n = obs.shape
    if t_obs < n + 1:
        raise SingularCovariance(
            f"need at least {n + 1} observations for {n} assets, got {t_obs}"
        )
    factor = returns.period_per_year
    mu = factor * obs.mean(axis=0)
    centered = obs - obs.mean(axis=0)
    sigma = factor * (centered.T @ centered) / (t_obs - 1)
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise SingularCovariance(
            "sample covariance is singular; consider shrink_covariance with lambda > 0"
        ) from None
    return MarketModel(mu=mu, sigma_cov=sigma, epsilon=epsilon, rate=rate)


def shrink_covariance(sigma, lam: float) -> np.ndarray:
    """Convex blend (1-lam)*Sigma + lam*diag(Sigma) toward the diagonal."""
    sigma = np.asarray(sigma, dtype=float)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("shrinkage weight must lie in [0, 1]")
    if np.max(np.abs(sigma - sigma.T)) > 1e-12:
        raise ConfigError("covariance must be symmetric")
    return (1.0 - lam) * sigma + lam * np.diag(np.diag(sigma))


# Fixed synthetic market used by the portfolio study and the test suite:
# five assets with vol-ordered mean returns and a common correlation, at
# crisis-period index-constituent volatility levels.  The volatility scale
# matters: the diffusion coefficient of the transformed equation is half
# the minimized portfolio variance, and thin-variance markets leave the
# explicit transport of the inflow term under-damped on coarse meshes.
_SYNTH_MU = np.array([0.06, 0.09, 0.12, 0.15, 0.18])
_SYNTH_VOLS = np.array([0.25, 0.30, 0.35, 0.40, 0.45])
_SYNTH_CORR = 0.6


def synthetic_five_asset(epsilon: float = 1.0, rate: float = 0.0) -> MarketModel:
    corr = np.full((5, 5), _SYNTH_CORR) + (1.0 - _SYNTH_CORR) * np.eye(5)
    sigma = corr * np.outer(_SYNTH_VOLS, _SYNTH_VOLS)
    return MarketModel(mu=_SYNTH_MU.copy(), sigma_cov=sigma, epsilon=epsilon, rate=rate)
