"""Flat key=value run configuration with CLI overrides.

Every key has a documented default; the effective values are echoed into
each run's manifest so published parameter sets can be reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .alpha import MarketModel, QP_PHI_FLOOR, build_alpha_table
from .errors import ConfigError
from .market import estimate_moments, load_returns_csv, shrink_covariance, synthetic_five_asset
from .pde import BoundaryCondition, SolverGrid
from .utility import ArctanUtility, CaraUtility, IntertemporalUtility


def _parse_floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_matrix(text: str) -> tuple:
    return tuple(_parse_floats(row) for row in text.split(";") if row.strip())


@dataclass
class ScenarioConfig:
    """One solver run: market, utilities, grid, table range, outputs."""

    # market source
    market: str = "synthetic5"
    returns_csv: str = ""
    input_kind: str = "log-returns"
    period_per_year: float = 252.0
    shrinkage: float = 0.0
    mu: tuple = ()
    sigma_rows: tuple = ()
    epsilon: float = 1.0
    rate: float = 0.0
    # utilities
    terminal: str = "cara"
    cara_a: float = 9.0
    kappa: float = 1.0
    d: float = 0.0
    rho: float = 0.0
    # grid
    x_left: float = -4.0
    x_right: float = 8.0
    h: float = 0.01
    T: float = 1.0
    k: float = 0.0  # 0 means the default coupling 0.5*h^2
    x_star: float = -2.01
    i_star: int = 0  # 0 means derive from x_star
    # diffusion table
    phi_lo: float = -1.0
    phi_hi: float = 15.0
    h_phi: float = 0.05
    # run control
    bc: str = "neumann"
    b_mode: str = "implicit"
    snapshots: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    bounds_check: str = "auto"
    # sweeps and cross-checks
    d_values: tuple = (0.0, 8.0, 11.0)
    cross_tol: float = 1e-2
    theta_source: str = "from-alpha-table"

    _PARSERS = {
        "mu": _parse_floats,
        "sigma_rows": _parse_matrix,
        "snapshots": _parse_floats,
        "d_values": _parse_floats,
        "i_star": int,
    }

    @classmethod
    def from_file(cls, path=None, overrides=None) -> "ScenarioConfig":
        pairs = {}
        if path is not None:
            with open(path) as fh:
                for lineno, raw in enumerate(fh, start=1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
                    key, value = line.split("=", 1)
                    pairs[key.strip()] = value.strip()
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            pairs[key.strip()] = value.strip()
        return cls.from_pairs(pairs)

    @classmethod
    def from_pairs(cls, pairs: dict) -> "ScenarioConfig":
        known = {f.name: f.type for f in fields(cls) if not f.name.startswith("_")}
        kwargs = {}
        for key, value in pairs.items():
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            if key in cls._PARSERS:
                kwargs[key] = cls._PARSERS[key](value)
            else:
                current = getattr(cls, key)
                kwargs[key] = type(current)(value) if not isinstance(current, str) else value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.market not in ("synthetic5", "csv", "manual"):
            raise ConfigError(f"unknown market source {self.market!r}")
        if self.market == "csv" and not self.returns_csv:
            raise ConfigError("market=csv needs returns_csv=<path>")
        if self.market == "manual" and (not self.mu or not self.sigma_rows):
            raise ConfigError("market=manual needs mu=... and sigma_rows=...")
        if self.terminal not in ("cara", "arctan"):
            raise ConfigError(f"unknown terminal utility {self.terminal!r}")
        if self.bc not in ("neumann",):
            raise ConfigError("solver runs support bc=neumann (the benchmark owns Dirichlet)")
        if self.b_mode not in ("implicit", "explicit"):
            raise ConfigError(f"unknown b update mode {self.b_mode!r}")
        if self.bounds_check not in ("auto", "off"):
            raise ConfigError("bounds_check must be auto or off")
        if self.T <= 0 or self.h <= 0 or self.h_phi <= 0:
            raise ConfigError("T, h and h_phi must be positive")

    # --- builders -------------------------------------------------------

    def k_effective(self) -> float:
        return self.k if self.k > 0 else 0.5 * self.h * self.h

    def build_market(self) -> MarketModel:
        if self.market == "synthetic5":
            return synthetic_five_asset(epsilon=self.epsilon, rate=self.rate)
        if self.market == "manual":
            return MarketModel(
                mu=np.asarray(self.mu),
                sigma_cov=np.asarray(self.sigma_rows),
                epsilon=self.epsilon,
                rate=self.rate,
            )
        returns, _ = load_returns_csv(self.returns_csv, self.input_kind, self.period_per_year)
        model = estimate_moments(returns, epsilon=self.epsilon, rate=self.rate)
        if self.shrinkage > 0:
            model = MarketModel(
                mu=model.mu,
                sigma_cov=shrink_covariance(model.sigma_cov, self.shrinkage),
                epsilon=self.epsilon,
                rate=self.rate,
            )
        return model

    def build_table(self, model: MarketModel):
        return build_alpha_table(
            model, max(self.phi_lo, QP_PHI_FLOOR), self.phi_hi, self.h_phi
        )

    def build_grid(self) -> SolverGrid:
        return SolverGrid.from_spacing(
            self.x_left,
            self.x_right,
            self.h,
            self.T,
            self.k_effective(),
            x_star=self.x_star,
            i_star=self.i_star if self.i_star > 0 else None,
        )

    def terminal_utility(self):
        return CaraUtility(self.cara_a) if self.terminal == "cara" else ArctanUtility()

    def intertemporal_utility(self, d: float | None = None) -> IntertemporalUtility:
        return IntertemporalUtility(
            kappa=self.kappa, d=self.d if d is None else d, rho=self.rho
        )

    def boundary(self) -> BoundaryCondition:
        return BoundaryCondition.neumann()

    def monitored_bounds(self, d: float | None = None):
        if self.bounds_check == "off" or self.terminal != "cara":
            return None
        d_eff = self.d if d is None else d
        return (-1.0, max(self.cara_a, d_eff))

    def manifest_pairs(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                if value and isinstance(value[0], tuple):
                    text = ";".join(",".join(f"{x:.17g}" for x in row) for row in value)
                else:
                    text = ",".join(f"{x:.17g}" for x in value)
            elif isinstance(value, float):
                text = f"{value:.17g}"
            else:
                text = str(value)
            out.append((f.name, text))
        out.append(("k_effective", f"{self.k_effective():.17g}"))
        return out
