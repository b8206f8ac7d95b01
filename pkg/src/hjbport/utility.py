"""Utility families: terminal wealth preferences and running utility.

Terminal utilities expose value, slope and the local risk-aversion ratio
-u''/u' analytically; running (intertemporal) utilities expose their first
two x-derivatives analytically, parameterized by time-to-maturity tau.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


class CaraUtility:
    """Constant absolute risk aversion: u(x) = -exp(-a*x), a > 0."""

    def __init__(self, a: float):
        if a <= 0:
            raise ConfigError("CARA coefficient must be positive")
        self.a = float(a)

    def value(self, x):
        return -np.exp(-self.a * np.asarray(x, dtype=float))

    def slope(self, x):
        return self.a * np.exp(-self.a * np.asarray(x, dtype=float))

    def risk_aversion(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.a)


class ArctanUtility:
    """Convex-concave utility u(x) = arctan(x) with risk aversion 2x/(1+x^2)."""

    def value(self, x):
        return np.arctan(np.asarray(x, dtype=float))

    def slope(self, x):
        return 1.0 / (1.0 + np.asarray(x, dtype=float) ** 2)

    def risk_aversion(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x / (1.0 + x * x)


class IntertemporalUtility:
    """Discounted exponential running utility c = -kappa*exp(-d*x - rho*tau).

    Non-decreasing and concave in x for kappa, d >= 0.  tau is
    time-to-maturity, so the discount rho*(T-t) becomes rho*tau.
    """

    def __init__(self, kappa: float = 0.0, d: float = 0.0, rho: float = 0.0):
        if kappa < 0 or d < 0:
            raise ConfigError("kappa and d must be nonnegative")
        self.kappa = float(kappa)
        self.d = float(d)
        self.rho = float(rho)

    def _expo(self, x, tau):
        return np.exp(-self.d * np.asarray(x, dtype=float) - self.rho * tau)

    def value(self, x, tau):
        return -self.kappa * self._expo(x, tau)

    def dx(self, x, tau):
        return self.kappa * self.d * self._expo(x, tau)

    def dxx(self, x, tau):
        return -self.kappa * self.d * self.d * self._expo(x, tau)


ZERO_UTILITY = IntertemporalUtility(kappa=0.0)
