"""Synthetic panel generator for the simulation study.

Two regimes are supported. In the simple regime the instrument depends only
on its own past; in the complex regime it also depends on past treatment and
the current confounder, which is what defeats standard two-stage estimation.
Misspecification knobs add squared-confounder terms to the instrument,
treatment, and outcome equations.

Per subject and period t = 1..T (lags are zero at t = 1):

  confounder   L_t = 0.8 L_{t-1} + sqrt(1 - 0.8^2) e_t   (stationary, unit var)
  hidden       U_t ~ N(0, 1) iid
  instrument   Z_t ~ Bernoulli(expit(mu_Z - mean(mu_Z)))
               mu_Z = Z_{t-1}                              [simple]
               mu_Z = Z_{t-1} + A_{t-1} + 3 L_t + sigma_z L_t^2   [complex]
  treatment    A_t ~ Bernoulli(Phi(mu_A - mean(mu_A)) (1 - d) + Z_t d)
               mu_A = A_{t-1} + L_t + U_t                  [simple]
               mu_A = Z_{t-1} + A_{t-1} + L_t + U_t + sigma_a L_t^2 [complex]
  outcome      Y ~ N(sum_t (U_t + beta_t A_t + L_t) + sigma_y L_1^2, 1)

The mixing weight d = alpha controls instrument strength directly; alpha of
0.1 / 0.3 / 0.5 gives first-stage F near 10 / 100 / 330 (weak, moderate,
strong). Centering terms are the within-sample means of mu.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import InvalidConfigError
from .panel import PanelDataset

REGIMES = ("simple", "complex")

# AR(1) persistence of the observed confounder; innovations scaled so the
# marginal variance stays 1 at every period. Calibrated so the standard
# estimator's complex-regime bias sits near 1.9 at alpha = 0.5.
CONFOUNDER_AR = 0.8
_INNOV_SD = float(np.sqrt(1.0 - CONFOUNDER_AR**2))

DEFAULT_TRUE_BETA = (3.0, 2.0, 1.0)


@dataclass(frozen=True)
class SimConfig:
    """Data-generating knobs for one simulated panel."""

    regime: str
    n: int
    alpha: float
    n_periods: int = 3
    sigma_z: int = 0
    sigma_a: int = 0
    sigma_y: int = 0
    seed: int = 0
    true_beta: tuple[float, ...] = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidConfigError("regime", f"must be one of {REGIMES}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvalidConfigError("n", "must be a positive integer")
        if not 0 < self.alpha < 1:
            raise InvalidConfigError("alpha", "must lie strictly inside (0, 1)")
        if self.n_periods < 1:
            raise InvalidConfigError("n_periods", "must be at least 1")
        for name in ("sigma_z", "sigma_a", "sigma_y"):
            if getattr(self, name) not in (0, 1):
                raise InvalidConfigError(name, "must be 0 or 1")
        beta = self.true_beta
        if beta is None:
            if self.n_periods != len(DEFAULT_TRUE_BETA):
                raise InvalidConfigError(
                    "true_beta", "required when n_periods is not 3"
                )
            beta = DEFAULT_TRUE_BETA
        beta = tuple(float(b) for b in beta)
        if len(beta) != self.n_periods:
            raise InvalidConfigError("true_beta", "length must equal n_periods")
        object.__setattr__(self, "true_beta", beta)
        object.__setattr__(self, "seed", int(self.seed))

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class SimTruth:
    """Ground truth attached to a simulated panel."""

    true_beta: tuple[float, ...]
    true_ate: float
    delta: tuple[float, ...]


def true_values(config: SimConfig) -> SimTruth:
    """Ground truth implied by a config, without generating data."""
    beta = config.true_beta
    return SimTruth(
        true_beta=beta,
        true_ate=float(sum(beta)),
        delta=(float(config.alpha),) * config.n_periods,
    )


def simulate(config: SimConfig) -> tuple[PanelDataset, SimTruth]:
    """Generate one panel under the configured regime.

    Deterministic given ``config`` (including the seed); repeated calls
    return bit-identical datasets.
    """
    rng = np.random.default_rng(config.seed)
    n, T = config.n, config.n_periods
    complex_regime = config.regime == "complex"
    delta = config.alpha
    beta = np.asarray(config.true_beta)

    U = rng.normal(size=(n, T))
    L = np.empty((n, T))
    Z = np.empty((n, T))
    A = np.empty((n, T))
    z_prev = np.zeros(n)
    a_prev = np.zeros(n)
    for t in range(T):
        if t == 0:
            L[:, 0] = rng.normal(size=n)
        else:
            L[:, t] = CONFOUNDER_AR * L[:, t - 1] + _INNOV_SD * rng.normal(size=n)
        lt = L[:, t]
        if complex_regime:
            mu_z = z_prev + a_prev + 3.0 * lt + config.sigma_z * lt**2
        else:
            mu_z = z_prev
        pz = expit(mu_z - mu_z.mean())
        Z[:, t] = rng.random(n) < pz
        if complex_regime:
            mu_a = z_prev + a_prev + lt + U[:, t] + config.sigma_a * lt**2
        else:
            mu_a = a_prev + lt + U[:, t]
        pa = norm.cdf(mu_a - mu_a.mean()) * (1.0 - delta) + Z[:, t] * delta
        A[:, t] = rng.random(n) < pa
        z_prev = Z[:, t]
        a_prev = A[:, t]

    mean_y = (U + A * beta[None, :] + L).sum(axis=1) + config.sigma_y * L[:, 0] ** 2
    Y = mean_y + rng.normal(size=n)

    data = PanelDataset(
        instruments=Z,
        treatments=A,
        confounders=L[:, :, None],
        outcome=Y,
    )
    return data, true_values(config)
