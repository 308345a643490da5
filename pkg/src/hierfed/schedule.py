"""Global plasticity-to-stability schedule and the stage machine.

All quantities follow simple geometric decay/approach laws so each has a
single rate knob and a closed-form limit:

  alpha(t) = alpha1 - (alpha1 - alpha0) * beta_decay**t      (nondecreasing)
  beta(t)  = beta0 * beta_decay**t                           (decreasing)
  gamma(t) = gamma0 * gamma_decay**t                         (decreasing)
  rho(t)   = rho0 for t < t_adapt, else
             1 - (1 - rho0) * rho_growth**(t - t_adapt)      (nondecreasing)

Stages: warmup (t < warmup_rounds), construction (t == warmup_rounds),
adaptation, then high-specialization from t_special on (absorbing).
"""

from dataclasses import dataclass

from .errors import ConfigurationError

WARMUP = "warmup"
CONSTRUCTION = "construction"
ADAPTATION = "adaptation"
HIGH_SPECIALIZATION = "high-specialization"


@dataclass(frozen=True)
class MetaLawSchedule:
    alpha0: float = 0.5
    alpha1: float = 1.0
    beta0: float = 1.0
    beta_decay: float = 0.95
    gamma0: float = 1.0
    gamma_decay: float = 0.99
    warmup_rounds: int = 3
    restructure_period: int = 1
    t_adapt: int = 10
    t_special: int = 30
    max_levels: int = 2
    thresholds: tuple = (1.0, 2.0)
    rho0: float = 0.0
    rho_growth: float = 0.8
    elimination_factor: float = 3.0

    def __post_init__(self):
        if not (0 < self.alpha0 <= self.alpha1):
            raise ConfigurationError("need alpha1 >= alpha0 > 0")
        if self.beta0 < 0:
            raise ConfigurationError("need beta0 >= 0")
        # decay factor 1.0 freezes a quantity (used for flat-averaging setups)
        if not (0 < self.beta_decay <= 1 and 0 < self.gamma_decay <= 1):
            raise ConfigurationError("decay factors must lie in (0,1]")
        if not (0 < self.gamma0 <= 1):
            raise ConfigurationError("need gamma0 in (0,1]")
        if self.warmup_rounds < 0 or self.restructure_period < 1:
            raise ConfigurationError("need warmup_rounds >= 0 and restructure_period >= 1")
        if not self.t_adapt < self.t_special:
            raise ConfigurationError("need t_adapt < t_special")
        if self.max_levels < 1:
            raise ConfigurationError("need max_levels >= 1")
        object.__setattr__(self, "thresholds", tuple(float(d) for d in self.thresholds))
        if len(self.thresholds) != self.max_levels:
            raise ConfigurationError("need one distance threshold per level")
        if any(b >= a for a, b in zip(self.thresholds[1:], self.thresholds)):
            raise ConfigurationError("thresholds must be strictly increasing")
        if not (0 <= self.rho0 < 1):
            raise ConfigurationError("need rho0 in [0,1)")
        if not (0 < self.rho_growth < 1):
            raise ConfigurationError("need rho_growth in (0,1)")
        if self.elimination_factor <= 1:
            raise ConfigurationError("need elimination_factor > 1")

    def alpha(self, t):
        return self.alpha1 - (self.alpha1 - self.alpha0) * self.beta_decay**t

    def beta(self, t):
        return self.beta0 * self.beta_decay**t

    def gamma(self, t):
        return self.gamma0 * self.gamma_decay**t

    def resistance(self, t):
        if t < self.t_adapt:
            return self.rho0
        return 1.0 - (1.0 - self.rho0) * self.rho_growth ** (t - self.t_adapt)

    def stage(self, t):
        if t < self.warmup_rounds:
            return WARMUP
        if t == self.warmup_rounds:
            return CONSTRUCTION
        if t < self.t_special:
            return ADAPTATION
        return HIGH_SPECIALIZATION

    def restructure_due(self, t):
        return t >= self.warmup_rounds and (t - self.warmup_rounds) % self.restructure_period == 0
