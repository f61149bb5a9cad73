"""Model parameters, derived constants, and configuration loading.

Single source of truth for every symbol the solvers use. All wealth is
measured in multiples of the (unit) annual labour income; time is measured
in years from the starting age, so model time t corresponds to age x + t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ModelParamError(ValueError):
    """A parameter value (or combination) is outside the model's domain."""


class ConfigError(ValueError):
    """A configuration file could not be parsed into valid parameters."""


# Configuration vocabulary: flat key=value files may use exactly these keys.
CONFIG_KEYS = ("r", "rho", "alpha", "gamma", "gamma_star", "l_bar", "b", "m", "x", "T_age")


@dataclass(frozen=True)
class ModelParams:
    """Economic, preference, and mortality parameters plus derived constants.

    Immutable after construction; safe to share across workers. Build via
    :func:`derive_params`, which validates and fills the derived fields.

    Attributes:
        r: risk-free rate per year.
        rho: subjective discount rate per year.
        alpha: consumption weight in the two-good utility, in (0, 1).
        gamma_star: risk-aversion coefficient for the consumption/leisure pair.
        gamma: effective consumption curvature, 1 - alpha*(1 - gamma_star).
        gamma_tilde: 1/gamma (exponent of the marginal-value inversion
            c = V_w ** -gamma_tilde).
        l_bar: retirement leisure endowment, > 1 (working leisure is 1).
        B: l_bar ** (gamma_tilde*(1-alpha)*(1-gamma_star)); scales
            post-retirement consumption.
        m: Gompertz modal age in years.
        b: Gompertz dispersion in years.
        x: age in years at model time t = 0.
        T_age: maximum attainable age in years.
        horizon: T_age - x, the model time span in years.
    """

    r: float
    rho: float
    alpha: float
    gamma_star: float
    gamma: float
    gamma_tilde: float
    l_bar: float
    B: float
    m: float
    b: float
    x: float
    T_age: float
    horizon: float

    def age_at(self, t):
        return self.x + t

    @property
    def leisure_factor(self) -> float:
        """Multiplier on c**(1-gamma)/(1-gamma) in retired utility (= B**gamma)."""
        return self.l_bar ** ((1.0 - self.alpha) * (1.0 - self.gamma_star))

    def utility_working(self, c):
        """Flow utility of consumption while working (leisure normalized to 1)."""
        return c ** (1.0 - self.gamma) / (1.0 - self.gamma)

    def utility_retired(self, c):
        """Flow utility of consumption in retirement (leisure l_bar)."""
        return self.leisure_factor * c ** (1.0 - self.gamma) / (1.0 - self.gamma)

    def evolve(self, **changes) -> "ModelParams":
        """Re-derive a new parameter set with some raw inputs replaced.

        Accepts the same keyword names as :func:`derive_params`. Derived
        fields (gamma, B, horizon, ...) are recomputed, not patched.
        """
        raw = {
            "r": self.r,
            "rho": self.rho,
            "alpha": self.alpha,
            "l_bar": self.l_bar,
            "b": self.b,
            "m": self.m,
            "x": self.x,
            "T_age": self.T_age,
            "gamma_star": self.gamma_star,
        }
        if "gamma" in changes and "gamma_star" not in changes:
            raw.pop("gamma_star")
        unknown = set(changes) - set(CONFIG_KEYS)
        if unknown:
            raise ModelParamError(f"unknown parameter(s): {sorted(unknown)}")
        raw.update(changes)
        return derive_params(**raw)


def derive_params(
    r: float,
    rho: float,
    alpha: float,
    l_bar: float,
    b: float,
    m: float,
    x: float,
    T_age: float = 110.0,
    gamma: float | None = None,
    gamma_star: float | None = None,
) -> ModelParams:
    """Validate raw inputs and return a fully derived ModelParams.

    Exactly one of ``gamma`` / ``gamma_star`` must be supplied; the other is
    derived from gamma = 1 - alpha*(1 - gamma_star). The stored gamma is
    always recomputed from the stored gamma_star so the identity holds
    exactly as stored.
    """
    if (gamma is None) == (gamma_star is None):
        raise ModelParamError("supply exactly one of gamma or gamma_star")
    if not (0.0 < alpha < 1.0):
        raise ModelParamError(f"alpha must lie in (0, 1), got {alpha}")
    if gamma_star is None:
        if gamma == 1.0:
            raise ModelParamError("gamma == 1 is excluded (log utility not supported)")
        gamma_star = (gamma - 1.0 + alpha) / alpha
    if gamma_star == 1.0:
        raise ModelParamError("gamma_star == 1 is excluded")
    if gamma_star <= 0.0:
        raise ModelParamError(f"gamma_star must be positive, got {gamma_star}")
    gamma = 1.0 - alpha * (1.0 - gamma_star)
    if gamma <= 0.0 or gamma == 1.0:
        raise ModelParamError(f"derived gamma must be positive and != 1, got {gamma}")
    if l_bar <= 1.0:
        raise ModelParamError(f"l_bar must exceed 1 (working leisure), got {l_bar}")
    if b <= 0.0:
        raise ModelParamError(f"Gompertz dispersion b must be positive, got {b}")
    horizon = T_age - x
    if horizon <= 0.0:
        raise ModelParamError(f"horizon T_age - x must be positive, got {horizon}")
    for name, value in (("r", r), ("rho", rho), ("m", m), ("x", x)):
        if not math.isfinite(value):
            raise ModelParamError(f"{name} must be finite, got {value}")

    gamma_tilde = 1.0 / gamma
    B = l_bar ** (gamma_tilde * (1.0 - alpha) * (1.0 - gamma_star))
    return ModelParams(
        r=r, rho=rho, alpha=alpha, gamma_star=gamma_star, gamma=gamma,
        gamma_tilde=gamma_tilde, l_bar=l_bar, B=B, m=m, b=b, x=x,
        T_age=T_age, horizon=horizon,
    )


def default_params() -> ModelParams:
    """The baseline parameter set used throughout the package."""
    return derive_params(
        r=0.025, rho=0.025, alpha=0.5, l_bar=6.49,
        b=9.44, m=88.82, x=30.0, T_age=110.0, gamma=2.0,
    )


def load_params(path) -> ModelParams:
    """Load parameters from a flat key=value configuration file.

    One ``key = value`` (or ``key: value``) pair per line; blank lines and
    ``#`` comments are ignored. Allowed keys are exactly those in
    CONFIG_KEYS; anything else raises ConfigError naming the key. T_age
    defaults to 110 when absent; every other key (with exactly one of
    gamma/gamma_star) is required.
    """
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            for sep in ("=", ":"):
                if sep in stripped:
                    key, _, raw = stripped.partition(sep)
                    break
            else:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = float(raw.strip())
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: value for {key!r} is not a number: {raw.strip()!r}") from None

    required = {"r", "rho", "alpha", "l_bar", "b", "m", "x"}
    missing = required - set(values)
    if missing:
        raise ConfigError(f"{path}: missing required key(s): {sorted(missing)}")
    if ("gamma" in values) == ("gamma_star" in values):
        raise ConfigError(f"{path}: supply exactly one of gamma or gamma_star")
    try:
        return derive_params(**values)
    except ModelParamError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
