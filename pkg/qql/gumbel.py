## Gumbel distribution: constants, CDF/quantile/sampling, MLE fitting and KS goodness of fit.

import math
import logging
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config.config import Config
from qql.errors import ConvergenceError, DegenerateSampleError, DomainError, PreconditionError


ArrayLike = Union[float, Sequence[float], np.ndarray]

# Euler-Mascheroni constant, the mean offset of the standard Gumbel law
OMEGA: float = 0.57721566490153286060651209008240243

logger = logging.getLogger(__name__)


## Location and scale of a Gumbel (maximum) law
class GumbelParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    location: float
    scale: float

    ## Scale must be strictly positive and finite
    @field_validator('scale')
    @classmethod
    def validate_scale(cls, v):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError('Gumbel scale must be positive and finite')
        return v

    ## Location must be finite
    @field_validator('location')
    @classmethod
    def validate_location(cls, v):
        if not math.isfinite(v):
            raise ValueError('Gumbel location must be finite')
        return v


## The three quantile levels at which V (conservative), V and V-hat sit on the CDF of Q
class QuantileLevels(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha0: float
    alpha1: float
    alpha2: float

    ## Levels must be strictly ordered inside (0, 1)
    @model_validator(mode='after')
    def validate_order(self):
        if not 0.0 < self.alpha0 < self.alpha1 < self.alpha2 < 1.0:
            raise ValueError('Quantile levels must satisfy 0 < alpha0 < alpha1 < alpha2 < 1')
        return self


## Outcome of a one-sample Kolmogorov-Smirnov test
class GofReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    ks_statistic: float
    p_value: float
    n: int

    ## Statistic lies in [0, 1]
    @field_validator('ks_statistic')
    @classmethod
    def validate_statistic(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError('KS statistic must lie in [0, 1]')
        return v

    ## p-value is a probability
    @field_validator('p_value')
    @classmethod
    def validate_p_value(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError('p-value must lie in [0, 1]')
        return v


def euler_mascheroni() -> float:
    return OMEGA


## Closed-form quantile levels alpha0, alpha1, alpha2
def quantile_levels() -> QuantileLevels:
    return QuantileLevels(
        alpha0=-math.expm1(-math.exp(-OMEGA)),
        alpha1=-math.expm1(-1.0),
        alpha2=-math.expm1(-math.exp(OMEGA)),
    )


def _check_scale(p: GumbelParams) -> None:
    # model_construct bypasses validation, so operations re-check
    if not (p.scale > 0 and math.isfinite(p.scale)):
        raise DomainError(f"Gumbel scale must be positive, got {p.scale}")


def _as_output(values: np.ndarray, like: ArrayLike):
    if np.ndim(like) == 0:
        return float(values)
    return values


## Cumulative distribution exp(-exp(-(x - loc) / scale))
def gumbel_cdf(x: ArrayLike, p: GumbelParams):
    _check_scale(p)
    z = (np.asarray(x, dtype=np.float64) - p.location) / p.scale
    return _as_output(np.exp(-np.exp(-z)), x)


## Inverse CDF: loc - scale * ln(-ln(prob))
def gumbel_quantile(prob: ArrayLike, p: GumbelParams):
    _check_scale(p)
    u = np.asarray(prob, dtype=np.float64)
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise DomainError(f"Quantile probability must lie in (0, 1), got {prob}")
    return _as_output(p.location - p.scale * np.log(-np.log(u)), prob)


def gumbel_logpdf(x: ArrayLike, p: GumbelParams):
    _check_scale(p)
    z = (np.asarray(x, dtype=np.float64) - p.location) / p.scale
    return _as_output(-z - np.exp(-z) - math.log(p.scale), x)


def gumbel_pdf(x: ArrayLike, p: GumbelParams):
    return _as_output(np.exp(gumbel_logpdf(np.asarray(x, dtype=np.float64), p)), x)


def gumbel_mean(p: GumbelParams) -> float:
    return p.location + OMEGA * p.scale


def gumbel_log_likelihood(samples: ArrayLike, p: GumbelParams) -> float:
    return float(np.sum(gumbel_logpdf(np.asarray(samples, dtype=np.float64), p)))


## Draw n i.i.d. values by inverse transform of uniform(0, 1)
def gumbel_sample(rng: np.random.Generator, p: GumbelParams, n: int) -> np.ndarray:
    _check_scale(p)
    if n < 1:
        raise PreconditionError(f"Sample size must be at least 1, got {n}")
    u = rng.random(n)
    # random() is [0, 1); the quantile needs an open interval
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return p.location - p.scale * np.log(-np.log(u))


## Score of the scale equation and its derivative, computed with min-shifted weights
def _scale_score(x: np.ndarray, x_mean: float, x_min: float, beta: float):
    w = np.exp(-(x - x_min) / beta)
    w_sum = w.sum()
    weighted_mean = float(np.dot(w, x) / w_sum)
    weighted_var = float(np.dot(w, (x - weighted_mean) ** 2) / w_sum)
    score = beta - x_mean + weighted_mean
    slope = 1.0 + weighted_var / (beta * beta)
    return score, slope


## Root of the scale score by bisection, used when a Newton iterate leaves its safe range
def _bisect_scale(x: np.ndarray, x_mean: float, x_min: float, start: float) -> float:
    lo, hi = 1e-12, max(start, 1e-6)
    while _scale_score(x, x_mean, x_min, hi)[0] < 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise ConvergenceError('Could not bracket the Gumbel scale', last_iterate=hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _scale_score(x, x_mean, x_min, mid)[0] < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


## Maximum-likelihood (location, scale) by Newton iteration on the scale equation
def gumbel_mle_fit(samples: ArrayLike) -> GumbelParams:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < Config.MLE_MIN_SAMPLES:
        raise PreconditionError(f"Gumbel fit needs at least {Config.MLE_MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError('Gumbel fit samples must be finite')

    x_min = float(x.min())
    x_mean = float(x.mean())
    std = float(x.std())
    if std == 0.0 or x_min == float(x.max()):
        raise DegenerateSampleError('All samples are equal; the Gumbel scale is degenerate')

    # Method-of-moments start
    beta = std * math.sqrt(6.0) / math.pi
    for iteration in range(1, Config.MLE_MAX_ITER + 1):
        score, slope = _scale_score(x, x_mean, x_min, beta)
        candidate = beta - score / slope
        if not (math.isfinite(candidate) and 1e-12 < candidate < 1e12):
            logger.debug(f"Newton iterate {candidate} left the safe range; switching to bisection")
            candidate = _bisect_scale(x, x_mean, x_min, beta)
        converged = abs(candidate - beta) < Config.MLE_TOLERANCE
        beta = candidate
        if converged:
            break
    else:
        raise ConvergenceError(f"Gumbel MLE did not converge in {Config.MLE_MAX_ITER} iterations", last_iterate=beta)

    location = x_min - beta * math.log(float(np.mean(np.exp(-(x - x_min) / beta))))
    logger.debug(f"Gumbel MLE converged after {iteration} iterations: loc={location:.6g}, scale={beta:.6g}")
    return GumbelParams(location=location, scale=beta)


## Asymptotic Kolmogorov survival function 2 * sum (-1)^(k-1) exp(-2 k^2 x^2)
def kolmogorov_sf(x: float, terms: int = None) -> float:
    terms = terms or Config.KS_SERIES_TERMS
    if x <= 0.0:
        return 1.0
    # the alternating series only settles for x away from zero; the law is 1 there to double precision
    if x < 0.18:
        return 1.0
    k = np.arange(1, terms + 1, dtype=np.float64)
    signs = np.where(k % 2 == 1, 1.0, -1.0)
    total = 2.0 * float(np.sum(signs * np.exp(-2.0 * k * k * x * x)))
    return min(1.0, max(0.0, total))


## One-sample Kolmogorov-Smirnov test against a Gumbel law
def ks_test(samples: ArrayLike, p: GumbelParams) -> GofReport:
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n < Config.MLE_MIN_SAMPLES:
        raise PreconditionError(f"KS test needs at least {Config.MLE_MIN_SAMPLES} samples, got {n}")

    cdf = np.asarray(gumbel_cdf(x, p))
    i = np.arange(1, n + 1, dtype=np.float64)
    d_plus = float(np.max(i / n - cdf))
    d_minus = float(np.max(cdf - (i - 1.0) / n))
    statistic = min(1.0, max(0.0, d_plus, d_minus))
    p_value = kolmogorov_sf(math.sqrt(n) * statistic)

    logger.debug(f"KS test n={n}: D={statistic:.6g}, p={p_value:.4g}")
    return GofReport(ks_statistic=statistic, p_value=p_value, n=n)
