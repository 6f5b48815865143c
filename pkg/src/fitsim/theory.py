"""Closed-form limit laws for site sizes and fitness.

All Beta/Gamma values go through logarithms. For large arguments the
log-Gamma *difference* is taken from the Stirling series directly, so
``B(x, y)`` keeps ~1e-13 relative accuracy for ``x`` up to 1e6 where plain
``lgamma(x) - lgamma(x + y)`` would lose about nine digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from fitsim.model import DerivedConstants, derive_constants

_STIRLING_MIN = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

SUM_REL_TOL = 1e-12
SUM_MAX_TERMS = 1 << 22


class DomainError(ValueError):
    pass


def _stirling_correction(z):
    """lgamma(z) - [(z - 1/2) log z - z + log(2 pi)/2] for z >= 10."""
    iz = 1.0 / z
    iz2 = iz * iz
    return iz * (1.0 / 12 + iz2 * (-1.0 / 360 + iz2 * (1.0 / 1260 + iz2 * (-1.0 / 1680 + iz2 / 1188))))


def log_gamma_ratio(b, a):
    """log Gamma(b) - log Gamma(b + a) for b, a > 0 (arrays broadcast)."""
    b = np.asarray(b, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b, a = np.broadcast_arrays(b, a)
    out = np.empty(b.shape, dtype=np.float64)
    big = b >= _STIRLING_MIN
    if np.any(big):
        bb, aa = b[big], a[big]
        s = bb + aa
        out[big] = (-(bb - 0.5) * np.log1p(aa / bb) - aa * np.log(s) + aa
                    + _stirling_correction(bb) - _stirling_correction(s))
    small = ~big
    if np.any(small):
        out[small] = gammaln(b[small]) - gammaln(b[small] + a[small])
    return out if out.ndim else float(out)


def log_beta(x, y):
    """log B(x, y) for x, y > 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("Beta function needs positive arguments")
    big = np.maximum(x, y)
    small = np.minimum(x, y)
    out = gammaln(small) + log_gamma_ratio(big, small)
    return out if np.ndim(out) else float(out)


def beta_function(x, y):
    """B(x, y) = Gamma(x) Gamma(y) / Gamma(x + y)."""
    out = np.exp(log_beta(x, y))
    return out if np.ndim(out) else float(out)


def _check_k(k):
    k = np.asarray(k)
    if np.any(k < 1):
        raise DomainError("k must be a positive integer")
    return k.astype(np.float64)


def _scalar(out):
    return out if np.ndim(out) else float(out)


def yule_simon_pmf(rho, k):
    """P(Z = k) = rho B(k, rho + 1), k >= 1."""
    if rho <= 0:
        raise DomainError("Yule-Simon shape must be positive")
    k = _check_k(k)
    return _scalar(rho * np.exp(log_beta(k, rho + 1.0)))


def shifted_conditioned_pmf(rho, k):
    """PMF of Z - 1 given Z > 1 for Z ~ YS(rho): rho (rho + 1) B(k + 1, rho + 1)."""
    if rho <= 0:
        raise DomainError("Yule-Simon shape must be positive")
    k = _check_k(k)
    return _scalar(rho * (rho + 1.0) * np.exp(log_beta(k + 1.0, rho + 1.0)))


def _transient(constants: DerivedConstants) -> DerivedConstants:
    if not constants.transient:
        raise DomainError(f"limit laws need the transient regime (pr > 1 - p); got {constants.regime}")
    return constants


def _above_critical(constants: DerivedConstants, f: float) -> None:
    if not constants.f_c < f <= 1.0:
        raise DomainError(f"fitness threshold must satisfy f_c < f <= 1 (f_c = {constants.f_c}), got {f}")


def rho_k(c: float, k):
    """PMF of B+(c): (c - 1) c B(k + 1, c)."""
    if not c > 1.0:
        raise DomainError(f"need c > 1, got {c}")
    k = _check_k(k)
    return _scalar((c - 1.0) * c * np.exp(log_beta(k + 1.0, c)))


def beta_k_product(constants: DerivedConstants, f: float, k):
    """(1 - f) r / (1 - r) Gamma(c + 1) Gamma(k + 1) / Gamma(c + k + 1)."""
    constants = _transient(constants)
    _above_critical(constants, f)
    k = _check_k(k)
    r, c = constants.r, constants.c
    log_ratio = math.lgamma(c + 1.0) + log_gamma_ratio(k + 1.0, c)
    return _scalar((1.0 - f) * r / (1.0 - r) * np.exp(log_ratio))


BETA_ROUTE_TOL = 1e-10


def beta_k(constants: DerivedConstants, f: float, k):
    """Limit of the population fraction in size-k sites with fitness >= f."""
    constants = _transient(constants)
    _above_critical(constants, f)
    scale = (1.0 - f) / (1.0 - constants.f_c)
    value = scale * np.asarray(shifted_conditioned_pmf(constants.c - 1.0, k))
    other = np.asarray(beta_k_product(constants, f, k))
    if not np.allclose(value, other, rtol=BETA_ROUTE_TOL, atol=0.0):
        worst = np.max(np.abs(value - other) / np.abs(other))
        raise ArithmeticError(f"beta_k routes disagree (relative gap {worst:.3e})")
    return _scalar(value)


def alpha_k(constants: DerivedConstants, f: float, k):
    """Asymptotic growth rate of the number of size-k sites with fitness >= f."""
    k = _check_k(k)
    return _scalar(constants.gamma * np.asarray(beta_k(constants, f, k)) / k)


def rho_tail_asymptote(c: float, k):
    """(c - 1) Gamma(c + 1) k^-c."""
    k = _check_k(k)
    return _scalar((c - 1.0) * math.gamma(c + 1.0) * k ** (-c))


@dataclass(frozen=True)
class SeriesSum:
    value: float
    partial: float
    remainder: float
    terms: int


def _adaptive_sum(terms_fn, remainder_fn, rel_tol=SUM_REL_TOL, max_terms=SUM_MAX_TERMS) -> SeriesSum:
    """Sum ``terms_fn(k)`` over k >= 1 in doubling blocks until the analytic
    remainder after the last term falls below ``rel_tol`` of the partial sum
    (or ``max_terms`` is hit), then add that remainder."""
    acc = 0.0
    lo, width = 1, 1024
    while True:
        hi = min(lo + width, max_terms + 1)
        ks = np.arange(lo, hi, dtype=np.float64)
        acc += math.fsum(np.asarray(terms_fn(ks), dtype=np.float64).tolist())
        last = hi - 1
        rem = remainder_fn(last)
        if rem <= rel_tol * acc or last >= max_terms:
            return SeriesSum(value=acc + rem, partial=acc, remainder=rem, terms=last)
        lo, width = hi, width * 2


def rho_sum(c: float, **kw) -> SeriesSum:
    """Sum of rho_k; the remainder after K terms is (K + 1) rho_K / (c - 1)."""
    return _adaptive_sum(lambda ks: rho_k(c, ks), lambda K: (K + 1) * rho_k(c, K) / (c - 1.0), **kw)


def beta_sum(constants: DerivedConstants, f: float, **kw) -> SeriesSum:
    c = constants.c
    return _adaptive_sum(lambda ks: beta_k(constants, f, ks),
                         lambda K: (K + 1) * beta_k(constants, f, K) / (c - 1.0), **kw)


def site_normalizer(constants: DerivedConstants, f: float, **kw) -> float:
    """C = (sum_k beta_k / k)^-1; the remainder after K terms is beta_K / c."""
    c = constants.c
    total = _adaptive_sum(lambda ks: beta_k(constants, f, ks) / ks,
                          lambda K: beta_k(constants, f, K) / c, **kw)
    return 1.0 / total.value


def site_proportion_limit(constants: DerivedConstants, k, f: float | None = None):
    """Limit of the fraction of sites (fitness >= f) that have size k.

    Independent of f; by default evaluated at the midpoint of (f_c, 1].
    """
    constants = _transient(constants)
    if f is None:
        f = 0.5 * (constants.f_c + 1.0)
    k = _check_k(k)
    C = site_normalizer(constants, f)
    return _scalar(C * np.asarray(beta_k(constants, f, k)) / k)


def fitness_marginal_cdf(constants: DerivedConstants, f):
    """CDF of the uniform law on [f_c, 1]."""
    constants = _transient(constants)
    f = np.asarray(f, dtype=np.float64)
    out = np.clip((f - constants.f_c) / (1.0 - constants.f_c), 0.0, 1.0)
    return _scalar(out)


def geometric_variant_param(p: float, r: float) -> float:
    """Success probability of the geometric site-size law for the uniform
    inheritance / whole-site death variant."""
    constants = _transient(derive_constants(p, r))
    return (p * r - (1.0 - p)) / constants.gamma


def geometric_pmf(q: float, k):
    """q (1 - q)^(k - 1), k >= 1."""
    if not 0.0 < q <= 1.0:
        raise DomainError("geometric parameter must lie in (0, 1]")
    k = _check_k(k)
    return _scalar(q * (1.0 - q) ** (k - 1.0))


def balance_residuals(constants: DerivedConstants, f: float, K: int) -> np.ndarray:
    """Residuals of the rate balance equations on the closed-form beta_k.

    Entry 0: gamma beta_1 - [p r (1 - f) - p (1 - r) beta_1].
    Entry k-1 (k >= 2): alpha_k - p (1 - r)(beta_{k-1} - beta_k).
    """
    if K < 2:
        raise DomainError("need K >= 2")
    constants = _transient(constants)
    _above_critical(constants, f)
    p, r, gamma = constants.p, constants.r, constants.gamma
    ks = np.arange(1, K + 1)
    b = np.asarray(beta_k(constants, f, ks))
    out = np.empty(K)
    out[0] = gamma * b[0] - (p * r * (1.0 - f) - p * (1.0 - r) * b[0])
    alpha = gamma * b[1:] / ks[1:]
    out[1:] = alpha - p * (1.0 - r) * (b[:-1] - b[1:])
    return out


LIMIT_KINDS = ("beta_k", "rho_k", "site_proportion", "geometric_variant")


@dataclass(frozen=True)
class LimitLaw:
    """A limiting size PMF bound to its parameters."""

    kind: str
    constants: DerivedConstants
    f: float | None = None

    def __post_init__(self):
        if self.kind not in LIMIT_KINDS:
            raise DomainError(f"unknown limit kind {self.kind!r}")
        _transient(self.constants)
        if self.kind == "beta_k":
            _above_critical(self.constants, self.f)

    @property
    def total(self) -> float:
        if self.kind == "beta_k":
            return (1.0 - self.f) / (1.0 - self.constants.f_c)
        return 1.0

    def pmf(self, k):
        c = self.constants
        if self.kind == "beta_k":
            return beta_k(c, self.f, k)
        if self.kind == "rho_k":
            return rho_k(c.c, k)
        if self.kind == "site_proportion":
            return site_proportion_limit(c, k, self.f)
        return geometric_pmf(geometric_variant_param(c.p, c.r), k)

    def table(self, K: int) -> np.ndarray:
        return np.asarray(self.pmf(np.arange(1, K + 1)), dtype=np.float64)
