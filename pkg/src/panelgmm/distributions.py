"""
Reference distributions for test statistics.

Normal, chi-square, Student t, F and the chi-bar-square(01) mixture, built
on the regularized incomplete gamma and beta functions.  Survival functions
are evaluated directly on the upper tail so small p-values keep their
relative accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "DistributionRef",
    "normal",
    "chi_square",
    "student_t",
    "f_dist",
    "chibar2_01",
    "cdf",
    "sf",
    "quantile",
    "two_sided_normal_p",
    "chibar2_01_p",
    "gammainc_lower",
    "gammainc_upper",
    "betainc",
    "format_p",
]

FAMILIES = ("normal", "chi_square", "student_t", "f", "chibar2_01")

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


@dataclass(frozen=True)
class DistributionRef:
    """Reference distribution of a test statistic.

    ``df1`` is the (numerator) degrees of freedom; ``df2`` is only used by
    the F family.  ``chibar2_01`` is the 50:50 mixture of a point mass at
    zero and chi-square(1).
    """

    family: str
    df1: float = 0.0
    df2: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.family!r}")
        if self.family == "student_t" and not self.df1 > 0:
            raise ValueError(f"student_t requires df1 > 0, got {self.df1}")
        # chi2(0) is the point mass at zero
        if self.family == "chi_square" and not self.df1 >= 0:
            raise ValueError(f"chi_square requires df1 >= 0, got {self.df1}")
        if self.family == "f" and not (self.df1 > 0 and self.df2 > 0):
            raise ValueError(f"f requires df1 > 0 and df2 > 0, got ({self.df1}, {self.df2})")

    def label(self) -> str:
        """Short label in the style ``chi2(19)`` / ``F(1,25)``."""
        if self.family == "normal":
            return "z"
        if self.family == "chi_square":
            return f"chi2({_fmt_df(self.df1)})"
        if self.family == "student_t":
            return f"t({_fmt_df(self.df1)})"
        if self.family == "f":
            return f"F({_fmt_df(self.df1)},{_fmt_df(self.df2)})"
        return "chibar2(01)"

    def to_dict(self) -> dict:
        return {"family": self.family, "df1": self.df1, "df2": self.df2}

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionRef":
        return cls(d["family"], float(d.get("df1", 0.0)), float(d.get("df2", 0.0)))


def _fmt_df(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def normal() -> DistributionRef:
    return DistributionRef("normal")


def chi_square(df: float) -> DistributionRef:
    return DistributionRef("chi_square", float(df))


def student_t(df: float) -> DistributionRef:
    return DistributionRef("student_t", float(df))


def f_dist(df1: float, df2: float) -> DistributionRef:
    return DistributionRef("f", float(df1), float(df2))


def chibar2_01() -> DistributionRef:
    return DistributionRef("chibar2_01", 1.0)


# ---------------------------------------------------------------------------
# special functions


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by its power series; converges fast for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by Lentz's continued fraction; converges fast for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _beta_cf(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


# ---------------------------------------------------------------------------
# distribution functions


def _check_x(x: float) -> float:
    x = float(x)
    if math.isnan(x):
        raise ValueError("x must not be NaN")
    return x


def _t_tail(df: float, x: float) -> float:
    # P(T > |x|); near zero df/(df+x^2) rounds to 1, so use the complement
    x2 = x * x
    if x2 < df:
        return 0.5 - 0.5 * betainc(0.5, df / 2.0, x2 / (df + x2))
    return 0.5 * betainc(df / 2.0, 0.5, df / (df + x2))


def cdf(d: DistributionRef, x: float) -> float:
    """P(X <= x) under distribution ``d``."""
    x = _check_x(x)
    fam = d.family
    if fam == "normal":
        return 0.5 * math.erfc(-x / math.sqrt(2.0))
    if fam == "chi_square":
        if d.df1 == 0:
            return 1.0 if x >= 0 else 0.0
        return gammainc_lower(d.df1 / 2.0, x / 2.0) if x > 0 else 0.0
    if fam == "student_t":
        if math.isinf(x):
            return 1.0 if x > 0 else 0.0
        tail = _t_tail(d.df1, x)
        return 1.0 - tail if x > 0 else tail
    if fam == "f":
        if x <= 0:
            return 0.0
        if math.isinf(x):
            return 1.0
        return betainc(d.df1 / 2.0, d.df2 / 2.0, d.df1 * x / (d.df1 * x + d.df2))
    # chibar2_01
    if x < 0:
        return 0.0
    return 0.5 + 0.5 * gammainc_lower(0.5, x / 2.0)


def sf(d: DistributionRef, x: float) -> float:
    """Upper tail probability, evaluated without cancellation.

    For ``chibar2_01`` this is P(X >= x), so the atom at zero gives
    ``sf(0) == 1``; that is the p-value convention for a boundary statistic.
    """
    x = _check_x(x)
    fam = d.family
    if fam == "normal":
        return 0.5 * math.erfc(x / math.sqrt(2.0))
    if fam == "chi_square":
        if d.df1 == 0:
            return 1.0 if x <= 0 else 0.0
        return gammainc_upper(d.df1 / 2.0, x / 2.0) if x > 0 else 1.0
    if fam == "student_t":
        if math.isinf(x):
            return 0.0 if x > 0 else 1.0
        tail = _t_tail(d.df1, x)
        return tail if x > 0 else 1.0 - tail
    if fam == "f":
        if x <= 0:
            return 1.0
        if math.isinf(x):
            return 0.0
        return betainc(d.df2 / 2.0, d.df1 / 2.0, d.df2 / (d.df2 + d.df1 * x))
    if x <= 0:
        return 1.0
    return 0.5 * gammainc_upper(0.5, x / 2.0)


def two_sided_normal_p(z: float) -> float:
    """Two-sided standard normal p-value 2*Phi(-|z|)."""
    z = _check_x(z)
    return math.erfc(abs(z) / math.sqrt(2.0))


def chibar2_01_p(stat: float) -> float:
    """p-value of a boundary LM statistic against chibar2(01)."""
    stat = _check_x(stat)
    if stat < 0:
        raise ValueError("chibar2(01) statistic must be non-negative")
    return sf(chibar2_01(), stat)


def quantile(d: DistributionRef, p: float) -> float:
    """Inverse cdf by bracketing and bisection on the tail-accurate side."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    fam = d.family
    if fam == "chi_square" and d.df1 == 0:
        return 0.0
    if fam == "chibar2_01":
        if p <= 0.5:
            return 0.0
        return quantile(chi_square(1), 2.0 * p - 1.0)
    if fam in ("normal", "student_t") and p > 0.5:
        return -quantile(d, 1.0 - p)

    upper_side = p > 0.5
    target = 1.0 - p if upper_side else p

    def g(x):
        # increasing in x
        return target - sf(d, x) if upper_side else cdf(d, x) - target

    if fam in ("normal", "student_t"):
        lo, hi = -1.0, 0.0
        while g(lo) > 0:
            lo *= 2.0
    else:
        lo, hi = 0.0, 1.0
        while g(hi) < 0:
            lo, hi = hi, hi * 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def format_p(p: float | None, digits: int = 4) -> str:
    """Render a p-value; anything below 5e-5 shows as ``0.0000``."""
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return "."
    return f"{p:.{digits}f}"
