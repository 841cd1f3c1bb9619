"""Normal and chi-square distribution functions.

Thin wrappers over :mod:`scipy.special` so the rest of the package has one
place to get tail probabilities that stay accurate far into the tails.
"""

import numpy as np
from scipy import special

SQRT2 = np.sqrt(2.0)

# p-values under this are reported as exactly zero
PVALUE_FLOOR = 1e-300


def norm_cdf(x):
    """Standard normal CDF, accurate in both tails."""
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def norm_ppf(q):
    """Inverse of :func:`norm_cdf`."""
    return special.ndtri(q)


def norm_isf(q):
    return -special.ndtri(q)


def two_sided_p(z):
    """``P(|N(0,1)| > |z|)``."""
    return special.erfc(np.abs(z) / SQRT2)


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution (regularized upper incomplete gamma)."""
    if x <= 0:
        return 1.0
    p = float(special.gammaincc(df / 2.0, x / 2.0))
    return 0.0 if p < PVALUE_FLOOR else p
