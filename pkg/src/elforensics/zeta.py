"""Ordered-outlier bias test.

The ``k`` stations with the most extreme Z-scores form ``M_k``.  Under the
hypothesis that outliers are innocent and unbiased, their favorable ratio
``r_k`` differs from the population ratio ``R`` only by ratio-estimator noise,
so ``zeta_k = (r_k - R) / S_k`` stays roughly standard normal along k.  Long
runs of ``|zeta_k| > 3.9`` reject that hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .model import ElectionDataset, ForensicsError, population_ratio
from .special import two_sided_p
from .zscore import ZScoreTable

Scaling = Literal["population-mean", "sample-mean"]
SCALINGS = ("population-mean", "sample-mean")

BAND_9999 = (-3.9, 3.9)
BAND_99 = (-2.58, 2.58)
DEFAULT_K_MIN = 100
DEFAULT_RUN_THRESHOLD = 50

BIASED = "biased-count"
NO_EVIDENCE = "no-evidence"


class KOutOfRange(ForensicsError):
    pass


class ZeroValid(ForensicsError):
    pass


class IncompatibleRange(ForensicsError):
    pass


def m_k(table: ZScoreTable, k: int) -> np.ndarray:
    """Row indices (into the table / dataset arrays) of the k most extreme stations."""
    if not 1 <= k <= len(table):
        raise KOutOfRange(f"k={k} outside [1, {len(table)}]")
    return table.order[:k]


def ratio_k(ds: ElectionDataset, table: ZScoreTable, k: int) -> float:
    idx = m_k(table, k)
    T = int(ds.arrays.valid[idx].sum())
    if T == 0:
        raise ZeroValid(f"no valid votes among the {k} most extreme stations")
    return int(ds.arrays.favorable[idx].sum()) / T


@dataclass(frozen=True)
class ZetaPoint:
    k: int
    r_k: float
    s_k: float
    S_k: float
    zeta: float
    p_value: float
    zero_variance: bool = False


def _check_scaling(scaling: str) -> None:
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}, got {scaling!r}")


def _finish(k, K, r, R, s2, mu) -> tuple[float, float, float]:
    S = math.sqrt((1 - k / K) * s2 / (k * mu * mu))
    if S == 0.0:
        zeta = 0.0 if r == R else math.copysign(math.inf, r - R)
    else:
        zeta = (r - R) / S
    return math.sqrt(s2), S, zeta


def zeta_k(
    ds: ElectionDataset,
    table: ZScoreTable,
    k: int,
    scaling: Scaling = "population-mean",
    R: float | None = None,
) -> ZetaPoint:
    """Direct evaluation of r_k, s_k, S_k and zeta_k over M_k.

    ``s_k^2 = sum((W_i - r_k T_i)^2) / (k - 1)`` and
    ``S_k^2 = (1 - k/K) s_k^2 / (k mu^2)`` where ``mu`` is the mean valid
    votes per station over all K stations (population-mean) or over M_k
    (sample-mean).  A zero ``s_k`` yields ``zeta = 0`` when ``r_k == R`` and a
    signed infinity otherwise, with ``zero_variance`` set.
    """
    _check_scaling(scaling)
    K = len(table)
    if not 2 <= k < K:
        raise KOutOfRange(f"k={k} outside [2, {K - 1}]")
    a = ds.arrays
    R = population_ratio(ds) if R is None else R
    idx = m_k(table, k)
    W = a.favorable[idx].astype(float)
    T = a.valid[idx].astype(float)
    if T.sum() == 0:
        raise ZeroValid(f"no valid votes among the {k} most extreme stations")
    r = W.sum() / T.sum()
    s2 = float(np.sum((W - r * T) ** 2) / (k - 1))
    mu = a.valid.mean() if scaling == "population-mean" else T.mean()
    s, S, zeta = _finish(k, K, r, R, s2, mu)
    return ZetaPoint(k, r, s, S, zeta, float(two_sided_p(zeta)), S == 0.0)


@dataclass(frozen=True)
class ZetaSeries:
    k: np.ndarray
    r_k: np.ndarray
    s_k: np.ndarray
    S_k: np.ndarray
    zeta: np.ndarray
    p_value: np.ndarray
    zero_variance: np.ndarray
    R: float
    K: int
    scaling: str
    band_9999: tuple[float, float] = BAND_9999
    band_99: tuple[float, float] = BAND_99

    @property
    def k_min(self) -> int:
        return int(self.k[0])

    @property
    def k_max(self) -> int:
        return int(self.k[-1])

    @property
    def outside_9999(self) -> np.ndarray:
        return np.abs(self.zeta) > self.band_9999[1]

    @property
    def frac_outside_9999(self) -> float:
        return float(self.outside_9999.mean())

    @property
    def frac_outside_99(self) -> float:
        return float((np.abs(self.zeta) > self.band_99[1]).mean())

    @property
    def longest_excursion(self) -> int:
        return longest_run(self.outside_9999)

    @property
    def min_p_value(self) -> float:
        return float(self.p_value.min())

    def __len__(self) -> int:
        return len(self.k)

    def points(self) -> list[ZetaPoint]:
        return [
            ZetaPoint(int(k), float(r), float(s), float(S), float(z), float(p), bool(f))
            for k, r, s, S, z, p, f in zip(
                self.k, self.r_k, self.s_k, self.S_k, self.zeta, self.p_value, self.zero_variance
            )
        ]

    def restrict(self, k_min: int, k_max: int) -> "ZetaSeries":
        """Sub-series on ``k_min <= k <= k_max``."""
        keep = (self.k >= k_min) & (self.k <= k_max)
        if not keep.any():
            raise IncompatibleRange(f"no points in [{k_min}, {k_max}]")
        return ZetaSeries(
            self.k[keep], self.r_k[keep], self.s_k[keep], self.S_k[keep], self.zeta[keep],
            self.p_value[keep], self.zero_variance[keep], self.R, self.K, self.scaling,
            self.band_9999, self.band_99,
        )

    def summary(self) -> dict:
        return {
            "k_min": self.k_min,
            "k_max": self.k_max,
            "K": self.K,
            "R": self.R,
            "scaling": self.scaling,
            "band_9999": list(self.band_9999),
            "band_99": list(self.band_99),
            "frac_outside_9999": self.frac_outside_9999,
            "frac_outside_99": self.frac_outside_99,
            "longest_excursion": self.longest_excursion,
            "min_p_value": self.min_p_value,
            "max_abs_zeta": _json_float(float(np.max(np.abs(self.zeta)))),
            "zero_variance_points": int(self.zero_variance.sum()),
        }


def _json_float(x: float):
    return x if math.isfinite(x) else None


def longest_run(mask: np.ndarray) -> int:
    best = run = 0
    for flag in np.asarray(mask, dtype=bool).tolist():
        run = run + 1 if flag else 0
        best = max(best, run)
    return best


def default_k_max(K: int) -> int:
    return K // 2


def zeta_series(
    ds: ElectionDataset,
    table: ZScoreTable,
    k_min: int = DEFAULT_K_MIN,
    k_max: int | None = None,
    scaling: Scaling = "population-mean",
) -> ZetaSeries:
    """zeta_k for every integer ``k_min <= k <= k_max`` (default ``k_max = K // 2``).

    Uses prefix sums over the fixed |Z| order, so the whole series costs
    O(K).  Agrees with :func:`zeta_k` to rounding.
    """
    _check_scaling(scaling)
    K = len(table)
    k_max = default_k_max(K) if k_max is None else k_max
    if not (k_min >= 2 and k_max <= K - 1 and k_min < k_max):
        raise KOutOfRange(f"need 2 <= k_min < k_max <= K-1 (got {k_min}, {k_max}, K={K})")

    a = ds.arrays
    R = population_ratio(ds)
    order = table.order[:k_max]
    W = a.favorable[order]
    T = a.valid[order]
    # integer prefix sums are exact
    cW, cT = np.cumsum(W), np.cumsum(T)
    cWW, cWT, cTT = np.cumsum(W * W), np.cumsum(W * T), np.cumsum(T * T)

    ks = np.arange(k_min, k_max + 1)
    sel = ks - 1
    sumW, sumT = cW[sel].astype(float), cT[sel].astype(float)
    if np.any(sumT == 0):
        raise ZeroValid(f"no valid votes among the {int(ks[np.argmax(sumT == 0)])} most extreme stations")
    r = sumW / sumT
    ss = cWW[sel] - 2 * r * cWT[sel] + r * r * cTT[sel]
    s2 = np.maximum(ss, 0.0) / (ks - 1)
    mu = a.valid.mean() if scaling == "population-mean" else sumT / ks
    S = np.sqrt((1 - ks / K) * s2 / (ks * mu * mu))
    zero_var = S == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = (r - R) / S
    zeta = np.where(zero_var, np.where(r == R, 0.0, np.copysign(np.inf, r - R)), zeta)
    return ZetaSeries(ks, r, np.sqrt(s2), S, zeta, two_sided_p(zeta), zero_var, R, K, scaling)


@dataclass(frozen=True)
class Verdict:
    h1_rejected: bool
    group: str
    rationale: str
    run_threshold: int

    def to_dict(self) -> dict:
        return {
            "h1_rejected": self.h1_rejected,
            "group": self.group,
            "rationale": self.rationale,
            "run_threshold": self.run_threshold,
        }


def verdict(series: ZetaSeries, run_threshold: int = DEFAULT_RUN_THRESHOLD) -> Verdict:
    if len(series) == 0:
        raise ValueError("empty zeta series")
    run = series.longest_excursion
    rejected = run >= run_threshold
    lo, hi = series.band_9999
    rationale = (
        f"longest run of consecutive k with |zeta_k| > {hi}: {run} "
        f"(threshold {run_threshold}); {series.frac_outside_9999:.1%} of k in "
        f"[{series.k_min}, {series.k_max}] outside ({lo}, {hi}); "
        f"min p-value {series.min_p_value:.3g}"
    )
    return Verdict(rejected, BIASED if rejected else NO_EVIDENCE, rationale, run_threshold)
