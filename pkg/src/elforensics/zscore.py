"""Finite-population (hypergeometric) Z-scores of each station's O within its center."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import Center, ElectionDataset, ForensicsError, StationRecord, derived_O
from .special import norm_ppf, norm_sf

DEFAULT_THRESHOLD = 3.9


class DegenerateStation(ForensicsError):
    pass


def station_z(station: StationRecord, center: Center) -> float:
    """Z = (O - p tau) / sqrt(p (1 - p) tau (v - tau) / (v - 1)).

    ``p`` is the center's O share including this station, ``tau`` the
    station's registered voters and ``v`` the center's.  The numerator is
    formed as ``(O v - sum(O) tau) / v`` so it is exact in integers.
    """
    if station not in center.stations:
        raise ValueError(f"{station.station_id} is not in center {center.center_id}")
    v = center.registered_total
    if len(center) < 2 or v < 2:
        raise DegenerateStation(f"center {center.center_id} needs two stations and v >= 2")
    total_O = sum(derived_O(s) for s in center.stations)
    tau = station.registered
    num = derived_O(station) * v - total_O * tau
    var = total_O * (v - total_O) * tau * (v - tau) / (v - 1)
    if var == 0:
        if num == 0:
            return 0.0
        raise DegenerateStation(f"station {station.station_id}: zero variance but O != p*tau")
    return num / math.sqrt(var)


def _z_chunk(O, tau, total_O, v):
    num = (O * v - total_O * tau).astype(np.float64)
    # int64 product stays exact, so paired stations get bitwise-equal |Z|
    var = (total_O * (v - total_O) * tau * (v - tau)).astype(np.float64) / (v - 1)
    bad = (var == 0) & (num != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, num / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
    return z, bad


@dataclass(frozen=True)
class ZScoreTable:
    station_id: np.ndarray
    center_id: np.ndarray
    O: np.ndarray
    expected: np.ndarray
    z: np.ndarray
    kappa_threshold: float = DEFAULT_THRESHOLD

    @cached_property
    def order(self) -> np.ndarray:
        """Indices by |Z| descending, ties by station_id ascending."""
        return np.lexsort((self.station_id, -np.abs(self.z)))

    @property
    def kappa(self) -> int:
        return int(np.count_nonzero(np.abs(self.z) > self.kappa_threshold))

    @property
    def outlier_mask(self) -> np.ndarray:
        return np.abs(self.z) > self.kappa_threshold

    def __len__(self) -> int:
        return len(self.z)

    @property
    def entries(self) -> list[tuple]:
        return list(
            zip(
                self.station_id.tolist(),
                self.center_id.tolist(),
                self.O.tolist(),
                self.expected.tolist(),
                self.z.tolist(),
            )
        )

    def with_threshold(self, threshold: float) -> "ZScoreTable":
        return ZScoreTable(self.station_id, self.center_id, self.O, self.expected, self.z, threshold)

    def summary(self, top: int = 20) -> dict:
        K = len(self.z)
        expected_kappa = float(2 * norm_sf(self.kappa_threshold) * K)
        top_idx = self.order[:top]
        return {
            "K": K,
            "kappa_threshold": self.kappa_threshold,
            "kappa": self.kappa,
            "expected_kappa": expected_kappa,
            "mean_z": float(np.mean(self.z)) if K else None,
            "var_z": float(np.var(self.z)) if K else None,
            "top_outliers": [
                {"station_id": str(self.station_id[i]), "center_id": str(self.center_id[i]),
                 "O": int(self.O[i]), "expected": float(self.expected[i]), "z": float(self.z[i])}
                for i in top_idx
            ],
        }


def z_table(ds: ElectionDataset, threshold: float = DEFAULT_THRESHOLD, threads: int = 1) -> ZScoreTable:
    """Z-score of every retained station.

    With ``threads > 1`` centers are split into contiguous chunks scored
    concurrently; the result is identical to the single-threaded one.
    """
    a = ds.arrays
    n_centers = len(ds.centers)
    O = a.O
    v_c = np.bincount(a.center_index, weights=a.registered, minlength=n_centers).astype(np.int64)
    O_c = np.bincount(a.center_index, weights=O, minlength=n_centers).astype(np.int64)
    if np.any(np.bincount(a.center_index, minlength=n_centers) < 2):
        raise DegenerateStation("every center needs at least two stations; clean the data first")
    v = v_c[a.center_index]
    total_O = O_c[a.center_index]

    if threads > 1 and len(O) > 1:
        bounds = np.linspace(0, len(O), threads + 1).astype(int)
        chunks = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: _z_chunk(O[s], a.registered[s], total_O[s], v[s]), chunks))
        z = np.concatenate([p[0] for p in parts])
        bad = np.concatenate([p[1] for p in parts])
    else:
        z, bad = _z_chunk(O, a.registered, total_O, v)
    if bad.any():
        sid = a.station_id[np.argmax(bad)]
        raise DegenerateStation(f"station {sid}: zero variance but O != p*tau")

    center_ids = np.array([c.center_id for c in ds.centers], dtype=str)[a.center_index]
    expected = total_O / v * a.registered
    return ZScoreTable(a.station_id, center_ids, O, expected, z, threshold)


def center_deviation_numerators(ds: ElectionDataset) -> list[list[int]]:
    """Per center, the exact integers ``v * (O_i - p tau_i)``."""
    out = []
    for c in ds.centers:
        v = c.registered_total
        total_O = sum(derived_O(s) for s in c.stations)
        out.append([derived_O(s) * v - total_O * s.registered for s in c.stations])
    return out


def normal_plot_data(table: ZScoreTable) -> list[tuple[float, float]]:
    """Sorted Z paired with normal quantiles at (i - 0.5) / n."""
    z = np.sort(table.z)
    n = len(z)
    q = norm_ppf((np.arange(1, n + 1) - 0.5) / n)
    return list(zip(q.tolist(), z.tolist()))
