"""SVG figures drawn from the CSV plot-data files.

Every figure reads an already-written CSV so it can be regenerated from the
report artifacts alone.
"""

from __future__ import annotations

import csv
import os
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date stamp keep SVG output byte-stable
matplotlib.rcParams["svg.hashsalt"] = "elforensics"
SVG_METADATA = {"Date": None, "Creator": None}


def _figure(width=6.4, height=None):
    golden_ratio = (5**0.5 - 1) / 2
    fig, ax = plt.subplots(figsize=(width, height or width * golden_ratio))
    return fig, ax


def _save(fig, out_path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return str(out_path)


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) if r[k] != "" else np.nan for r in rows]) for k in rows[0]}


def benford_figure(csv_path, out_path, title: str = "") -> str:
    d = read_csv_columns(csv_path)
    fig, ax = _figure()
    ax.bar(d["digit"], d["observed_freq"], color="0.75", label="observed")
    ax.plot(d["digit"], d["benford_freq"], "k--o", ms=4, label="second-digit law")
    ax.set_xticks(range(10))
    ax.set_xlabel("second significant digit of O")
    ax.set_ylabel("relative frequency")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, out_path)


def qq_figure(csv_path, out_path, title: str = "") -> str:
    d = read_csv_columns(csv_path)
    fig, ax = _figure()
    ax.plot(d["expected_quantile"], d["observed_z"], "+", color="k", ms=4, label="observed")
    lim = [d["expected_quantile"].min(), d["expected_quantile"].max()]
    ax.plot(lim, lim, "k--", lw=1, label="expected")
    ax.set_xlabel("standard normal quantile")
    ax.set_ylabel("Z-score")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, out_path)


def zeta_figure(series_csvs: Mapping[str, str], out_path, bands=(3.9, 2.58)) -> str:
    fig, ax = _figure(8)
    for label, path in series_csvs.items():
        d = read_csv_columns(path)
        ax.plot(d["k"], d["zeta_k"], lw=1, label=label)
    for b, style in zip(bands, ("-", ":")):
        ax.axhline(b, color="0.4", ls=style, lw=0.8)
        ax.axhline(-b, color="0.4", ls=style, lw=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel(r"$\zeta_k$")
    ax.legend(frameon=False, fontsize="small")
    return _save(fig, out_path)


def pvalue_figure(series_csvs: Mapping[str, str], out_path) -> str:
    fig, ax = _figure(8)
    for label, path in series_csvs.items():
        d = read_csv_columns(path)
        p = np.clip(d["p_value"], 1e-300, 1)
        ax.semilogy(d["k"], p, lw=1, label=label)
    ax.axhline(1e-6, color="0.4", ls=":", lw=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel(r"$P(|N(0,1)| > \zeta_k)$")
    ax.legend(frameon=False, fontsize="small")
    return _save(fig, out_path)
