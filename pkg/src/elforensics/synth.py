"""Synthetic elections with known ground truth.

Clean phase: every center draws an abstention+null probability ``alpha_c``
and a favorable share ``pi_c``; each of a station's ``tau`` registered voters
independently lands in O with probability ``alpha_c`` and otherwise votes
favorable with probability ``pi_c``.  A fixed ``null_share`` of O are null
ballots, the rest abstentions.

Injection phase (optional):

* ``type_c`` converts abstentions into favorable votes at the targeted
  stations, so favorable rises and O falls at each of them.
* ``type_b`` pairs stations inside a targeted center and has voters
  registered at one station cast their ballots at the other.  Each station
  gains or loses valid votes in its own favorable ratio, so per-station
  shares are preserved up to rounding while Z-scores move.

Random streams come from NumPy's Philox (a counter-based generator).  Each
center gets its own stream keyed by ``SeedSequence(seed, spawn_key=(index,))``
and injection uses ``spawn_key=(2**32,)``, so output depends only on
``(seed, config)``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any

import numpy as np

from .ingest import CleaningOptions, clean
from .model import ElectionDataset, ForensicsError, StationRecord

INJECTION_STREAM = 2**32
KINDS = ("none", "type_b", "type_c")
TARGETINGS = ("auto", "uniform", "high-support", "low-support")


class ConfigInvalid(ForensicsError):
    pass


class MismatchedPair(ForensicsError):
    pass


def load_defaults() -> dict:
    text = resources.files("elforensics").joinpath("data/generator_defaults.json").read_text()
    return json.loads(text)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        # distribution specs are replaced whole; the injection plan is merged
        if key == "injection" and isinstance(value, dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def _draw(dist: dict, rng: np.random.Generator, size=None):
    kind = dist["kind"]
    if kind == "uniform_int":
        return rng.integers(dist["low"], dist["high"], size=size, endpoint=True)
    if kind == "constant":
        return np.full(size, dist["value"]) if size is not None else dist["value"]
    if kind == "loguniform":
        return np.exp(rng.uniform(math.log(dist["low"]), math.log(dist["high"]), size=size))
    if kind == "beta":
        m, c = dist["mean"], dist["concentration"]
        return rng.beta(m * c, (1 - m) * c, size=size)
    if kind == "uniform":
        return rng.uniform(dist["low"], dist["high"], size=size)
    raise ConfigInvalid(f"unknown distribution kind {kind!r}")


def _support(dist: dict) -> tuple[float, float]:
    kind = dist.get("kind")
    if kind in ("uniform_int", "loguniform", "uniform"):
        return dist["low"], dist["high"]
    if kind == "constant":
        return dist["value"], dist["value"]
    if kind == "beta":
        return (0.0, 1.0) if 0 < dist["mean"] < 1 and dist["concentration"] > 0 else (-1.0, -1.0)
    raise ConfigInvalid(f"unknown distribution kind {kind!r}")


@dataclass(frozen=True)
class InjectionPlan:
    kind: str = "none"
    target_fraction: float = 0.0
    targeting: str = "auto"
    shift_strength: float = 0.8
    # when set, type-C shifts are sized to move each station's deviation by this many null sds
    shift_sd: float | None = None
    relocation_strength: float = 0.15

    @property
    def resolved_targeting(self) -> str:
        if self.targeting != "auto":
            return self.targeting
        return "high-support" if self.kind == "type_b" else "uniform"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigInvalid(f"injection kind must be one of {KINDS}")
        if self.targeting not in TARGETINGS:
            raise ConfigInvalid(f"targeting must be one of {TARGETINGS}")
        for name in ("target_fraction", "shift_strength", "relocation_strength"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigInvalid(f"{name} must lie in [0, 1]")
        if self.shift_sd is not None and self.shift_sd <= 0:
            raise ConfigInvalid("shift_sd must be positive")


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_centers: int = 1000
    stations_per_center: dict = field(default_factory=lambda: {"kind": "uniform_int", "low": 2, "high": 10})
    registered_per_station: dict = field(default_factory=lambda: {"kind": "uniform_int", "low": 200, "high": 600})
    alpha_center: dict = field(default_factory=lambda: {"kind": "loguniform", "low": 0.08, "high": 0.8})
    pi_center: dict = field(default_factory=lambda: {"kind": "beta", "mean": 0.6, "concentration": 100})
    null_share: float = 0.05
    injection: InjectionPlan = field(default_factory=InjectionPlan)
    election_id: str | None = None

    @classmethod
    def from_dict(cls, overrides: dict | None = None) -> "GeneratorConfig":
        """Build a config from the packaged defaults updated with ``overrides``."""
        d = _merge(load_defaults(), overrides or {})
        d.pop("schema_version", None)
        inj = d.pop("injection")
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(injection=InjectionPlan(**inj), **d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = 1
        return d

    def replace(self, **changes) -> "GeneratorConfig":
        d = asdict(self)
        if "injection" in changes and isinstance(changes["injection"], dict):
            changes["injection"] = {**d["injection"], **changes["injection"]}
        d.update(changes)
        d["injection"] = InjectionPlan(**d["injection"]) if isinstance(d["injection"], dict) else d["injection"]
        cfg = GeneratorConfig(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed must be a 64-bit unsigned integer")
        if self.n_centers < 1:
            raise ConfigInvalid("n_centers must be positive")
        lo, _ = _support(self.stations_per_center)
        if lo < 2:
            raise ConfigInvalid("stations_per_center must have minimum >= 2")
        lo, _ = _support(self.registered_per_station)
        if lo < 1:
            raise ConfigInvalid("registered_per_station must be positive")
        for name in ("alpha_center", "pi_center"):
            dist = getattr(self, name)
            lo, hi = _support(dist)
            if dist["kind"] == "beta":
                ok = lo == 0.0 and hi == 1.0
            else:
                ok = 0 < lo <= hi < 1
            if not ok:
                raise ConfigInvalid(f"{name} must be supported on (0, 1)")
        if not 0 <= self.null_share < 1:
            raise ConfigInvalid("null_share must lie in [0, 1)")
        self.injection.validate()


@dataclass(frozen=True)
class GroundTruth:
    kind: str
    rho_true: float
    injected_station_ids: tuple[str, ...]
    realized_beta: float
    K: int
    station_ids: tuple[str, ...]
    pre_registered: tuple[int, ...]
    pre_valid: tuple[int, ...]
    pre_favorable: tuple[int, ...]
    pre_null_votes: tuple[int, ...]
    election_id: str = ""
    center_alpha: tuple[float, ...] = ()
    center_pi: tuple[float, ...] = ()

    @property
    def pre_totals(self) -> dict:
        return {
            "registered": sum(self.pre_registered),
            "valid": sum(self.pre_valid),
            "favorable": sum(self.pre_favorable),
            "null_votes": sum(self.pre_null_votes),
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "election_id": self.election_id,
            "kind": self.kind,
            "rho_true": self.rho_true,
            "realized_beta": self.realized_beta,
            "K": self.K,
            "injected_station_ids": list(self.injected_station_ids),
            "pre_injection_totals": self.pre_totals,
            "pre_injection_stations": {
                "station_id": list(self.station_ids),
                "registered": list(self.pre_registered),
                "valid": list(self.pre_valid),
                "favorable": list(self.pre_favorable),
                "null_votes": list(self.pre_null_votes),
            },
            "center_alpha": list(self.center_alpha),
            "center_pi": list(self.center_pi),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        st = d["pre_injection_stations"]
        return cls(
            kind=d["kind"],
            rho_true=d["rho_true"],
            injected_station_ids=tuple(d["injected_station_ids"]),
            realized_beta=d["realized_beta"],
            K=d["K"],
            station_ids=tuple(st["station_id"]),
            pre_registered=tuple(st["registered"]),
            pre_valid=tuple(st["valid"]),
            pre_favorable=tuple(st["favorable"]),
            pre_null_votes=tuple(st["null_votes"]),
            election_id=d.get("election_id", ""),
            center_alpha=tuple(d.get("center_alpha", ())),
            center_pi=tuple(d.get("center_pi", ())),
        )


def _center_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _clean_phase(cfg: GeneratorConfig):
    center, reg, O, null, fav = [], [], [], [], []
    alphas, pis = [], []
    for c in range(cfg.n_centers):
        rng = _center_rng(cfg.seed, c)
        n = int(_draw(cfg.stations_per_center, rng))
        alpha = float(_draw(cfg.alpha_center, rng))
        pi = float(_draw(cfg.pi_center, rng))
        tau = np.asarray(_draw(cfg.registered_per_station, rng, size=n), dtype=np.int64)
        o = rng.binomial(tau, alpha)
        nv = rng.binomial(o, cfg.null_share)
        # keep at least one ballot so no station is degenerate
        o = np.where((o == tau) & (nv == 0), tau - 1, o)
        w = rng.binomial(tau - o, pi)
        center.append(np.full(n, c))
        reg.append(tau)
        O.append(o)
        null.append(nv)
        fav.append(w)
        alphas.append(alpha)
        pis.append(pi)
    cat = np.concatenate
    return cat(center), cat(reg), cat(O), cat(null), cat(fav), np.array(alphas), np.array(pis)


def _targets(plan: InjectionPlan, center_of: np.ndarray, pis: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    targeting = plan.resolved_targeting
    if targeting == "uniform":
        return eligible
    median = np.median(pis)
    keep = pis[center_of] >= median if targeting == "high-support" else pis[center_of] <= median
    return eligible & keep


def _inject_c(plan, rng, center_of, reg, O, null, fav, pis):
    K = len(reg)
    abst = O - null
    pool = np.flatnonzero(_targets(plan, center_of, pis, abst >= 1))
    n_target = round(plan.target_fraction * K)
    if n_target > len(pool):
        raise ConfigInvalid(f"only {len(pool)} stations eligible for {n_target} type-C injections")
    chosen = np.sort(rng.choice(pool, size=n_target, replace=False)) if n_target else np.array([], dtype=np.int64)
    if plan.shift_sd is not None:
        v = np.bincount(center_of, weights=reg).astype(np.int64)[center_of]
        tot = np.bincount(center_of, weights=O).astype(np.int64)[center_of]
        p = tot / v
        sd = np.sqrt(p * (1 - p) * reg * (v - reg) / (v - 1))
        # the station's deviation O - p*tau moves by s * (1 - tau/v) per converted vote
        shift = np.ceil(plan.shift_sd * sd / (1 - reg / v)).astype(np.int64)
    else:
        shift = np.rint(plan.shift_strength * O).astype(np.int64)
    s = np.clip(shift[chosen], 1, abst[chosen])
    O, fav = O.copy(), fav.copy()
    O[chosen] -= s
    fav[chosen] += s
    return chosen, O, fav


def _inject_b(plan, rng, center_of, reg, O, null, fav, pis):
    K = len(reg)
    n_pairs = round(plan.target_fraction * K) // 2
    mask = _targets(plan, center_of, pis, np.ones(K, dtype=bool))
    pairs = []
    for c in np.unique(center_of[mask]):
        members = rng.permutation(np.flatnonzero(center_of == c))
        pairs.extend(zip(members[0::2], members[1::2]))
    if n_pairs > len(pairs):
        raise ConfigInvalid(f"only {len(pairs)} station pairs available for {n_pairs} type-B relocations")
    pairs = [pairs[i] for i in rng.permutation(len(pairs))[:n_pairs]]

    valid = reg - O
    O, fav = O.copy(), fav.copy()
    chosen = []
    for a, b in pairs:
        Ta, Tb = int(valid[a]), int(valid[b])
        room_b = int(O[b] - null[b])  # abstainers at b whose slots can be filled
        m = min(round(plan.relocation_strength * int(reg[a])), Ta - 1, room_b)
        if m < 1:
            continue
        fav[a] = round(int(fav[a]) * (Ta - m) / Ta)
        fav[b] = round(int(fav[b]) * (Tb + m) / Tb) if Tb else 0
        O[a] += m
        O[b] -= m
        chosen.extend((a, b))
    return np.sort(np.array(chosen, dtype=np.int64)), O, fav


def generate(config: GeneratorConfig) -> tuple[ElectionDataset, GroundTruth]:
    """Draw one synthetic election; returns the cleaned dataset and its ground truth."""
    config.validate()
    center_of, reg, O, null, fav, alphas, pis = _clean_phase(config)
    K = len(reg)
    station_ids = [f"S{c:06d}-{j:02d}" for c, j in zip(center_of.tolist(), _within_center_index(center_of))]
    pre = (reg.copy(), reg - O, fav.copy(), null.copy())
    rho_true = int(fav.sum()) / int((reg - O).sum())

    plan = config.injection
    chosen = np.array([], dtype=np.int64)
    if plan.kind != "none" and plan.target_fraction > 0:
        rng = _center_rng(config.seed, INJECTION_STREAM)
        inject = _inject_c if plan.kind == "type_c" else _inject_b
        chosen, O, fav = inject(plan, rng, center_of, reg, O, null, fav, pis)

    valid = reg - O
    records = [
        StationRecord(sid, f"C{c:06d}", int(t), int(v), int(w), int(n))
        for sid, c, t, v, w, n in zip(station_ids, center_of.tolist(), reg, valid, fav, null)
    ]
    election_id = config.election_id or f"synthetic-{config.seed}"
    ds = clean(records, CleaningOptions(exclude_manual=True), election_id)
    truth = GroundTruth(
        kind=plan.kind,
        rho_true=rho_true,
        injected_station_ids=tuple(station_ids[i] for i in chosen.tolist()),
        realized_beta=len(chosen) / K,
        K=K,
        station_ids=tuple(station_ids),
        pre_registered=tuple(pre[0].tolist()),
        pre_valid=tuple(pre[1].tolist()),
        pre_favorable=tuple(pre[2].tolist()),
        pre_null_votes=tuple(pre[3].tolist()),
        election_id=election_id,
        center_alpha=tuple(alphas.tolist()),
        center_pi=tuple(pis.tolist()),
    )
    return ds, truth


def _within_center_index(center_of: np.ndarray) -> list[int]:
    out, prev, j = [], None, 0
    for c in center_of.tolist():
        j = j + 1 if c == prev else 0
        prev = c
        out.append(j)
    return out


@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    checked: int
    failures: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "checked": self.checked, "failures": [list(f) for f in self.failures]}


def replay_check(ds: ElectionDataset, truth: GroundTruth) -> ReplayReport:
    """Check an emitted dataset against its ground truth.

    Untouched stations must equal their pre-injection tallies; type-B
    stations must keep W/T within 1/T and type-C stations must show more
    favorable votes and less O.  Registered and null counts never change.
    """
    if ds.election_id != truth.election_id:
        raise MismatchedPair(f"dataset {ds.election_id!r} vs truth {truth.election_id!r}")
    by_id = {s.station_id: s for s in ds.stations}
    if set(by_id) != set(truth.station_ids):
        raise MismatchedPair("station ids differ between dataset and ground truth")
    injected = set(truth.injected_station_ids)
    failures = []
    for i, sid in enumerate(truth.station_ids):
        s = by_id[sid]
        reg, valid, fav, null = (
            truth.pre_registered[i], truth.pre_valid[i], truth.pre_favorable[i], truth.pre_null_votes[i],
        )
        if s.registered != reg or s.null_votes != null:
            failures.append((sid, "registered or null count changed"))
        elif sid not in injected:
            if (s.valid, s.favorable) != (valid, fav):
                failures.append((sid, "untouched station differs from pre-injection tally"))
        elif truth.kind == "type_c":
            if not (s.favorable > fav and s.registered - s.valid < reg - valid):
                failures.append((sid, "type-C station without favorable gain and O loss"))
        elif truth.kind == "type_b":
            if valid == 0 or s.valid == 0:
                failures.append((sid, "type-B station with zero valid votes"))
            elif abs(fav / valid - s.favorable / s.valid) > 1 / s.valid:
                failures.append((sid, "type-B station share moved beyond rounding"))
        else:
            failures.append((sid, f"injected station under kind {truth.kind!r}"))
    return ReplayReport(not failures, len(truth.station_ids), tuple(failures))
