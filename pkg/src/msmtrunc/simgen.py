"""Illness-death simulation scenarios with delayed entry and censoring.

States: 0 initial, 1 illness, 2 death (absorbing); no recovery. Latent
paths are generated on the full time axis, then study entry (left
truncation) and censoring are applied to obtain observed data.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from .core import CENSORED, Dataset, StateSpace

__all__ = [
    "ScenarioConfig",
    "LatentPaths",
    "simulate_latent",
    "sample_skew_normal",
    "skew_normal_mean",
    "apply_truncation",
    "apply_censoring",
    "simulate_study",
]

log = logging.getLogger(__name__)

ILLNESS_DEATH = StateSpace.illness_death()

MECHANISMS = ("independent", "constant_multiplier", "cox_sojourn", "gamma_frailty", "state_at_time")
TRUNCATIONS = ("none", "skew_normal", "uniform", "exponential")
CENSORINGS = ("none", "exponential", "type_ii")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation design.

    ``mechanism``, ``truncation`` and ``censoring`` are dicts with a ``kind``
    key plus parameters, e.g. ``{"kind": "gamma_frailty", "mean": 2,
    "variance": 2}``, ``{"kind": "skew_normal", "loc": 0, "scale": 10,
    "shape": 10}``, ``{"kind": "type_ii", "m": 50}``.
    """

    alpha01: float
    alpha02: float
    alpha12: float = 0.1
    mechanism: Mapping[str, Any] = field(default_factory=lambda: {"kind": "independent"})
    truncation: Mapping[str, Any] = field(default_factory=lambda: {"kind": "none"})
    censoring: Mapping[str, Any] = field(default_factory=lambda: {"kind": "none"})
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.alpha01 < 0 or self.alpha02 < 0 or self.alpha01 + self.alpha02 <= 0:
            raise ValueError("hazards out of the initial state must be nonnegative with positive sum")
        mech = self.mechanism.get("kind")
        if mech not in MECHANISMS:
            raise ValueError(f"unknown mechanism {mech!r}")
        if mech == "independent" and self.alpha12 <= 0:
            raise ValueError("alpha12 must be positive")
        if mech == "gamma_frailty" and not (self.mechanism["variance"] > 0 and self.mechanism["mean"] > 0):
            raise ValueError("frailty mean and variance must be positive")
        if mech == "cox_sojourn" and self.mechanism["alpha0"] <= 0:
            raise ValueError("alpha0 must be positive")
        if mech == "state_at_time" and not (self.mechanism["rate_low"] > 0 and self.mechanism["rate_high"] > 0):
            raise ValueError("state_at_time rates must be positive")
        trunc = self.truncation.get("kind")
        if trunc not in TRUNCATIONS:
            raise ValueError(f"unknown truncation {trunc!r}")
        if trunc == "skew_normal" and self.truncation["scale"] <= 0:
            raise ValueError("skew normal scale must be positive")
        if trunc == "uniform" and not self.truncation["a"] < self.truncation["b"]:
            raise ValueError("uniform truncation needs a < b")
        if trunc == "exponential" and self.truncation["rate"] <= 0:
            raise ValueError("truncation rate must be positive")
        cens = self.censoring.get("kind")
        if cens not in CENSORINGS:
            raise ValueError(f"unknown censoring {cens!r}")
        if cens == "exponential" and self.censoring["rate"] <= 0:
            raise ValueError("censoring rate must be positive")
        if cens == "type_ii" and not 1 <= self.censoring["m"] <= self.n:
            raise ValueError("type II censoring needs 1 <= m <= n")
        if self.n < 1:
            raise ValueError("n must be positive")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScenarioConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("mechanism", "truncation", "censoring"):
            d[k] = dict(d[k])
        return d

    def replace(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig.from_dict(d)


@dataclass(frozen=True)
class LatentPaths:
    """Complete illness-death paths; ``z1`` is NaN for direct 0 -> 2 paths."""

    z1: np.ndarray
    z2: np.ndarray
    frailty: np.ndarray

    @property
    def via_illness(self) -> np.ndarray:
        return ~np.isnan(self.z1)

    def __len__(self) -> int:
        return len(self.z2)


def gamma_shape_scale(mean: float, variance: float) -> tuple[float, float]:
    """Moment-matched gamma parameters: mean = k theta, variance = k theta^2."""
    return mean * mean / variance, variance / mean


def simulate_latent(config: ScenarioConfig, count: int, rng: np.random.Generator) -> LatentPaths:
    mech = config.mechanism
    kind = mech["kind"]
    if kind == "gamma_frailty":
        k, theta = gamma_shape_scale(mech["mean"], mech["variance"])
        frailty = rng.gamma(k, theta, size=count)
    else:
        frailty = np.ones(count)
    total = config.alpha01 + config.alpha02
    sojourn0 = rng.exponential(1.0, size=count) / (frailty * total)
    ill = rng.random(count) < config.alpha01 / total
    e1 = rng.exponential(1.0, size=count)
    z1 = np.where(ill, sojourn0, np.nan)
    if kind in ("independent", "gamma_frailty"):
        stay1 = e1 / (frailty * config.alpha12)
    elif kind == "constant_multiplier":
        stay1 = mech["d"] * sojourn0
    elif kind == "cox_sojourn":
        stay1 = e1 / (mech["alpha0"] * np.exp(mech["beta"] * sojourn0))
    elif kind == "state_at_time":
        stay1 = _state_at_time_sojourn(sojourn0, e1, mech)
    else:  # pragma: no cover - validated in ScenarioConfig
        raise ValueError(kind)
    z2 = np.where(ill, sojourn0 + stay1, sojourn0)
    return LatentPaths(z1, z2, frailty)


def _state_at_time_sojourn(z1: np.ndarray, e: np.ndarray, mech: Mapping[str, Any]) -> np.ndarray:
    """Illness sojourn when the 1 -> 2 hazard depends on the state at ``t_star``.

    Still in state 0 at ``t_star`` (illness after it): ``rate_low`` throughout.
    Ill by ``t_star``: ``rate_high`` throughout, unless ``reading`` is
    ``"piecewise"``, in which case ``rate_low`` applies up to ``t_star`` and
    ``rate_high`` after it.
    """
    t_star, low, high = mech["t_star"], mech["rate_low"], mech["rate_high"]
    early = z1 <= t_star
    stay = e / low
    if mech.get("reading", "classified") == "piecewise":
        h_before = low * (t_star - z1)
        late_exit = t_star - z1 + (e - h_before) / high
        stay = np.where(early & (e > h_before), late_exit, stay)
    else:
        stay = np.where(early, e / high, stay)
    return stay


def sample_skew_normal(loc: float, scale: float, shape: float, count: int,
                       rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Skew-normal draws via the conditioning representation."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(rng)
    delta = shape / math.sqrt(1.0 + shape * shape)
    u0 = rng.standard_normal(count)
    v = rng.standard_normal(count)
    u1 = delta * u0 + math.sqrt(1.0 - delta * delta) * v
    return loc + scale * np.where(u0 >= 0, u1, -u1)


def skew_normal_mean(loc: float, scale: float, shape: float) -> float:
    delta = shape / math.sqrt(1.0 + shape * shape)
    return loc + scale * delta * math.sqrt(2.0 / math.pi)


def draw_truncation(truncation: Mapping[str, Any], count: int, rng: np.random.Generator) -> np.ndarray:
    kind = truncation["kind"]
    if kind == "none":
        return np.zeros(count)
    if kind == "skew_normal":
        return sample_skew_normal(truncation["loc"], truncation["scale"], truncation["shape"], count, rng)
    if kind == "uniform":
        return rng.uniform(truncation["a"], truncation["b"], size=count)
    if kind == "exponential":
        return rng.exponential(1.0 / truncation["rate"], size=count)
    raise ValueError(f"unknown truncation {kind!r}")


def paths_to_dataset(paths: LatentPaths, entry: np.ndarray, id_offset: int = 0) -> Dataset:
    """Observed records of the included paths (``entry < z2``) from ``entry`` on."""
    entry = np.maximum(np.asarray(entry, dtype=float), 0.0)
    keep = entry < paths.z2
    idx = np.flatnonzero(keep)
    L = entry[idx]
    z1 = paths.z1[idx]
    z2 = paths.z2[idx]
    via = ~np.isnan(z1)
    two = via & (z1 > L)
    n = len(idx)
    nrec = np.where(two, 2, 1)
    subj = np.repeat(np.arange(n), nrec)
    first = (np.cumsum(nrec) - nrec).astype(np.int64)
    tot = int(nrec.sum())
    frm = np.zeros(tot, dtype=np.int64)
    to = np.full(tot, 2, dtype=np.int64)
    ent = np.empty(tot)
    ext = np.empty(tot)
    # first record of every subject
    frm[first] = np.where(via & ~two, 1, 0)
    to[first] = np.where(two, 1, 2)
    ent[first] = L
    ext[first] = np.where(two, z1, z2)
    second = first[two] + 1
    frm[second] = 1
    ent[second] = z1[two]
    ext[second] = z2[two]
    ids = [str(id_offset + int(i)) for i in idx]
    return Dataset(ILLNESS_DEATH, ids, subj, frm, to, ent, ext, validate=False)


def apply_truncation(paths: LatentPaths, truncation: Mapping[str, Any],
                     rng: np.random.Generator) -> Dataset:
    """Draw entry times, keep subjects still alive at entry, discard history before entry."""
    return paths_to_dataset(paths, draw_truncation(truncation, len(paths), rng))


def _censor_at(data: Dataset, c: np.ndarray) -> Dataset:
    """Right-censor subject k at ``c[k]``; subjects with ``c <= entry`` are dropped."""
    c_rec = c[data.rec_subject]
    keep = data.rec_entry < c_rec
    cut = keep & (c_rec < data.rec_exit)
    to = np.where(cut, CENSORED, data.rec_to)
    ext = np.where(cut, c_rec, data.rec_exit)
    subj_keep = np.zeros(data.n, dtype=bool)
    subj_keep[data.rec_subject[keep]] = True
    new_index = np.cumsum(subj_keep) - 1
    ids = [sid for sid, k in zip(data.subject_ids, subj_keep) if k]
    return Dataset(data.state_space, ids, new_index[data.rec_subject[keep]], data.rec_from[keep],
                   to[keep], data.rec_entry[keep], ext[keep], validate=False)


def type_ii_time(data: Dataset, m: int) -> float | None:
    """Time of the m-th observed entry into an absorbing state, None if fewer."""
    absorbing = np.isin(data.rec_to, list(data.state_space.absorbing))
    times = np.sort(data.rec_exit[absorbing])
    return float(times[m - 1]) if len(times) >= m else None


def apply_censoring(data: Dataset, censoring: Mapping[str, Any],
                    rng: np.random.Generator | None = None) -> Dataset:
    """Random exponential censoring per subject, or event-driven type II censoring."""
    kind = censoring["kind"]
    if kind == "none":
        return data
    if kind == "exponential":
        c = np.random.default_rng(rng).exponential(1.0 / censoring["rate"], size=data.n)
        return _censor_at(data, c)
    if kind == "type_ii":
        tau = type_ii_time(data, censoring["m"])
        if tau is None:
            log.warning("type II censoring: fewer than %d events observed, nobody censored",
                        censoring["m"])
            return data
        return _censor_at(data, np.full(data.n, tau))
    raise ValueError(f"unknown censoring {kind!r}")


def simulate_study(config: ScenarioConfig, rng: np.random.Generator | int | None = None) -> Dataset:
    """One simulated study of ``config.n`` latent subjects (fewer are observed under truncation)."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    paths = simulate_latent(config, config.n, rng)
    data = apply_truncation(paths, config.truncation, rng)
    return apply_censoring(data, config.censoring, rng)
