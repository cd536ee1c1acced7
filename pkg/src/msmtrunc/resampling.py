"""Efron and wild bootstrap, and standardized bootstrap quantile intervals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset, EventTable
from .estimators import NotEstimableError, batched_product, nelson_aalen

__all__ = [
    "BootstrapSample",
    "ConfidenceInterval",
    "DegenerateSampleError",
    "efron_indices",
    "efron_bootstrap",
    "wild_multipliers",
    "wild_bootstrap_nelson_aalen",
    "wild_bootstrap_transition_probability",
    "standardized_quantile_ci",
]

log = logging.getLogger(__name__)

DEFAULT_B = 1000
UNRELIABLE_DROP_FRACTION = 0.10


class DegenerateSampleError(ValueError):
    """Bootstrap replicates have zero spread."""


@dataclass(frozen=True)
class BootstrapSample:
    """Bootstrap replicates of a scalar, vector or step-function statistic.

    ``replicates`` has shape (B, ...). Rows of not-estimable replicates are NaN.
    For the wild bootstrap the replicates are perturbations around the point
    estimate and ``centered`` is true.
    """

    replicates: np.ndarray
    method: str
    seed: int
    B: int
    centered: bool = False
    times: np.ndarray | None = None
    dropped: int = 0

    @property
    def unreliable(self) -> bool:
        return self.dropped > UNRELIABLE_DROP_FRACTION * self.B

    def column(self, k: int = 0) -> np.ndarray:
        r = self.replicates
        return r if r.ndim == 1 else r.reshape(self.B, -1)[:, k]


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    point: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


# Efron --------------------------------------------------------------------------------

def efron_indices(n: int, B: int, seed) -> np.ndarray:
    """Resampled subject indices, shape (B, n), drawn from one seeded stream."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, n, size=(B, n))


def efron_bootstrap(data: Dataset, statistic: Callable, B: int = DEFAULT_B, seed=0) -> BootstrapSample:
    """Resample subjects with replacement and evaluate ``statistic`` on each resample.

    ``statistic(dataset)`` returns a scalar or array, or raises
    :class:`NotEstimableError`. A statistic with a ``weighted(data, counts)``
    method is evaluated on all resamples at once from the (B, n) matrix of
    subject multiplicities instead; both routes see the same resamples.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if data.n == 0:
        raise NotEstimableError("cannot resample an empty dataset")
    idx = efron_indices(data.n, B, seed)
    if hasattr(statistic, "weighted"):
        counts = np.stack([np.bincount(row, minlength=data.n) for row in idx]).astype(float)
        reps = np.asarray(statistic.weighted(data, counts), dtype=float)
    else:
        out = []
        for row in idx:
            try:
                out.append(np.asarray(statistic(data.take(row, relabel=True)), dtype=float))
            except NotEstimableError:
                out.append(None)
        shape = next((o.shape for o in out if o is not None), None)
        if shape is None:
            raise NotEstimableError("statistic not estimable on any bootstrap resample")
        reps = np.stack([np.full(shape, np.nan) if o is None else o for o in out])
    bad = np.isnan(reps.reshape(B, -1)).all(axis=1)
    if bad.all():
        raise NotEstimableError("statistic not estimable on any bootstrap resample")
    sample = BootstrapSample(reps, "efron", _seed_repr(seed), B, dropped=int(bad.sum()))
    if sample.unreliable:
        log.warning("%d of %d bootstrap replicates not estimable", sample.dropped, B)
    return sample


def _seed_repr(seed) -> int:
    return seed if isinstance(seed, int) else -1


# wild bootstrap -------------------------------------------------------------------------

def wild_multipliers(n: int, B: int, seed) -> np.ndarray:
    """Standard normal multipliers, one per subject and replicate, shape (B, n)."""
    return np.random.default_rng(seed).standard_normal((B, n))


def _na_perturbations(table: EventTable, l: int, m: int, G: np.ndarray) -> np.ndarray:
    """Per-replicate increments of A*_lm - A_lm on the table's time grid, shape (B, J)."""
    sel = (table.event_from == l) & (table.event_to == m)
    j = table.event_time_index[sel]
    y = table.at_risk[j, l].astype(float)
    contrib = G[:, table.event_subject[sel]] / y
    J = len(table.times)
    out = np.zeros((G.shape[0], J))
    np.add.at(out.T, j, contrib.T)
    return out


def wild_bootstrap_nelson_aalen(table: EventTable, transition: tuple[int, int], B: int = DEFAULT_B,
                                seed=0, multipliers: np.ndarray | None = None) -> BootstrapSample:
    """Wild bootstrap of the Nelson-Aalen estimator of one transition.

    Each replicate draws a standard normal multiplier per subject and returns
    the step function sum_i G_i * int J_l/Y_l dN_i;lm, i.e. A* - A evaluated at
    the table's jump times (shape (B, J)). Counting and at-risk processes are
    held fixed.
    """
    l, m = transition
    G = wild_multipliers(table.n, B, seed) if multipliers is None else np.asarray(multipliers, float)
    if G.shape[1] != table.n:
        raise ValueError("need one multiplier column per subject")
    steps = np.cumsum(_na_perturbations(table, l, m, G), axis=1)
    return BootstrapSample(steps, "wild", _seed_repr(seed), G.shape[0], centered=True,
                           times=table.times)


def wild_bootstrap_transition_probability(table: EventTable, s: float, t: float, B: int = DEFAULT_B,
                                          seed=0, multipliers: np.ndarray | None = None
                                          ) -> BootstrapSample:
    """Wild bootstrap of the Aalen-Johansen matrix P(s, t).

    The perturbed cumulative hazards dA* - dA are mapped through the
    functional derivative of the product integral,
    sum_u P(s, u-) (dA*(u) - dA(u)) P(u, t). Replicates are perturbations of
    shape (B, S, S).
    """
    if s > t:
        raise ValueError("need s <= t")
    G = wild_multipliers(table.n, B, seed) if multipliers is None else np.asarray(multipliers, float)
    haz = nelson_aalen(table)
    S = table.num_states
    lo = np.searchsorted(table.times, s, side="right")
    hi = np.searchsorted(table.times, t, side="right")
    idx = np.arange(lo, hi)
    Bn = G.shape[0]
    dpert = np.zeros((Bn, len(idx), S, S))
    for (l, m) in table.state_space.allowed_transitions:
        inc = _na_perturbations(table, l, m, G)[:, lo:hi]
        dpert[:, :, l, m] += inc
        dpert[:, :, l, l] -= inc
    mats = np.eye(S) + haz.increments[idx]
    before = np.empty((len(idx), S, S))
    after = np.empty((len(idx), S, S))
    acc = np.eye(S)
    for k in range(len(idx)):
        before[k] = acc
        acc = acc @ mats[k]
    acc = np.eye(S)
    for k in range(len(idx) - 1, -1, -1):
        after[k] = acc
        acc = mats[k] @ acc
    pert = np.einsum("kab,nkbc,kcd->nad", before, dpert, after) if len(idx) else np.zeros((Bn, S, S))
    return BootstrapSample(pert, "wild", _seed_repr(seed), Bn, centered=True)


# intervals --------------------------------------------------------------------------------

def _quantile(x: np.ndarray, p: float) -> float:
    """Lower inverse-ECDF quantile: the ceil(p * B)-th order statistic."""
    xs = np.sort(x)
    k = max(int(math.ceil(p * len(xs) - 1e-12)), 1)
    return float(xs[min(k, len(xs)) - 1])


def standardized_quantile_ci(sample: BootstrapSample | np.ndarray, point: float, n: int,
                             level: float = 0.95, bounds: tuple[float, float] | None = (0.0, 1.0),
                             form: str = "asymmetric") -> ConfidenceInterval:
    """Interval from the quantiles of W* = sqrt(n) (theta* - theta) / sigma*.

    ``sample`` holds bootstrap replicates theta* of a scalar (or, for a
    centered wild bootstrap sample, the perturbations theta* - theta).

    ``form="asymmetric"`` gives
    [theta - q(1 - a/2) sigma / sqrt(n), theta - q(a/2) sigma / sqrt(n)];
    ``form="symmetric"`` puts the (1 - a/2)-quantile of W* in place of the
    normal quantile: theta -/+ q(1 - a/2) sigma / sqrt(n).
    ``bounds`` clamps the result to the statistic's natural range; pass
    ``(0, inf)`` for cumulative hazards.
    """
    if form not in ("asymmetric", "symmetric"):
        raise ValueError(f"unknown interval form {form!r}")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    if isinstance(sample, BootstrapSample):
        reps = np.asarray(sample.replicates, dtype=float).ravel()
        if sample.centered:
            reps = point + reps
    else:
        reps = np.asarray(sample, dtype=float).ravel()
    reps = reps[~np.isnan(reps)]
    if len(reps) < 2:
        raise DegenerateSampleError("need at least two estimable replicates")
    sigma = float(np.std(reps, ddof=1))
    if np.all(reps == reps[0]) or not sigma > 0:
        raise DegenerateSampleError("bootstrap replicates have zero spread")
    root_n = math.sqrt(n)
    w = root_n * (reps - point) / sigma
    alpha = 1.0 - level
    q_hi = _quantile(w, 1 - alpha / 2)
    q_lo = _quantile(w, alpha / 2)
    lower = point - q_hi * sigma / root_n
    if form == "asymmetric":
        upper = point - q_lo * sigma / root_n
    else:
        upper = point + q_hi * sigma / root_n
    if bounds is not None:
        lower = min(max(lower, bounds[0]), bounds[1])
        upper = min(max(upper, bounds[0]), bounds[1])
    lower, upper = min(lower, point), max(upper, point)
    return ConfidenceInterval(lower, upper, level, point)
