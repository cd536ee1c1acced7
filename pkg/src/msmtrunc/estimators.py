"""Nelson-Aalen, Aalen-Johansen and landmark Aalen-Johansen estimators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CENSORED, Dataset, EventTable, build_event_table, landmark_subset

__all__ = [
    "NotEstimableError",
    "CumulativeHazardMatrix",
    "ProbabilityCurve",
    "nelson_aalen",
    "product_integral",
    "initial_distribution",
    "state_occupation",
    "aalen_johansen",
    "landmark_aalen_johansen",
    "weighted_hazard_increments",
    "batched_product",
]


class NotEstimableError(ValueError):
    """The requested quantity cannot be estimated from the data at hand."""


# small matrix-product helpers ----------------------------------------------------------

def batched_product(mats: np.ndarray) -> np.ndarray:
    """Ordered product ``mats[..., 0, :, :] @ mats[..., 1, :, :] @ ...``.

    Pairwise reduction over the second-to-last-but-one axis; leading axes are
    treated as a batch. An empty sequence yields the identity.
    """
    S = mats.shape[-1]
    J = mats.shape[-3]
    if J == 0:
        return np.broadcast_to(np.eye(S), mats.shape[:-3] + (S, S)).copy()
    while J > 1:
        if J % 2:
            last = mats[..., -1:, :, :]
            mats = np.concatenate([mats[..., 0:-1:2, :, :] @ mats[..., 1::2, :, :], last], axis=-3)
        else:
            mats = mats[..., 0::2, :, :] @ mats[..., 1::2, :, :]
        J = mats.shape[-3]
    return mats[..., 0, :, :]


def _prefix_products(mats: np.ndarray) -> np.ndarray:
    """All ordered prefix products (inclusive scan), shape preserved."""
    out = np.array(mats, dtype=float, copy=True)
    J = out.shape[-3]
    d = 1
    while d < J:
        out[..., d:, :, :] = out[..., :-d, :, :] @ out[..., d:, :, :]
        d *= 2
    return out


def _clip_stochastic(p: np.ndarray) -> np.ndarray:
    return np.clip(p, 0.0, 1.0)


# cumulative hazards --------------------------------------------------------------------

@dataclass(frozen=True)
class CumulativeHazardMatrix:
    """Jumps of the matrix-valued Nelson-Aalen estimator.

    ``increments[j]`` is the (S, S) matrix dA(t_j): off-diagonal entries are
    dN_lm / Y_l and every row sums to zero.
    """

    times: np.ndarray
    increments: np.ndarray
    n: int

    @property
    def num_states(self) -> int:
        return self.increments.shape[-1]

    def cumulative(self, t: float) -> np.ndarray:
        """A(t) as an (S, S) matrix, right-continuous."""
        k = np.searchsorted(self.times, t, side="right")
        return self.increments[:k].sum(axis=0)

    def curve(self, l: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Jump times and cumulative values of A_lm."""
        return self.times, np.cumsum(self.increments[:, l, m])

    def value(self, l: int, m: int, t: float | np.ndarray) -> float | np.ndarray:
        cum = np.concatenate(([0.0], np.cumsum(self.increments[:, l, m])))
        return cum[np.searchsorted(self.times, t, side="right")]


def _increments_from_counts(counts: np.ndarray, at_risk: np.ndarray) -> np.ndarray:
    """dA from dN (..., J, S, S) and Y (..., J, S); the J_l factor zeroes empty risk sets."""
    y = at_risk[..., :, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = np.where(y > 0, counts / np.where(y > 0, y, 1.0), 0.0)
    S = inc.shape[-1]
    diag = np.arange(S)
    inc[..., diag, diag] = 0.0
    inc[..., diag, diag] = -inc.sum(axis=-1)
    return inc


def nelson_aalen(table: EventTable) -> CumulativeHazardMatrix:
    """Matrix Nelson-Aalen estimator from an event table."""
    inc = _increments_from_counts(table.counts.astype(float), table.at_risk.astype(float))
    return CumulativeHazardMatrix(table.times, inc, table.n)


def product_integral(haz: CumulativeHazardMatrix, s: float, t: float) -> np.ndarray:
    """Ordered product of ``I + dA(u)`` over jump times ``u`` in (s, t]."""
    if s > t:
        raise ValueError(f"product integral needs s <= t, got s={s}, t={t}")
    lo = np.searchsorted(haz.times, s, side="right")
    hi = np.searchsorted(haz.times, t, side="right")
    mats = np.eye(haz.num_states) + haz.increments[lo:hi]
    return _clip_stochastic(batched_product(mats))


# probability curves ----------------------------------------------------------------------

@dataclass(frozen=True)
class ProbabilityCurve:
    """Right-continuous step function of probability vectors or matrices.

    ``times[0]`` is the origin ``s``; ``values[0]`` is the initial vector (or
    the identity for transition matrices).
    """

    times: np.ndarray
    values: np.ndarray
    origin: float

    def at(self, t: float | np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < self.origin):
            raise ValueError("evaluation before the curve origin")
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.values[k]


def _has_delayed_entry(data: Dataset) -> bool:
    return bool(np.any(data.entry_times() > 0))


def initial_distribution(data: Dataset, policy="common:0") -> np.ndarray:
    """Estimate of the initial state distribution.

    ``policy`` is one of ``"common:<j>"``, ``"multinomial"``,
    ``"at_risk_renormalized"`` or an explicit probability vector.
    """
    S = data.state_space.num_states
    if not isinstance(policy, str):
        p = np.asarray(policy, dtype=float)
        if p.shape != (S,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError(f"supplied initial distribution {p.tolist()} is not a probability "
                             f"vector over {S} states")
        return p
    kind, _, arg = policy.partition(":")
    if kind in ("common", "common_state"):
        j = int(arg or 0)
        if not 0 <= j < S:
            raise ValueError(f"initial state {j} outside state space")
        return np.eye(S)[j]
    at_zero = data.rec_entry == 0.0
    y0 = np.bincount(data.rec_from[at_zero], minlength=S).astype(float)
    if kind == "multinomial":
        if _has_delayed_entry(data):
            raise ValueError("multinomial initial distribution requires data without delayed entry")
        if data.n == 0:
            raise NotEstimableError("no subjects")
        return y0 / data.n
    if kind in ("at_risk", "at_risk_renormalized"):
        if y0.sum() == 0:
            raise NotEstimableError("nobody at risk at time 0+")
        return y0 / y0.sum()
    if kind == "supplied":
        return initial_distribution(data, [float(x) for x in arg.split(",")])
    raise ValueError(f"unknown initial distribution policy {policy!r}")


def state_occupation(data: Dataset, policy="common:0") -> ProbabilityCurve:
    """Aalen-Johansen state occupation probabilities p(0) * prod(I + dA)."""
    p0 = initial_distribution(data, policy)
    haz = nelson_aalen(build_event_table(data))
    S = haz.num_states
    if len(haz.times) == 0:
        return ProbabilityCurve(np.array([0.0]), p0[None, :], 0.0)
    prefix = _prefix_products(np.eye(S) + haz.increments)
    values = _clip_stochastic(np.concatenate([p0[None, :], p0 @ prefix], axis=0))
    return ProbabilityCurve(np.concatenate(([0.0], haz.times)), values, 0.0)


def aalen_johansen(data: Dataset, s: float = 0.0) -> ProbabilityCurve:
    """Aalen-Johansen transition matrices P(s, t) for t >= s on the full data."""
    haz = nelson_aalen(build_event_table(data, after=s))
    S = haz.num_states
    mats = _clip_stochastic(_prefix_products(np.eye(S) + haz.increments))
    values = np.concatenate([np.eye(S)[None], mats], axis=0)
    return ProbabilityCurve(np.concatenate(([s], haz.times)), values, s)


def landmark_aalen_johansen(data: Dataset, s: float, state: int, t: float) -> np.ndarray:
    """Row ``state`` of the landmark Aalen-Johansen matrix over (s, t].

    Only subjects observed in ``state`` at ``s`` contribute. Entry m estimates
    P(X(t) = m | X(s) = state).
    """
    if s > t:
        raise ValueError(f"landmark estimator needs s <= t, got s={s}, t={t}")
    sub = landmark_subset(data, s, state)
    if sub.n == 0:
        raise NotEstimableError(f"not estimable at landmark {s}: nobody observed in state {state}")
    haz = nelson_aalen(build_event_table(sub, after=s))
    return product_integral(haz, s, t)[state]


# weighted (frequency-weight) evaluation for resampling ---------------------------------

def _scatter_sum(values: np.ndarray, positions: np.ndarray, size: int) -> np.ndarray:
    """Column scatter-add: out[:, p] += values[:, e] for positions[e] = p."""
    out = np.zeros((values.shape[0], size))
    if len(positions) == 0:
        return out
    order = np.argsort(positions, kind="stable")
    upos, start = np.unique(positions[order], return_index=True)
    out[:, upos] = np.add.reduceat(values[:, order], start, axis=1)
    return out


def weighted_hazard_increments(data: Dataset, weights: np.ndarray, after: float | None = None,
                               until: float | None = None,
                               times: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Nelson-Aalen increments under per-subject frequency weights.

    ``weights`` has shape (B, n); row b is e.g. the multiplicity of each
    subject in bootstrap resample b. Returns the jump grid (the unweighted
    data's transition times within (after, until]) and increments of shape
    (B, J, S, S). Grid points where a resample has no events carry zero
    increments, so products over the grid equal products over the resample's
    own jump times.
    """
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    S = data.state_space.num_states
    is_event = data.rec_to != CENSORED
    if times is None:
        ev_t = data.rec_exit[is_event]
        if after is not None:
            ev_t = ev_t[ev_t > after]
        if until is not None:
            ev_t = ev_t[ev_t <= until]
        times = np.unique(ev_t)
    J = len(times)
    B = W.shape[0]
    if J == 0:
        return times, np.zeros((B, 0, S, S))
    rec_w = W[:, data.rec_subject]
    # at-risk via difference arrays on the grid
    lo = np.searchsorted(times, data.rec_entry, side="right")
    hi = np.searchsorted(times, data.rec_exit, side="right")
    pos = np.concatenate([data.rec_from * (J + 1) + lo, data.rec_from * (J + 1) + hi])
    vals = np.concatenate([rec_w, -rec_w], axis=1)
    y = np.cumsum(_scatter_sum(vals, pos, S * (J + 1)).reshape(B, S, J + 1)[:, :, :J], axis=2)
    y = y.transpose(0, 2, 1)
    # transitions located on the grid
    ev = np.flatnonzero(is_event)
    j = np.searchsorted(times, data.rec_exit[ev])
    on_grid = (j < J) & (times[np.minimum(j, J - 1)] == data.rec_exit[ev])
    ev, j = ev[on_grid], j[on_grid]
    pos = (j * S + data.rec_from[ev]) * S + data.rec_to[ev]
    dn = _scatter_sum(rec_w[:, ev], pos, J * S * S).reshape(B, J, S, S)
    return times, _increments_from_counts(dn, y)
