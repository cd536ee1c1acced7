"""Cox regression of an exit hazard on the time of entry into the exposure state.

A simple check of the Markov property for an illness-death model: if the
hazard out of the intermediate state depends on when it was entered, the
process is not Markov.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .estimators import NotEstimableError

__all__ = ["CoxFit", "cox_markov_check", "partial_loglik"]


@dataclass(frozen=True)
class CoxFit:
    beta: float
    hazard_ratio: float
    std_err: float
    ci_95: tuple[float, float]
    iterations: int
    converged: bool
    n_subjects: int = 0
    n_events: int = 0

    def summary(self) -> str:
        lines = [
            f"beta: {self.beta!r}",
            f"hazard_ratio: {self.hazard_ratio!r}",
            f"std_err: {self.std_err!r}",
            f"ci_95_lower: {self.ci_95[0]!r}",
            f"ci_95_upper: {self.ci_95[1]!r}",
            f"iterations: {self.iterations}",
            f"converged: {str(self.converged).lower()}",
            f"n_subjects: {self.n_subjects}",
            f"n_events: {self.n_events}",
        ]
        return "\n".join(lines) + "\n"


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _exposure_intervals(data: Dataset, exposure_state: int, event_state: int):
    """Risk intervals in the exposure state with the entry time as covariate."""
    entered = np.full(data.n, np.nan)
    into = data.rec_to == exposure_state
    entered[data.rec_subject[into]] = data.rec_exit[into]
    held = (data.rec_from == exposure_state) & ~np.isnan(entered[data.rec_subject])
    start = data.rec_entry[held]
    stop = data.rec_exit[held]
    event = data.rec_to[held] == event_state
    z = entered[data.rec_subject[held]]
    return start, stop, event, z


def _sums(beta: float, start, stop, z, times):
    """S0, S1, S2 of the risk sets at each event time (delayed entry respected)."""
    J = len(times)
    lo = np.searchsorted(times, start, side="right")
    hi = np.searchsorted(times, stop, side="right")
    w = np.exp(beta * z)
    out = []
    for v in (w, w * z, w * z * z):
        diff = np.bincount(lo, v, minlength=J + 1) - np.bincount(hi, v, minlength=J + 1)
        out.append(np.cumsum(diff)[:J])
    return out


def partial_loglik(beta: float, start, stop, event, z) -> float:
    """Breslow partial log-likelihood for counting-process style data."""
    times, d = np.unique(stop[event], return_counts=True)
    s0, _, _ = _sums(beta, start, stop, z, times)
    return float(beta * z[event].sum() - np.sum(d * np.log(s0)))


def cox_markov_check(data: Dataset, exposure_state: int = 1, event_state: int = 2,
                     tol: float = 1e-8, max_iter: int = 50) -> CoxFit:
    """Fit hazard(exposure -> event) = h0(t) exp(beta * z), z = entry time into exposure.

    Subjects already in the exposure state at study entry have no observed
    entry time and are left out. Newton-Raphson from beta = 0 with step
    halving; ties by Breslow.
    """
    start, stop, event, z = _exposure_intervals(data, exposure_state, event_state)
    if not event.any():
        raise NotEstimableError(f"no observed {exposure_state}->{event_state} transitions")
    z = z - z.mean()
    times, d = np.unique(stop[event], return_counts=True)
    zsum = z[event].sum()

    def evaluate(b):
        s0, s1, s2 = _sums(b, start, stop, z, times)
        mean = s1 / s0
        ll = b * zsum - np.sum(d * np.log(s0))
        score = zsum - np.sum(d * mean)
        info = np.sum(d * (s2 / s0 - mean * mean))
        return ll, score, max(info, 0.0)

    beta = 0.0
    ll, score, info = evaluate(beta)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if abs(score) < tol:
            converged = True
            break
        if info <= 0:
            break
        step = score / info
        new = beta + step
        new_ll, new_score, new_info = evaluate(new)
        halvings = 0
        while new_ll < ll and halvings < 30:
            step /= 2
            new = beta + step
            new_ll, new_score, new_info = evaluate(new)
            halvings += 1
        beta, ll, score, info = new, new_ll, new_score, new_info
    se = 1.0 / math.sqrt(info) if info > 0 else math.inf
    hr = _exp(beta)
    ci = (_exp(beta - 1.96 * se), _exp(beta + 1.96 * se)) if math.isfinite(se) else (0.0, math.inf)
    return CoxFit(float(beta), hr, se, ci, it, converged, int(len(z)), int(event.sum()))
