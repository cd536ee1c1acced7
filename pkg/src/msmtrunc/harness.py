"""Replicated simulation experiments: bias, RMSE and bootstrap coverage."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .core import Dataset, build_event_table, landmark_subset
from .estimators import (
    NotEstimableError,
    batched_product,
    initial_distribution,
    landmark_aalen_johansen,
    nelson_aalen,
    product_integral,
    state_occupation,
    weighted_hazard_increments,
)
from .resampling import (
    DegenerateSampleError,
    efron_bootstrap,
    standardized_quantile_ci,
    wild_bootstrap_nelson_aalen,
    wild_bootstrap_transition_probability,
)
from .simgen import ScenarioConfig, paths_to_dataset, simulate_latent, simulate_study

__all__ = [
    "Target",
    "ExperimentConfig",
    "MetricsRow",
    "ExperimentResult",
    "TargetStatistic",
    "absorption_quantile",
    "true_value_oracle",
    "run_experiment",
    "write_metrics",
    "write_curves",
]

log = logging.getLogger(__name__)

ESTIMANDS = ("occupation", "transition", "cumhaz")
ESTIMATORS = {"AJ": ("occupation", "transition"), "LMAJ": ("transition",), "NA": ("cumhaz",)}
ORACLE_N = 100_000
FAIL_FRACTION = 0.5

# spawn-key namespaces of the master seed
_ORACLE_KEY = 0
_REPLICATION_KEY = 1


@dataclass(frozen=True)
class Target:
    """A scalar estimand.

    ``occupation``: P(X(t) = to); ``transition``: P(X(t) = to | X(s) = frm);
    ``cumhaz``: A_frm,to(t). Times may be numbers or ``"q<p>"`` strings
    meaning the p-quantile of the time to absorption.
    """

    estimand: str
    to: int
    t: float | str
    frm: int = 0
    s: float | str = 0.0

    def __post_init__(self):
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"unknown estimand {self.estimand!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Target":
        d = dict(d)
        if "from" in d:
            d["frm"] = d.pop("from")
        if "state" in d:
            d["to"] = d.pop("state")
        return cls(**d)

    @property
    def label(self) -> str:
        if self.estimand == "occupation":
            return f"P{self.to}({_fmt(self.t)})"
        if self.estimand == "transition":
            return f"P{self.frm}{self.to}({_fmt(self.s)},{_fmt(self.t)})"
        return f"A{self.frm}{self.to}({_fmt(self.t)})"

    def resolved(self, quantiles: Mapping[str, float]) -> "Target":
        def res(x):
            return float(quantiles[x]) if isinstance(x, str) else float(x)
        return Target(self.estimand, self.to, res(self.t), self.frm, res(self.s))

    def quantile_keys(self) -> list[str]:
        return [x for x in (self.s, self.t) if isinstance(x, str)]


def _fmt(x) -> str:
    return x if isinstance(x, str) else f"{x:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    targets: tuple[Target, ...]
    replications: int = 100
    estimators: tuple[str, ...] = ("AJ",)
    ci_methods: tuple[str, ...] = ()
    B: int = 1000
    level: float = 0.95
    oracle: Mapping[str, Any] = field(default_factory=lambda: {"kind": "large_sample", "n": ORACLE_N})
    initial: str = "common:0"
    ci_form: str = "symmetric"
    curves: Mapping[str, Any] | None = None
    master_seed: int = 0
    name: str = "experiment"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")
        for m in self.ci_methods:
            if m not in ("efron", "wild"):
                raise ValueError(f"unknown CI method {m!r}")
        if self.ci_form not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown interval form {self.ci_form!r}")
        kind = self.oracle.get("kind")
        if kind == "large_sample":
            if self.oracle.get("n", ORACLE_N) < 10 * self.scenario.n:
                raise ValueError("oracle sample must be at least 10 times the study size")
        elif kind == "supplied":
            if len(self.oracle["values"]) != len(self.targets):
                raise ValueError("need one supplied true value per target")
            if any(t.quantile_keys() for t in self.targets):
                raise ValueError("quantile-defined times need a large-sample oracle")
        else:
            raise ValueError(f"unknown oracle {kind!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        d["targets"] = tuple(Target.from_dict(t) for t in d["targets"])
        if "ci_method" in d:
            m = d.pop("ci_method")
            d["ci_methods"] = (m,) if isinstance(m, str) else tuple(m)
        for k in ("estimators", "ci_methods"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class MetricsRow:
    label: str
    estimator: str
    target: str
    s: float
    time: float
    method: str
    n: int
    n_bar: float
    truth: float
    bias: float
    rmse: float
    coverage_pct: float
    replications_used: int
    status: str = "ok"


@dataclass
class ExperimentResult:
    rows: list[MetricsRow]
    targets: tuple[Target, ...]
    truths: np.ndarray
    estimates: dict[str, np.ndarray]
    intervals: dict[tuple[str, str], np.ndarray]
    n_included: np.ndarray
    curves: dict[str, np.ndarray] | None = None


# oracle ----------------------------------------------------------------------------------

def absorption_quantile(z2: np.ndarray, p: float) -> float:
    """Empirical p-quantile (inverse ECDF) of absorption times."""
    return float(np.quantile(np.asarray(z2, dtype=float), p, method="inverted_cdf"))


def _states_at(paths, t: float) -> np.ndarray:
    ill = paths.via_illness & (np.nan_to_num(paths.z1, nan=np.inf) <= t)
    return np.where(paths.z2 <= t, 2, np.where(ill, 1, 0))


def true_value_oracle(scenario: ScenarioConfig, targets: Sequence[Target], n_oracle: int = ORACLE_N,
                      seed=0) -> tuple[tuple[Target, ...], np.ndarray]:
    """True values from a large complete (untruncated, uncensored) sample.

    State occupation is the empirical state frequency (identical to the
    Aalen-Johansen estimate on complete data), transition probabilities are
    empirical conditional frequencies, cumulative hazards the Nelson-Aalen
    estimate. Returns the targets with quantile times resolved and the values.
    """
    rng = np.random.default_rng(seed)
    paths = simulate_latent(scenario, n_oracle, rng)
    keys = sorted({k for t in targets for k in t.quantile_keys()})
    quantiles = {k: absorption_quantile(paths.z2, float(k[1:])) for k in keys}
    resolved = tuple(t.resolved(quantiles) for t in targets)
    haz = None
    values = []
    for tg in resolved:
        if tg.estimand == "occupation":
            values.append(float(np.mean(_states_at(paths, tg.t) == tg.to)))
        elif tg.estimand == "transition":
            at_s = _states_at(paths, tg.s) == tg.frm
            if not at_s.any():
                raise NotEstimableError(f"nobody in state {tg.frm} at {tg.s} in the oracle sample")
            values.append(float(np.mean(_states_at(paths, tg.t)[at_s] == tg.to)))
        else:
            if haz is None:
                haz = nelson_aalen(build_event_table(paths_to_dataset(paths, np.zeros(len(paths)))))
            values.append(float(haz.value(tg.frm, tg.to, tg.t)))
    return resolved, np.array(values)


def oracle_curve(scenario: ScenarioConfig, state: int, grid: np.ndarray, n_oracle: int, seed):
    paths = simulate_latent(scenario, n_oracle, np.random.default_rng(seed))
    return np.array([np.mean(_states_at(paths, t) == state) for t in grid]), paths


# statistics -----------------------------------------------------------------------------------

class TargetStatistic:
    """Vector of one estimator's values at several targets.

    Callable on a Dataset; ``weighted`` evaluates all bootstrap resamples at
    once from subject multiplicities. Not-estimable entries are NaN.
    """

    def __init__(self, estimator: str, targets: Sequence[Target], initial: str = "common:0"):
        self.estimator = estimator
        self.targets = tuple(targets)
        self.initial = initial

    def __call__(self, data: Dataset) -> np.ndarray:
        out = np.full(len(self.targets), np.nan)
        if self.estimator == "NA":
            haz = nelson_aalen(build_event_table(data))
            for k, tg in enumerate(self.targets):
                out[k] = haz.value(tg.frm, tg.to, tg.t)
        elif self.estimator == "AJ":
            haz = nelson_aalen(build_event_table(data))
            for k, tg in enumerate(self.targets):
                if tg.estimand == "occupation":
                    try:
                        out[k] = state_occupation(data, self.initial).at(tg.t)[tg.to]
                    except NotEstimableError:
                        pass
                else:
                    out[k] = product_integral(haz, tg.s, tg.t)[tg.frm, tg.to]
        else:
            for k, tg in enumerate(self.targets):
                try:
                    out[k] = landmark_aalen_johansen(data, tg.s, tg.frm, tg.t)[tg.to]
                except NotEstimableError:
                    pass
        return out

    def _p0(self, S):
        kind, _, arg = self.initial.partition(":")
        if kind not in ("common", "common_state"):
            return None
        return np.eye(S)[int(arg or 0)]

    def weighted(self, data: Dataset, counts: np.ndarray) -> np.ndarray:
        B = counts.shape[0]
        S = data.state_space.num_states
        out = np.full((B, len(self.targets)), np.nan)
        if self.estimator == "NA":
            tmax = max(tg.t for tg in self.targets)
            times, inc = weighted_hazard_increments(data, counts, until=tmax)
            for k, tg in enumerate(self.targets):
                j = np.searchsorted(times, tg.t, side="right")
                out[:, k] = inc[:, :j, tg.frm, tg.to].sum(axis=1)
            return out
        if self.estimator == "AJ" and any(tg.estimand == "occupation" for tg in self.targets) \
                and self._p0(S) is None:
            return np.stack([self(data.take(np.repeat(np.arange(data.n), c.astype(int)),
                                            relabel=True)) for c in counts])
        for k, tg in enumerate(self.targets):
            if self.estimator == "AJ":
                sub, w = data, counts
            else:
                members = _landmark_members(data, tg.s, tg.frm)
                sub, w = data.take(members), counts[:, members]
            if sub.n == 0:
                continue
            times, inc = weighted_hazard_increments(sub, w, after=tg.s, until=tg.t)
            P = batched_product(np.eye(S) + inc)
            if tg.estimand == "occupation":
                out[:, k] = (self._p0(S) @ P)[:, tg.to]
            else:
                out[:, k] = P[:, tg.frm, tg.to]
            if self.estimator == "LMAJ":
                out[w.sum(axis=1) == 0, k] = np.nan
        return np.clip(out, 0.0, 1.0) if self.estimator != "NA" else out


def _landmark_members(data: Dataset, s: float, state: int) -> np.ndarray:
    sub = landmark_subset(data, s, state)
    index = {sid: k for k, sid in enumerate(data.subject_ids)}
    return np.array([index[sid] for sid in sub.subject_ids], dtype=np.int64)


def _wild_replicates(estimator: str, tg: Target, data: Dataset, B: int, seed,
                     initial: str) -> np.ndarray:
    """Wild-bootstrap perturbations theta* - theta for one target."""
    if estimator == "NA":
        table = build_event_table(data)
        sample = wild_bootstrap_nelson_aalen(table, (tg.frm, tg.to), B, seed)
        j = np.searchsorted(table.times, tg.t, side="right")
        return sample.replicates[:, j - 1] if j else np.zeros(B)
    if estimator == "LMAJ":
        data = landmark_subset(data, tg.s, tg.frm)
        if data.n == 0:
            raise NotEstimableError("empty landmark subset")
    table = build_event_table(data)
    s = 0.0 if tg.estimand == "occupation" else tg.s
    pert = wild_bootstrap_transition_probability(table, s, tg.t, B, seed).replicates
    if tg.estimand == "occupation":
        return (initial_distribution(data, initial) @ pert)[:, tg.to]
    return pert[:, tg.frm, tg.to]


# replication ------------------------------------------------------------------------------------

def _replication(config: ExperimentConfig, targets: tuple[Target, ...], r: int,
                 grid: np.ndarray | None) -> dict:
    root = np.random.SeedSequence(config.master_seed, spawn_key=(_REPLICATION_KEY, r))
    data_seed, *boot_seeds = root.spawn(1 + len(config.estimators) * max(len(config.ci_methods), 1))
    data = simulate_study(config.scenario, np.random.default_rng(data_seed))
    res: dict[str, Any] = {"n": data.n, "est": {}, "ci": {}}
    k = 0
    for est in config.estimators:
        idx = [i for i, tg in enumerate(targets) if tg.estimand in ESTIMATORS[est]]
        stat = TargetStatistic(est, [targets[i] for i in idx], config.initial)
        point = stat(data) if data.n else np.full(len(idx), np.nan)
        res["est"][est] = (idx, point)
        bounds = (0.0, math.inf) if est == "NA" else (0.0, 1.0)
        for method in config.ci_methods:
            seed = boot_seeds[k]
            k += 1
            ci = np.full((len(idx), 2), np.nan)
            if data.n == 0:
                res["ci"][(est, method)] = ci
                continue
            if method == "efron":
                try:
                    reps = efron_bootstrap(data, stat, config.B, seed).replicates
                except NotEstimableError:
                    reps = None
            for j, tg in enumerate(stat.targets):
                if np.isnan(point[j]):
                    continue
                try:
                    if method == "efron":
                        if reps is None:
                            continue
                        sample = reps[:, j]
                    else:
                        sample = point[j] + _wild_replicates(est, tg, data, config.B, seed, config.initial)
                    interval = standardized_quantile_ci(sample, point[j], data.n, config.level, bounds,
                                                        config.ci_form)
                    ci[j] = interval.lower, interval.upper
                except DegenerateSampleError:
                    pass
                except NotEstimableError:
                    pass
            res["ci"][(est, method)] = ci
    if grid is not None:
        state = config.curves.get("state", 1)
        try:
            res["curve"] = state_occupation(data, config.initial).at(grid)[:, state]
        except NotEstimableError:
            res["curve"] = np.full(len(grid), np.nan)
    return res


def _replication_chunk(args):
    config, targets, rs, grid = args
    return [_replication(config, targets, r, grid) for r in rs]


def _curve_grid(config: ExperimentConfig, oracle_seed) -> tuple[np.ndarray, np.ndarray] | None:
    if not config.curves:
        return None
    spec = config.curves
    n_oracle = config.oracle.get("n", ORACLE_N)
    paths = simulate_latent(config.scenario, n_oracle, np.random.default_rng(oracle_seed))
    t_max = spec.get("t_max", "q0.9")
    if isinstance(t_max, str):
        t_max = absorption_quantile(paths.z2, float(t_max[1:]))
    grid = np.linspace(0.0, float(t_max), int(spec.get("points", 101)))
    truth = np.array([np.mean(_states_at(paths, t) == spec.get("state", 1)) for t in grid])
    return grid, truth


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run all replications and aggregate bias, RMSE and coverage per target.

    Every replication draws from its own substream of ``master_seed``; the
    output does not depend on ``threads``.
    """
    oracle_seed = np.random.SeedSequence(config.master_seed, spawn_key=(_ORACLE_KEY,))
    if config.oracle["kind"] == "large_sample":
        targets, truths = true_value_oracle(config.scenario, config.targets,
                                            config.oracle.get("n", ORACLE_N), oracle_seed)
    else:
        targets = tuple(t.resolved({}) for t in config.targets)
        truths = np.asarray(config.oracle["values"], dtype=float)
    curve = _curve_grid(config, oracle_seed)
    grid = curve[0] if curve else None
    R = config.replications
    if threads > 1 and R > 1:
        chunks = [list(range(i, R, threads)) for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_replication_chunk, [(config, targets, c, grid) for c in chunks]))
        results: list[dict] = [None] * R  # type: ignore[list-item]
        for c, part in zip(chunks, parts):
            for r, res in zip(c, part):
                results[r] = res
    else:
        results = [_replication(config, targets, r, grid) for r in range(R)]
    return _aggregate(config, targets, truths, results, curve)


def _aggregate(config, targets, truths, results, curve) -> ExperimentResult:
    R = len(results)
    n_incl = np.array([res["n"] for res in results], dtype=float)
    n_bar = float(n_incl.mean())
    rows: list[MetricsRow] = []
    estimates: dict[str, np.ndarray] = {}
    intervals: dict[tuple[str, str], np.ndarray] = {}
    for est in config.estimators:
        idx = results[0]["est"][est][0]
        est_mat = np.array([res["est"][est][1] for res in results]).reshape(R, len(idx))
        estimates[est] = est_mat
        methods = config.ci_methods or ("none",)
        for method in methods:
            ci = np.array([res["ci"][(est, method)] for res in results]).reshape(R, len(idx), 2) \
                if method != "none" else None
            if ci is not None:
                intervals[(est, method)] = ci
            for j, i in enumerate(idx):
                tg, truth = targets[i], truths[i]
                x = est_mat[:, j]
                ok = ~np.isnan(x)
                used = int(ok.sum())
                status = "ok" if used > FAIL_FRACTION * R else "failed"
                bias = float(np.mean(x[ok]) - truth) if used else math.nan
                rmse = float(math.sqrt(np.mean((x[ok] - truth) ** 2))) if used else math.nan
                if ci is not None:
                    has = ~np.isnan(ci[:, j, 0])
                    cover = (ci[has, j, 0] <= truth) & (truth <= ci[has, j, 1])
                    cov = float(100.0 * cover.mean()) if has.any() else math.nan
                else:
                    cov = math.nan
                rows.append(MetricsRow(
                    label=f"{est}:{tg.label}:{method}", estimator=est, target=config.targets[i].label,
                    s=tg.s, time=tg.t, method=method, n=config.scenario.n, n_bar=n_bar,
                    truth=float(truth), bias=bias, rmse=rmse, coverage_pct=cov,
                    replications_used=used, status=status))
    curves = None
    if curve is not None:
        grid, truth = curve
        mat = np.array([res["curve"] for res in results])
        curves = {
            "time": grid,
            "truth": truth,
            "mean": np.nanmean(mat, axis=0),
            "lower": np.nanquantile(mat, 0.025, axis=0),
            "upper": np.nanquantile(mat, 0.975, axis=0),
        }
    return ExperimentResult(rows, targets, truths, estimates, intervals, n_incl, curves)


# output ------------------------------------------------------------------------------------------

METRIC_FIELDS = ("label", "estimator", "target", "s", "time", "method", "n", "n_bar", "truth",
                 "bias", "rmse", "coverage_pct", "replications_used", "status")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(result: ExperimentResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for row in result.rows:
        w.writerow([_cell(getattr(row, f)) for f in METRIC_FIELDS])


def write_curves(result: ExperimentResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    keys = ("time", "truth", "mean", "lower", "upper")
    w.writerow(keys)
    c = result.curves
    for j in range(len(c["time"])):
        w.writerow([repr(float(c[k][j])) for k in keys])
