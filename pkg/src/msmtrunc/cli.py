"""Command-line interface.

Subcommands: estimate, landmark, bootstrap, simulate, experiment, cox-check.
Outputs are headered CSV. All files of a command are staged in temporary
files and moved into place only after the command succeeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DataError, build_event_table, landmark_subset, read_long_format, write_long_format
from .cox import cox_markov_check
from .estimators import (
    NotEstimableError,
    aalen_johansen,
    landmark_aalen_johansen,
    nelson_aalen,
    state_occupation,
)
from .harness import ExperimentConfig, Target, TargetStatistic, _wild_replicates, run_experiment, \
    write_curves, write_metrics
from .resampling import DEFAULT_B, efron_bootstrap, standardized_quantile_ci
from .simgen import ScenarioConfig, simulate_study

log = logging.getLogger("msmtrunc")


class CliError(Exception):
    pass


# output staging ------------------------------------------------------------------------------

class Outputs:
    """Named CSV outputs, committed together."""

    def __init__(self, out: str | None):
        self.out = out
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def _targets(self) -> dict[Path, str]:
        if self.out is None:
            return {}
        out = Path(self.out)
        if out.suffix.lower() in (".csv", ".txt"):
            if len(self.files) == 1:
                return {out: next(iter(self.files.values()))}
            stem = out.with_suffix("")
            return {stem.parent / f"{stem.name}_{k}": v for k, v in self.files.items()}
        return {out / k: v for k, v in self.files.items()}

    def commit(self) -> list[Path]:
        if self.out is None:
            for name, text in self.files.items():
                if len(self.files) > 1:
                    sys.stdout.write(f"# {name}\n")
                sys.stdout.write(text)
            return []
        targets = self._targets()
        staged = []
        try:
            for path, text in targets.items():
                path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
                with os.fdopen(fd, "w", newline="") as fh:
                    fh.write(text)
                staged.append((tmp, path))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, path in staged:
            os.replace(tmp, path)
        return [p for _, p in staged]


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _curve_csv(times, values, keys) -> str:
    """Step function as long rows ``time,state_or_pair,value``."""
    rows = ([float(t), k, float(v)] for t, vals in zip(times, values) for k, v in zip(keys, vals))
    return _csv(["time", "state_or_pair", "value"], rows)


def _load(path: str | None):
    if path is None:
        raise CliError("--input is required")
    try:
        return read_long_format(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def _load_json(path: str | None) -> dict:
    if path is None:
        raise CliError("--config is required")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


# subcommands ---------------------------------------------------------------------------------

def cmd_estimate(args, out: Outputs) -> None:
    data = _load(args.input)
    S = data.state_space.num_states
    chosen = args.occupation or args.cumhaz or args.transition is not None
    if args.occupation or not chosen:
        curve = state_occupation(data, args.initial)
        out.add("occupation.csv", _curve_csv(curve.times, curve.values, [str(m) for m in range(S)]))
    if args.cumhaz:
        haz = nelson_aalen(build_event_table(data))
        pairs = data.state_space.allowed_transitions
        cum = np.cumsum(haz.increments, axis=0)
        vals = [[c[l, m] for (l, m) in pairs] for c in cum]
        out.add("cumhaz.csv", _curve_csv(haz.times, vals, [f"{l}-{m}" for (l, m) in pairs]))
    if args.transition is not None:
        curve = aalen_johansen(data, args.transition)
        cols = [f"{l}-{m}" for l in range(S) for m in range(S)]
        out.add("transition.csv", _curve_csv(curve.times, curve.values.reshape(len(curve.times), -1), cols))


def cmd_landmark(args, out: Outputs) -> None:
    data = _load(args.input)
    S = data.state_space.num_states
    sub = landmark_subset(data, args.s, args.state)
    if sub.n == 0:
        raise NotEstimableError(f"not estimable at landmark {args.s}: "
                                f"nobody observed in state {args.state}")
    table = build_event_table(sub, after=args.s)
    times = np.concatenate(([args.s], table.times))
    if args.t is not None:
        times = times[times <= args.t]
    rows = [landmark_aalen_johansen(data, args.s, args.state, t) for t in times]
    out.add("landmark.csv", _curve_csv(times, rows, [f"{args.state}-{m}" for m in range(S)]))


def _target_from_args(args) -> Target:
    if args.t is None:
        raise CliError("--t is required")
    estimand = args.target
    frm = args.frm if args.frm is not None else (args.state if estimand == "transition" else 0)
    return Target(estimand, args.to, args.t, frm, args.s)


def cmd_bootstrap(args, out: Outputs) -> None:
    data = _load(args.input)
    tg = _target_from_args(args)
    estimator = args.estimator or {"cumhaz": "NA", "occupation": "AJ", "transition": "AJ"}[tg.estimand]
    stat = TargetStatistic(estimator, [tg], args.initial)
    point = float(stat(data)[0])
    if np.isnan(point):
        raise NotEstimableError(f"{tg.label} not estimable on these data")
    seed = np.random.SeedSequence(args.seed)
    if args.bootstrap == "efron":
        reps = efron_bootstrap(data, stat, args.B, seed).replicates[:, 0]
        column = "replicate"
    else:
        reps = _wild_replicates(estimator, tg, data, args.B, seed, args.initial)
        column = "perturbation"
    sample = reps if args.bootstrap == "efron" else point + reps
    bounds = (0.0, float("inf")) if estimator == "NA" else (0.0, 1.0)
    ci = standardized_quantile_ci(sample, point, data.n, args.level, bounds, args.ci_form)
    out.add("ci.csv", _csv(["lower", "point", "upper", "level"],
                           [[ci.lower, ci.point, ci.upper, ci.level]]))
    out.add("replicates.csv", _csv([column], ([float(x)] for x in reps)))


def _scenario_from(cfg: dict) -> ScenarioConfig:
    return ScenarioConfig.from_dict(cfg["scenario"] if "scenario" in cfg else cfg)


def cmd_simulate(args, out: Outputs) -> None:
    cfg = _load_json(args.config)
    scenario = _scenario_from(cfg)
    if args.n is not None:
        scenario = scenario.replace(n=args.n)
    seed = args.seed if args.seed is not None else cfg.get("master_seed", scenario.seed)
    data = simulate_study(scenario, np.random.default_rng(seed))
    buf = io.StringIO()
    write_long_format(data, buf)
    out.add("data.csv", buf.getvalue())


def cmd_experiment(args, out: Outputs) -> None:
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.B is not None:
        cfg["B"] = args.B
    if args.level is not None:
        cfg["level"] = args.level
    if args.bootstrap is not None:
        cfg.pop("ci_method", None)
        cfg["ci_methods"] = [args.bootstrap]
    if args.replications is not None:
        cfg["replications"] = args.replications
    config = ExperimentConfig.from_dict(cfg)
    result = run_experiment(config, threads=args.threads)
    buf = io.StringIO()
    write_metrics(result, buf)
    out.add("metrics.csv", buf.getvalue())
    if result.curves is not None:
        buf = io.StringIO()
        write_curves(result, buf)
        out.add(f"curve_p{config.curves.get('state', 1)}.csv", buf.getvalue())


def cmd_cox_check(args, out: Outputs) -> None:
    data = _load(args.input)
    out.add("cox.txt", cox_markov_check(data, args.exposure, args.event).summary())


COMMANDS = {
    "estimate": cmd_estimate,
    "landmark": cmd_landmark,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "cox-check": cmd_cox_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msmtrunc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        if data:
            sp.add_argument("--input", help="long-format CSV (id,from,to,entry,exit)")
        sp.add_argument("--out", help="output directory, or a .csv file; default stdout")
        return sp

    sp = common(sub.add_parser("estimate", help="Aalen-Johansen / Nelson-Aalen estimates"))
    sp.add_argument("--occupation", action="store_true", help="state occupation probabilities")
    sp.add_argument("--cumhaz", action="store_true", help="Nelson-Aalen cumulative hazards")
    sp.add_argument("--transition", type=float, metavar="S",
                    help="Aalen-Johansen transition matrices P(S, t)")
    sp.add_argument("--initial", default="common:0",
                    help="initial distribution: common:<j>, multinomial, at_risk_renormalized, "
                         "supplied:<p0,p1,...>")

    sp = common(sub.add_parser("landmark", help="landmark Aalen-Johansen estimate"))
    sp.add_argument("--s", type=float, required=True, help="landmark time")
    sp.add_argument("--state", type=int, default=0, help="conditioning state at the landmark")
    sp.add_argument("--t", type=float, help="last evaluation time")

    sp = common(sub.add_parser("bootstrap", help="bootstrap confidence interval for one target"))
    sp.add_argument("--target", choices=("occupation", "transition", "cumhaz"), default="occupation")
    sp.add_argument("--estimator", choices=("AJ", "LMAJ", "NA"))
    sp.add_argument("--to", type=int, required=True)
    sp.add_argument("--from", dest="frm", type=int)
    sp.add_argument("--state", type=int, default=0, help="conditioning state (transition)")
    sp.add_argument("--s", type=float, default=0.0)
    sp.add_argument("--t", type=float)
    sp.add_argument("--bootstrap", choices=("efron", "wild"), default="efron")
    sp.add_argument("--B", type=int, default=DEFAULT_B)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ci-form", choices=("symmetric", "asymmetric"), default="symmetric")
    sp.add_argument("--initial", default="common:0")

    sp = common(sub.add_parser("simulate", help="simulate one study"), data=False)
    sp.add_argument("--config", required=True, help="scenario or experiment config (JSON)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, help="override the number of latent subjects")

    sp = common(sub.add_parser("experiment", help="replicated simulation experiment"), data=False)
    sp.add_argument("--config", required=True, help="experiment config (JSON)")
    sp.add_argument("--seed", type=int, help="override master_seed")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--bootstrap", choices=("efron", "wild"))
    sp.add_argument("--B", type=int)
    sp.add_argument("--level", type=float)
    sp.add_argument("--replications", type=int)

    sp = common(sub.add_parser("cox-check", help="Cox check of the Markov assumption"))
    sp.add_argument("--exposure", type=int, default=1)
    sp.add_argument("--event", type=int, default=2)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        parser.error("--seed must be nonnegative")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    if getattr(args, "B", None) is not None and args.B < 1:
        parser.error("--B must be at least 1")
    level = getattr(args, "level", None)
    if level is not None and not 0 < level < 1:
        parser.error("--level must be in (0, 1)")
    func = COMMANDS[args.command]
    out = Outputs(args.out)
    try:
        func(args, out)
        out.commit()
    except (CliError, DataError, NotEstimableError, ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"msmtrunc {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
