"""Command-line entry point: simulate, sweep, iopt, regions, compare.

All commands ingest a JSON system config, write JSON/CSV results (and SVG
plots) atomically into --out, and echo the fully resolved parameters in every
JSON document. Exit codes: 0 success, 2 usage/config error, 3 computation
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import svg
from .errors import (
    InsufficientEventsError,
    NoSamplesError,
    SchedLabError,
    SolverFailureError,
    TraceUnavailableError,
)
from .ldp import IoptSearch, compute_iopt
from .model import SystemConfig, config_from_json, config_to_json
from .schedulers import Exp, Heterogeneous, MaxWeight, Policy, policy_from_json, policy_to_json, validate_policy
from .simulator import (
    ESTIMATOR_EPISODE,
    ESTIMATOR_STATIONARY,
    SimResult,
    SimSpec,
    decision_regions,
    resolved_burn_in,
    run_simulation,
    validate_sim_spec,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_COMPUTE = 3

_DEFAULT_THRESHOLDS = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)


# ---------------------------------------------------------------------------
# serialization helpers


def _round12(x: float) -> float:
    return float(f"{x:.12g}")


def _jsonify(obj):
    """Recursive JSON-ready conversion; reals carry 12 significant digits."""
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return None if np.isnan(x) else _round12(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_text(path: Path, text: str) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, doc: dict) -> None:
    _write_text(path, json.dumps(_jsonify(doc), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append("" if np.isnan(v) else f"{float(v):.12g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def _sim_result_doc(result: SimResult) -> dict:
    return {
        "overflow": [
            {
                "threshold": e.threshold,
                "probability": e.probability,
                "ci_low": e.ci_low,
                "ci_high": e.ci_high,
                "n_events": e.n_events,
                "n_samples": e.n_samples,
            }
            for e in result.overflow
        ],
        "decay_rate": None
        if result.decay is None
        else {
            "rate": result.decay.rate,
            "stderr": result.decay.stderr,
            "intercept": result.decay.intercept,
            "n_used": result.decay.n_used,
        },
        "empirical_phi": result.empirical_phi.phi,
        "phi_observed": result.empirical_phi.observed,
        "mean_queues": result.mean_queues,
        "counters": {
            "arrivals": result.counters.arrivals,
            "departures": result.counters.departures,
            "state_slots": result.counters.state_slots,
            "served_slots": result.counters.served_slots,
            "horizon": result.counters.horizon,
            "max_queue_seen": result.counters.max_queue_seen,
        },
    }


def _overflow_rows(result: SimResult) -> list[list]:
    return [
        [e.threshold, e.probability, e.ci_low, e.ci_high, e.n_events]
        for e in result.overflow
    ]


def _phi_rows(result: SimResult) -> list[list]:
    phi = result.empirical_phi
    rows = []
    for m in range(phi.phi.shape[0]):
        for i in range(phi.phi.shape[1]):
            rows.append([m, i, phi.phi[m, i], int(phi.observed[m])])
    return rows


# ---------------------------------------------------------------------------
# shared option plumbing


def _add_common(sub: argparse.ArgumentParser, policy: bool = True) -> None:
    sub.add_argument("--config", required=True, help="path to the system config JSON")
    if policy:
        sub.add_argument("--policy", required=True, help="policy JSON document or path")
    sub.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    sub.add_argument("--horizon", type=int, default=2_000_000, help="slots per replication")
    sub.add_argument("--replications", type=int, default=16)
    sub.add_argument("--burn-in", type=int, default=None, help="slots discarded (default 10%%)")
    sub.add_argument("--thresholds", default=None, help="comma-separated overflow thresholds")
    sub.add_argument(
        "--estimator",
        choices=[ESTIMATOR_STATIONARY, ESTIMATOR_EPISODE],
        default=ESTIMATOR_STATIONARY,
    )
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--svg", action="store_true", help="also emit SVG plots")


def _parse_thresholds(text: str | None) -> tuple[float, ...]:
    if text is None:
        return _DEFAULT_THRESHOLDS
    return tuple(float(v) for v in text.split(",") if v.strip())


def _load_inputs(args, policy: bool = True):
    cfg = config_from_json(Path(args.config))
    pol = policy_from_json(args.policy) if policy else None
    spec = validate_sim_spec(
        SimSpec(
            horizon=args.horizon,
            replications=args.replications,
            burn_in=args.burn_in,
            thresholds=_parse_thresholds(args.thresholds),
            master_seed=args.seed,
        )
    )
    return cfg, pol, spec


def _spec_echo(args, cfg: SystemConfig, spec: SimSpec | None, policy: Policy | None, **extra) -> dict:
    doc = {"command": args.command, "config": config_to_json(cfg), "out": str(args.out)}
    if spec is not None:
        doc.update(
            {
                "seed": spec.master_seed,
                "horizon": spec.horizon,
                "replications": spec.replications,
                "burn_in": resolved_burn_in(spec),
                "thresholds": list(spec.thresholds),
                "estimator": getattr(args, "estimator", ESTIMATOR_STATIONARY),
            }
        )
    if policy is not None:
        doc["policy"] = policy_to_json(policy)
    doc.update(extra)
    return doc


def _iopt_search(args) -> IoptSearch:
    return IoptSearch(
        y_max=args.y_max,
        y_grid=args.y_grid,
        gamma_grid=args.gamma_grid,
        refine_tol=args.refine_tol,
        n_seeds=args.iopt_seeds,
    )


def _add_iopt_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--y-max", type=float, default=None)
    sub.add_argument("--y-grid", type=int, default=9)
    sub.add_argument("--gamma-grid", type=int, default=15)
    sub.add_argument("--refine-tol", type=float, default=1e-6)
    sub.add_argument("--iopt-seeds", type=int, default=3)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg, policy, spec = _load_inputs(args)
    result = run_simulation(cfg, policy, spec, mode=args.estimator)
    out = Path(args.out)
    doc = {"spec_echo": _spec_echo(args, cfg, spec, policy)}
    doc.update(_sim_result_doc(result))
    _write_json(out / "result.json", doc)
    _write_csv(out / "overflow.csv", ["B", "prob", "ci_low", "ci_high", "n_events"], _overflow_rows(result))
    _write_csv(out / "phi.csv", ["state", "user", "phi", "observed"], _phi_rows(result))
    if args.svg:
        chart = svg.line_chart(
            [{"label": "overflow", "x": [e.threshold for e in result.overflow],
              "y": [e.probability for e in result.overflow]}],
            title="Overflow probability vs threshold",
            xlabel="threshold B",
            ylabel="P(max queue >= B)",
            log_y=True,
        )
        _write_text(out / "overflow.svg", chart)
    return EXIT_OK


def _policy_with_param(policy: Policy, value: float) -> tuple[Policy, str]:
    v = policy.variant
    if isinstance(v, Heterogeneous):
        return replace(policy, variant=replace(v, q_th=value)), "q_th"
    if isinstance(v, Exp):
        return replace(policy, variant=replace(v, eta=value)), "eta"
    return replace(policy, variant=replace(v, alpha=value)), "alpha"


def cmd_sweep(args) -> int:
    cfg, policy, spec = _load_inputs(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if len(values) < 2:
        raise ValueError("sweep needs at least two parameter values")
    swept = [_policy_with_param(policy, v) for v in values]
    for pol, _ in swept:
        validate_policy(pol)

    iopt = compute_iopt(cfg, _iopt_search(args))
    rows = []
    entries = []
    for value, (pol, param_name) in zip(values, swept):
        result = run_simulation(cfg, pol, spec, mode=args.estimator)
        decay = result.decay
        rows.append(
            [value, decay.rate if decay else np.nan, decay.stderr if decay else np.nan,
             decay.n_used if decay else 0, iopt.value]
        )
        entries.append({"param": value, "policy": policy_to_json(pol), **_sim_result_doc(result)})

    out = Path(args.out)
    _write_json(
        out / "sweep.json",
        {
            "spec_echo": _spec_echo(args, cfg, spec, policy, sweep_values=values),
            "iopt_reference": iopt.value,
            "runs": entries,
        },
    )
    _write_csv(out / "decay_vs_param.csv", ["param", "decay_rate", "stderr", "n_used", "iopt"], rows)
    param_name = swept[0][1]
    chart = svg.line_chart(
        [{"label": "fitted decay", "x": values, "y": [r[1] for r in rows]}],
        title=f"Decay rate vs {param_name}",
        xlabel=param_name,
        ylabel="decay rate",
        hlines=[("optimal decay", iopt.value)],
    )
    _write_text(out / "fig1-like.svg", chart)
    return EXIT_OK


def cmd_iopt(args) -> int:
    cfg = config_from_json(Path(args.config))
    search = _iopt_search(args)
    result = compute_iopt(cfg, search)
    if not result.converged and not args.allow_unconverged:
        print("iopt refinement did not converge (rerun with --allow-unconverged to emit)", file=sys.stderr)
        return EXIT_COMPUTE
    out = Path(args.out)
    _write_json(
        out / "iopt.json",
        {
            "spec_echo": _spec_echo(args, cfg, None, None, search=asdict(search)),
            "value": result.value,
            "arg_y": result.arg_y,
            "arg_gamma": result.arg_gamma,
            "arg_w": result.arg_w,
            "arg_phi": result.arg_phi.phi,
            "converged": result.converged,
        },
    )
    rows = []
    for m in range(cfg.n_states):
        for i in range(cfg.n_users):
            rows.append([m, i, result.arg_phi.phi[m, i]])
    _write_csv(out / "phi_opt.csv", ["state", "user", "phi"], rows)
    return EXIT_OK


def cmd_regions(args) -> int:
    cfg = config_from_json(Path(args.config))
    policy = policy_from_json(args.policy)
    axes = tuple(int(v) for v in args.axes.split(","))
    if len(axes) != 2:
        raise ValueError("--axes takes exactly two user indices")
    fixed = None
    if args.fixed_queues is not None:
        fixed = np.array([float(v) for v in args.fixed_queues.split(",")])
    region = decision_regions(
        cfg, policy, axes, fixed_queues=fixed, grid_max=args.grid_max, grid_step=args.grid_step
    )
    out = Path(args.out)
    rows = []
    for ia, qa in enumerate(region.q_values):
        for ib, qb in enumerate(region.q_values):
            rows.append([qa, qb, region.labels[ia, ib]])
    _write_csv(out / "regions.csv", ["q_a", "q_b", "label"], rows)
    chart = svg.region_chart(
        region.q_values,
        region.labels,
        region.axis_users,
        title=f"Decision regions ({policy_to_json(policy)['type']})",
    )
    _write_text(out / "regions.svg", chart)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = config_from_json(Path(args.config))
    spec = validate_sim_spec(
        SimSpec(
            horizon=args.horizon,
            replications=args.replications,
            burn_in=args.burn_in,
            thresholds=_parse_thresholds(args.thresholds),
            master_seed=args.seed,
        )
    )
    policies = [
        ("het", args.q_th, Policy(Heterogeneous(q_th=args.q_th, rho1=args.rho1, rho2=args.rho2))),
        ("exp", args.eta, Policy(Exp(eta=args.eta))),
        ("mw", args.alpha, Policy(MaxWeight(alpha=args.alpha))),
    ]
    for _, _, pol in policies:
        validate_policy(pol)

    results = []
    for name, param, pol in policies:
        results.append((name, param, pol, run_simulation(cfg, pol, spec, mode=args.estimator)))

    header = ["policy", "param", "decay_rate", "decay_stderr"]
    header += [f"mean_q_u{i}" for i in range(cfg.n_users)]
    header += [f"phi_s{m}_u{i}" for m in range(cfg.n_states) for i in range(cfg.n_users)]
    rows = []
    run_docs = []
    for name, param, pol, result in results:
        row = [
            name,
            param,
            result.decay.rate if result.decay else np.nan,
            result.decay.stderr if result.decay else np.nan,
        ]
        row += [result.mean_queues[i] for i in range(cfg.n_users)]
        row += [result.empirical_phi.phi[m, i] for m in range(cfg.n_states) for i in range(cfg.n_users)]
        rows.append(row)
        run_docs.append({"policy": policy_to_json(pol), **_sim_result_doc(result)})

    out = Path(args.out)
    _write_json(
        out / "compare.json",
        {"spec_echo": _spec_echo(args, cfg, spec, None), "runs": run_docs},
    )
    _write_csv(out / "compare.csv", header, rows)
    if args.svg:
        series = [
            {
                "label": name,
                "x": [e.threshold for e in result.overflow],
                "y": [e.probability for e in result.overflow],
            }
            for name, _, _, result in results
        ]
        _write_text(
            out / "compare.svg",
            svg.line_chart(series, title="Overflow probability by scheduler",
                           xlabel="threshold B", ylabel="P(max queue >= B)", log_y=True),
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schedlab",
        description="Queue-aware wireless scheduling lab: simulation and decay-rate analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="one (config, policy) simulation campaign")
    _add_common(p_sim)

    p_sweep = sub.add_parser("sweep", help="simulate over a policy-parameter list")
    _add_common(p_sweep)
    p_sweep.add_argument("--values", required=True, help="comma-separated parameter values")
    _add_iopt_options(p_sweep)

    p_iopt = sub.add_parser("iopt", help="optimal decay rate of the config")
    p_iopt.add_argument("--config", required=True)
    p_iopt.add_argument("--out", default="out")
    p_iopt.add_argument("--allow-unconverged", action="store_true")
    _add_iopt_options(p_iopt)

    p_reg = sub.add_parser("regions", help="decision-region map over two queue axes")
    p_reg.add_argument("--config", required=True)
    p_reg.add_argument("--policy", required=True)
    p_reg.add_argument("--axes", required=True, help="two user indices, e.g. 0,2")
    p_reg.add_argument("--grid-max", type=float, default=40.0)
    p_reg.add_argument("--grid-step", type=float, default=1.0)
    p_reg.add_argument("--fixed-queues", default=None, help="comma list for off-axis users")
    p_reg.add_argument("--out", default="out")

    p_cmp = sub.add_parser("compare", help="het vs exp vs mw under a shared seed")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--q-th", type=float, default=2.0)
    p_cmp.add_argument("--rho1", type=float, default=0.0)
    p_cmp.add_argument("--rho2", type=float, default=0.0)
    p_cmp.add_argument("--eta", type=float, default=0.25)
    p_cmp.add_argument("--alpha", type=float, default=7.0)
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.add_argument("--horizon", type=int, default=2_000_000)
    p_cmp.add_argument("--replications", type=int, default=16)
    p_cmp.add_argument("--burn-in", type=int, default=None)
    p_cmp.add_argument("--thresholds", default=None)
    p_cmp.add_argument(
        "--estimator",
        choices=[ESTIMATOR_STATIONARY, ESTIMATOR_EPISODE],
        default=ESTIMATOR_STATIONARY,
    )
    p_cmp.add_argument("--out", default="out")
    p_cmp.add_argument("--svg", action="store_true")

    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "iopt": cmd_iopt,
    "regions": cmd_regions,
    "compare": cmd_compare,
}

_USAGE_ERRORS = (
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
    KeyError,
    TypeError,
    ValueError,
)

_COMPUTE_ERRORS = (
    SolverFailureError,
    InsufficientEventsError,
    NoSamplesError,
    TraceUnavailableError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _COMPUTE_ERRORS as exc:
        print(f"schedlab: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (SchedLabError, *_USAGE_ERRORS) as exc:
        print(f"schedlab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
