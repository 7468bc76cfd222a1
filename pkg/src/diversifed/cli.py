"""Command line entry point.

    python -m diversifed run --config run.cfg --lambda 2 --tau 1
    python -m diversifed partition --set n_clients=40 --out part.json
    python -m diversifed toy --lambdas -0.1,0,0.1 --seeds 10
    python -m diversifed check-grad
    python -m diversifed sweep --preset baseline --seeds 5 --grid lambda=0,2

Exit status: 0 on success, 1 on a configuration or validation error, 2 when
the run itself fails (I/O, a failed self-check, numerical trouble).
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys

from . import gradcheck, presets
from .config import KEYS, ConfigError, RunConfig, parse_config
from .orchestrator import build_datasets, build_partition, run
from .reporting import MetricsSink, aggregate_summaries, format_mean_std, summarize

log = logging.getLogger("diversifed")

# dedicated flags -> flat config keys
FLAG_KEYS = {
    "method": "method",
    "clients": "n_clients",
    "rounds": "rounds",
    "epochs": "local_epochs",
    "seed": "seed",
    "lam": "lambda",
    "tau": "tau",
    "alpha": "alpha_t",
    "dirichlet_alpha": "partition.alpha",
    "scheme": "partition.scheme",
    "participation": "participation_fraction",
    "workers": "workers",
    "csv": "output.csv",
    "json": "output.json",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _add_config_args(p: argparse.ArgumentParser, run_flags: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=sorted(presets.PRESETS), help="start from a desk-scale preset")
    p.add_argument("--set", dest="sets", type=_kv, action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--method")
    p.add_argument("--clients", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme")
    p.add_argument("--dirichlet-alpha", type=float)
    if run_flags:
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--alpha", type=float, help="server step size alpha_t")
        p.add_argument("--participation", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--csv")
        p.add_argument("--json")


def config_from_args(args, default_base=None) -> RunConfig:
    overrides = {}
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    for key, value in args.sets:
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown config key")
        overrides[key] = value
    base = default_base
    if args.preset:
        base = presets.PRESETS[args.preset]()
    return parse_config(args.config, overrides, base)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    with MetricsSink(cfg.output_csv or None, cfg.output_json or None) as sink:
        report = run(cfg, on_round=sink)
        summary = sink.emit_summary(report)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2))
    return 0


def cmd_partition(args) -> int:
    cfg = config_from_args(args)
    train, test = build_datasets(cfg)
    spec = build_partition(cfg, train, test)
    if args.out:
        spec.dump(args.out)
        print(f"wrote {cfg.n_clients} clients to {args.out}")
    else:
        print(json.dumps(spec.to_json()))
    return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def cmd_toy(args) -> int:
    base = config_from_args(args, default_base=presets.toy()).replace(method="toy_pullpush")
    rows = []
    for lam in args.lambdas:
        summaries = [summarize(run(base.replace(toy_lambda=lam, seed=base.seed + s)))
                     for s in range(args.seeds)]
        agg = aggregate_summaries(summaries)
        rows.append({"toy_lambda": lam, **agg})
        print(f"lambda={lam:+g}  best mean acc {format_mean_std(agg)}  (n={agg['n']})", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


def cmd_check_grad(args) -> int:
    results = gradcheck.run_all(pools=args.pools, grad_cases=args.cases, seed=args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 2


def _grid(entries: list[str]) -> list[dict]:
    axes = []
    for entry in entries:
        key, values = _kv(entry)
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown config key")
        axes.append([(key, v) for v in values.split(",")])
    return [dict(combo) for combo in itertools.product(*axes)] or [{}]


def cmd_sweep(args) -> int:
    base = config_from_args(args)
    points = _grid(args.grid)
    for point in points:
        base.replace(**point).validate()
    results = []
    for point in points:
        summaries = [summarize(run(base.replace(**point, seed=base.seed + s).validate()))
                     for s in range(args.n_seeds)]
        agg = aggregate_summaries(summaries)
        label = " ".join(f"{k}={v}" for k, v in point.items()) or base.method
        print(f"{label}  best mean acc {format_mean_std(agg)}  (n={agg['n']})", flush=True)
        results.append({"point": point, "aggregate": agg, "runs": summaries})
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diversifed", description="Federated training with model-distance anchors.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="execute one configured run")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("partition", help="generate a client partition and dump it as JSON")
    _add_config_args(p, run_flags=False)
    p.add_argument("--out", help="output path (stdout if omitted)")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("toy", help="pull/push sweep over toy_lambda, aggregated over seeds")
    _add_config_args(p, run_flags=False)
    p.add_argument("--lambdas", type=_floats, default=[-0.1, 0.0, 0.1])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("check-grad", help="finite-difference and anchor identity self-checks")
    p.add_argument("--pools", type=int, default=1000)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("sweep", help="repeat runs over seeds and a parameter grid")
    _add_config_args(p)
    p.add_argument("--seeds", dest="n_seeds", type=int, default=1)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def _glue_negative_lists(argv: list[str]) -> list[str]:
    # argparse reads "-0.1,0,0.1" as an option; bind it to --lambdas explicitly
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--lambdas" and i + 1 < len(argv):
            out.append(f"--lambdas={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_glue_negative_lists(argv))
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
