"""DiversiFed vs Separate vs FedAvg on ten pathological (c=2) blob clients.

Writes one CSV per (method, seed) plus an aggregate JSON into --outdir.
"""
import argparse
import json
from pathlib import Path

from diversifed import presets
from diversifed.orchestrator import run
from diversifed.reporting import MetricsSink, aggregate_summaries, format_mean_std

METHODS = ("diversifed", "separate", "fedavg")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--participation", type=float, default=1.0)
    ap.add_argument("--lam", type=float, default=2.0)
    ap.add_argument("--outdir", default="results/baselines")
    args = ap.parse_args()

    out = Path(args.outdir)
    table = {}
    for method in METHODS:
        summaries = []
        for seed in range(args.seeds):
            cfg = presets.baseline(method, seed=seed, rounds=args.rounds,
                                   participation_fraction=args.participation, **{"lambda": args.lam})
            with MetricsSink(out / f"{method}_seed{seed}.csv", out / f"{method}_seed{seed}.json") as sink:
                summaries.append(sink.emit_summary(run(cfg, on_round=sink)))
        table[method] = aggregate_summaries(summaries)
        print(f"{method:<11} {format_mean_std(table[method])}", flush=True)
    (out / "aggregate.json").write_text(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
