"""Pull/push sweep on the five-client toy: mean best accuracy per toy_lambda.

    python scripts/run_toy.py --lambdas=-0.2,-0.1,0,0.1,0.2 --seeds 10 --out results/toy.json
"""
import argparse
import json
from pathlib import Path

from diversifed import presets
from diversifed.orchestrator import run
from diversifed.reporting import aggregate_summaries, format_mean_std, summarize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lambdas", default="-0.1,0,0.1")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--separation", type=float, default=2.0)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = []
    for lam in (float(x) for x in args.lambdas.split(",")):
        runs = []
        for seed in range(args.seeds):
            cfg = presets.toy(lam, seed=seed, **{"dataset.separation": args.separation,
                                                 "dataset.noise": args.noise})
            runs.append(summarize(run(cfg)))
        best = aggregate_summaries(runs)
        final = aggregate_summaries(runs, "final_mean_accuracy")
        print(f"lambda={lam:+.2f}  best {format_mean_std(best)}  final {format_mean_std(final)}", flush=True)
        rows.append({"toy_lambda": lam, "best": best, "final": final})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
