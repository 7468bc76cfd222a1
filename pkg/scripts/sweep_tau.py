"""Temperature sweep for DiversiFed on the baseline blobs setup."""
import argparse

from diversifed import presets
from diversifed.orchestrator import run
from diversifed.reporting import aggregate_summaries, format_mean_std, summarize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--taus", default="0.5,0.7,0.9,1.1")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--scheme", default="pathological", choices=["pathological", "dirichlet", "practical"])
    args = ap.parse_args()
    for tau in (float(t) for t in args.taus.split(",")):
        runs = [summarize(run(presets.baseline("diversifed", seed=s, tau=tau,
                                               **{"partition.scheme": args.scheme})))
                for s in range(args.seeds)]
        print(f"tau={tau:.2f}  {format_mean_std(aggregate_summaries(runs))}", flush=True)


if __name__ == "__main__":
    main()
