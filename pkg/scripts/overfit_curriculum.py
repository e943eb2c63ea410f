"""Two-stage overfit run on 8 synthetic clips; prints loss and held-out hand error per stage."""
import argparse
import json

import torch

from wholebody.experiments import overfit_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--stage1", type=int, default=2000)
    ap.add_argument("--stage2", type=int, default=1000)
    ap.add_argument("--batch", type=int, default=2)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--log", default=None, help="JSONL training log path")
    ap.add_argument("--out", default=None, help="write the summary JSON here")
    args = ap.parse_args()
    torch.set_num_threads(1)
    res = overfit_experiment(args.stage1, args.stage2, args.batch, args.width, args.layers, args.seed,
                             log_path=args.log)
    summary = {k: v for k, v in res.items() if k not in ("model", "losses", "smoothed")}
    summary["ratio"] = summary["final_smoothed_loss"] / summary["step10_loss"]
    print(json.dumps(summary, indent=2))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(summary, f, indent=2)


if __name__ == "__main__":
    main()
