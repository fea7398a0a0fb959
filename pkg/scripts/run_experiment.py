#!/usr/bin/env python3
"""End-to-end experiment driver on the synthetic corpus.

Generates the fixture, splits it, attaches stub comments, trains the full
contrastive model, then runs every evaluation stage: in-distribution
metrics, threshold sweep, latency, PCA export. All artifacts land in the
chosen output directory.
"""

import argparse
import json
import sys
from pathlib import Path

from vulcontrast.cli import run


def sh(argv):
    code = run(argv)
    if code != 0:
        sys.exit(f"step failed (exit {code}): {' '.join(argv)}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/experiment")
    parser.add_argument("--count", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--fine-tuning-only", action="store_true",
                        help="ablate all contrastive terms")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = out / "corpus.jsonl"

    sh(["make-fixture", "--count", str(args.count), "--seed", "13",
        "--output", str(corpus)])
    sh(["stats", "--input", str(corpus),
        "--output", str(out / "stats.json")])
    sh(["split", "--input", str(corpus), "--seed", str(args.seed),
        "--fractions", "0.8/0.1/0.1", "--output-prefix", str(out / "part")])
    sh(["comment", "--input", str(out / "part.train.jsonl"),
        "--output", str(out / "train.commented.jsonl")])

    train_cmd = ["train", "--train", str(out / "train.commented.jsonl"),
                 "--val", str(out / "part.val.jsonl"),
                 "--seed", str(args.seed),
                 "--checkpoint", str(out / "model"),
                 "--loss-log", str(out / "loss.csv"),
                 "--output", str(out / "train.json")]
    if args.fine_tuning_only:
        train_cmd.append("--fine-tuning-only")
    sh(train_cmd)

    sh(["eval", "--checkpoint", str(out / "model"),
        "--input", str(out / "part.test.jsonl"),
        "--predictions", str(out / "predictions.json"),
        "--output", str(out / "eval.json")])
    sh(["bench-latency", "--checkpoint", str(out / "model"),
        "--input", str(out / "part.test.jsonl"),
        "--output", str(out / "latency.json")])
    sh(["pca-export", "--checkpoint", str(out / "model"),
        "--input", str(out / "part.test.jsonl"),
        "--output", str(out / "pca.csv")])

    summary = json.loads((out / "eval.json").read_text())
    print(f"test F1 {summary['f1']:.2f}%  "
          f"(P {summary['precision']:.2f}%, R {summary['recall']:.2f}%) "
          f"-> artifacts in {out}/")


if __name__ == "__main__":
    main()
