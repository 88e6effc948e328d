"""Full model against its three ablations, through the command-line interface.

    python scripts/ablation.py --out runs/ablation
"""

import argparse
import json
from pathlib import Path

from ptln.cli import main as ptln

VARIANTS = {"full": [], "no-order-bias": ["--no-order-bias"], "no-attention": ["--no-attention"], "no-reg": ["--no-reg"]}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--epochs", default="30")
    parser.add_argument("--seed", default="0")
    args = parser.parse_args()

    out = Path(args.out)
    data = out / "data"
    if ptln(["synth", "--out", str(data), "--hop2-signal", "--users", "160", "--popularity", "1.0"]):
        raise SystemExit(1)
    flags = ["--d1", "16", "--d2", "8", "--epochs", args.epochs, "--batch", "32", "--seed", args.seed]
    rows = []
    for name, extra in VARIANTS.items():
        run = out / name
        ptln(["train", str(data), "--out", str(run), *flags, *extra])
        ptln(["eval", str(data), str(run / "checkpoint.npz"), "--out", str(run), "--slices"])
        report = json.loads((run / "report.json").read_text())
        rows.append((name, report["metrics"]["10"]["ndcg"], report["metrics"]["10"]["recall"]))
    print(f"{'variant':15s} {'NDCG@10':>8s} {'Recall@10':>9s}")
    for name, ndcg, recall in rows:
        print(f"{name:15s} {ndcg:8.4f} {recall:9.4f}")


if __name__ == "__main__":
    main()
