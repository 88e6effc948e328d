"""Train on the clustered synthetic fixture and print the metrics table.

    python scripts/run_synthetic.py --epochs 50 --seed 0
"""

import argparse

from ptln.data import Config
from ptln.evaluation import DEFAULT_SLICES, evaluate
from ptln.ingestion import SplitSpec, SyntheticSpec, generate_synthetic, split
from ptln.propagation import khop_friends
from ptln.training import fit


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--users", type=int, default=40)
    parser.add_argument("--items", type=int, default=80)
    parser.add_argument("--popularity", type=float, default=2.0)
    parser.add_argument("--k", type=int, default=1)
    parser.add_argument("--d1", type=int, default=16)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = SyntheticSpec(num_users=args.users, num_items=args.items, items_per_user=10,
                         popularity_exponent=args.popularity, seed=args.seed)
    train, test = split(generate_synthetic(spec), SplitSpec(0.2, seed=args.seed))
    cfg = Config(d1=args.d1, d2=max(1, args.d1 // 2), k=args.k, epochs=args.epochs, batch_size=16, seed=args.seed)
    params, history = fit(train, cfg, on_epoch=lambda r: print(f"epoch {r['epoch']:3d}  loss {r['total']:.4f}"))
    report = evaluate(params, train, test, khop_friends(train, cfg.k), cfg, slices=DEFAULT_SLICES)
    print(report.to_table())


if __name__ == "__main__":
    main()
