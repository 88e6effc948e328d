"""Command-line entry point: prepare/synth data, train, eval and grid runs.

Every command writes a ``manifest.json`` next to its outputs recording the
full configuration, the dataset fingerprint, the command line and timings,
which is enough to re-run it exactly. When ``--out`` is omitted the output
goes under ``$PTLN_OUTPUT_DIR`` (default ``runs``).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from ptln.data import Config, check_shapes, load_params, save_params
from ptln.evaluation import DEFAULT_CUTOFFS, DEFAULT_SLICES, evaluate
from ptln.ingestion import (
    IngestionError,
    SplitSpec,
    SyntheticSpec,
    build_dataset,
    fingerprint,
    generate_synthetic_with_truth,
    load_interactions,
    load_social,
    read_processed,
    split,
    write_processed,
)
from ptln.propagation import khop_friends
from ptln.training import fit

log = logging.getLogger("ptln")

MANIFEST_SCHEMA = "ptln.manifest/1"
GRID_SCHEMA = "ptln.grid/1"
OUTPUT_ENV = "PTLN_OUTPUT_DIR"


def write_json_atomic(path: Path, payload) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _out_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, out: Path, **extra) -> None:
    payload = {"schema": MANIFEST_SCHEMA, "command": args.command, "argv": list(args.argv), **extra}
    write_json_atomic(out / "manifest.json", payload)


def _parse_cutoffs(text: str) -> tuple[int, ...]:
    try:
        cutoffs = tuple(sorted({int(v) for v in text.split(",") if v.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad cutoff list {text!r}") from None
    if not cutoffs or cutoffs[0] < 1:
        raise argparse.ArgumentTypeError("cutoffs must be positive integers")
    return cutoffs


def _parse_slices(text: str):
    """``"0-4,5-16,17+"`` -> ``((0, 4), (5, 16), (17, None))``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            if part.endswith("+"):
                out.append((int(part[:-1]), None))
            else:
                lo, hi = part.split("-")
                out.append((int(lo), int(hi)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad slice {part!r}; use LO-HI or LO+") from None
    return tuple(out)


# ---- config flags -------------------------------------------------------

_CONFIG_FLAGS = (
    ("--d1", "d1", int),
    ("--d2", "d2", int),
    ("--k", "k", int),
    ("--lr", "learning_rate", float),
    ("--dropout-keep", "dropout_keep", float),
    ("--lambda1", "lambda1", float),
    ("--lambda2", "lambda2", float),
    ("--lambda3", "lambda3", float),
    ("--neg-weight-item", "neg_weight_item", float),
    ("--neg-weight-social", "neg_weight_social", float),
    ("--epochs", "epochs", int),
    ("--batch", "batch_size", int),
    ("--seed", "seed", int),
    ("--init-std", "init_std", float),
)
_ABLATION_FLAGS = (
    ("--no-order-bias", "order_bias_on"),
    ("--no-attention", "friend_attention_on"),
    ("--no-reg", "regularizer_on"),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    defaults = Config()
    group = parser.add_argument_group("model and training")
    for flag, name, kind in _CONFIG_FLAGS:
        group.add_argument(flag, dest=name, type=kind, default=None, help=f"default {getattr(defaults, name)}")
    group.add_argument("--optimizer", choices=("adam", "sgd"), default=None, help="default adam")
    for flag, name in _ABLATION_FLAGS:
        group.add_argument(flag, dest=name, action="store_false", default=None)
    group.add_argument("--include-initial-once", dest="include_initial_once", action="store_true", default=None)


def config_from_args(args, base: Config | None = None) -> Config:
    base = base or Config()
    overrides = {f.name: getattr(args, f.name) for f in fields(Config) if getattr(args, f.name, None) is not None}
    return base.replace(**overrides)


def _add_split_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("train/test split")
    group.add_argument("--holdout", type=float, default=0.2, help="fraction of each user's positives held out")
    group.add_argument("--split-seed", type=int, default=0)
    group.add_argument("--min-train", type=int, default=1, help="positives always kept in train per user")


def _split_spec(args) -> SplitSpec:
    return SplitSpec(holdout_fraction=args.holdout, seed=args.split_seed, min_train=args.min_train)


# ---- commands -----------------------------------------------------------


def cmd_prepare(args) -> int:
    started = time.perf_counter()
    interactions = load_interactions(args.interactions, rating_threshold=args.threshold, skip_header=args.skip_header)
    social = load_social(args.social, symmetrize=args.symmetrize, skip_header=args.skip_header) if args.social else None
    dataset, id_maps = build_dataset(interactions, social)
    spec = _split_spec(args)
    train, test = split(dataset, spec)
    out = _out_dir(args, "prepared")
    digest = write_processed(out, dataset, train, test, spec, id_maps)
    _manifest(
        args,
        out,
        fingerprint=digest,
        inputs={"interactions": str(args.interactions), "social": str(args.social) if args.social else None},
        threshold=args.threshold,
        symmetrize=args.symmetrize,
        split=asdict(spec),
        counts={
            "users": dataset.num_users,
            "items": dataset.num_items,
            "positives": dataset.num_positives,
            "edges": dataset.num_edges,
            "discarded_ratings": interactions.discarded,
            "self_loops": social.self_loops if social else 0,
        },
        timings={"seconds": time.perf_counter() - started},
    )
    print(f"prepared {dataset.num_users} users, {dataset.num_items} items -> {out}")
    return 0


def cmd_synth(args) -> int:
    started = time.perf_counter()
    spec = SyntheticSpec(
        num_users=args.users,
        num_items=args.items,
        num_clusters=args.clusters,
        intra_cluster_edge_prob=args.intra,
        inter_cluster_edge_prob=args.inter,
        items_per_user=args.items_per_user,
        hop2_signal=args.hop2_signal,
        seed=args.synth_seed,
        popularity_exponent=args.popularity,
        cold_fraction=args.cold_fraction,
        cold_items_per_user=args.cold_items,
        relay_out_degree=args.relay_degree,
    )
    dataset, truth = generate_synthetic_with_truth(spec)
    split_spec = _split_spec(args)
    train, test = split(dataset, split_spec)
    out = _out_dir(args, "synth")
    digest = write_processed(out, dataset, train, test, split_spec)
    _manifest(
        args,
        out,
        fingerprint=digest,
        synthetic=asdict(spec),
        split=asdict(split_spec),
        cold_users=truth.cold_users,
        relay_users=truth.relay_users,
        timings={"seconds": time.perf_counter() - started},
    )
    print(f"synthetic data ({dataset.num_users} users, {dataset.num_items} items) -> {out}")
    return 0


def train_on(data_dir, config: Config, out: Path) -> tuple[dict, dict]:
    """Train on a processed directory, writing checkpoint and log into ``out``."""
    data = read_processed(data_dir)
    lines = []

    def record(entry):
        lines.append(json.dumps({k: v for k, v in entry.items() if k != "seconds"}, sort_keys=True))

    started = time.perf_counter()
    params, history = fit(data.train, config, on_epoch=record)
    seconds = time.perf_counter() - started
    save_params(out / "checkpoint.npz", params, config)
    write_text_atomic(out / "train_log.jsonl", "".join(line + "\n" for line in lines))
    timings = {"train_seconds": seconds, "epoch_seconds": [r["seconds"] for r in history]}
    return params, timings


def cmd_train(args) -> int:
    config = config_from_args(args)
    out = _out_dir(args, "train")
    _, timings = train_on(args.data, config, out)
    _manifest(
        args,
        out,
        config=config.to_dict(),
        seed=config.seed,
        fingerprint=fingerprint(args.data),
        data=str(args.data),
        paths={"checkpoint": str(out / "checkpoint.npz"), "log": str(out / "train_log.jsonl")},
        timings=timings,
    )
    print(f"trained K={config.k} D1={config.d1} D2={config.d2} for {config.epochs} epochs -> {out}")
    return 0


def evaluate_on(data_dir, params, config: Config, cutoffs, slices):
    data = read_processed(data_dir)
    check_shapes(params, data.train.num_users, data.train.num_items, config)
    hoods = khop_friends(data.train, config.k)
    return evaluate(params, data.train, data.test, hoods, config, cutoffs=cutoffs, slices=slices)


def cmd_eval(args) -> int:
    started = time.perf_counter()
    params, stored = load_params(args.checkpoint)
    config = config_from_args(args, stored)
    report = evaluate_on(args.data, params, config, args.cutoffs, args.slices)
    out = _out_dir(args, "eval")
    write_text_atomic(out / "report.txt", report.to_table())
    write_text_atomic(out / "report.json", report.to_json())
    _manifest(
        args,
        out,
        config=config.to_dict(),
        seed=config.seed,
        fingerprint=fingerprint(args.data),
        data=str(args.data),
        checkpoint=str(args.checkpoint),
        cutoffs=list(args.cutoffs),
        slices=[list(s) for s in args.slices or ()],
        paths={"table": str(out / "report.txt"), "report": str(out / "report.json")},
        timings={"seconds": time.perf_counter() - started},
    )
    sys.stdout.write(report.to_table())
    return 0


def load_grid(path) -> list[dict]:
    """A JSON list of override dicts, or a dict of lists expanded as a product."""
    payload = json.loads(Path(path).read_text())
    if isinstance(payload, dict):
        keys = sorted(payload)
        values = [payload[k] if isinstance(payload[k], list) else [payload[k]] for k in keys]
        cells = [dict(zip(keys, combo)) for combo in itertools.product(*values)] if keys else []
    elif isinstance(payload, list):
        cells = payload
    else:
        raise ValueError("grid file must hold a JSON list or object")
    if not cells or not all(isinstance(c, dict) for c in cells):
        raise ValueError(f"grid file {path} has no cells")
    return cells


def _grid_table(rows, cutoffs) -> str:
    header = ["cell", "status", "overrides"] + [f"Ndcg@{n}" for n in cutoffs] + [f"Reca@{n}" for n in cutoffs]
    body = []
    for row in rows:
        cells = [str(row["cell"]), row["status"], json.dumps(row["overrides"], sort_keys=True)]
        for metric in ("ndcg", "recall"):
            for n in cutoffs:
                cells.append(f"{row['metrics'][str(n)][metric]:.4f}" if row["status"] == "ok" else "-")
        body.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]) + "\n"


def cmd_grid(args) -> int:
    started = time.perf_counter()
    cells = load_grid(args.grid)
    base = config_from_args(args)
    out = _out_dir(args, "grid")
    cutoffs = tuple(sorted(set(args.cutoffs) | {10}))
    rows, timings = [], []
    for index, overrides in enumerate(cells):
        cell_dir = out / f"cell{index:03d}"
        cell_dir.mkdir(exist_ok=True)
        t0 = time.perf_counter()
        try:
            config = base.replace(**overrides)
            params, _ = train_on(args.data, config, cell_dir)
            report = evaluate_on(args.data, params, config, cutoffs, None)
            write_text_atomic(cell_dir / "report.json", report.to_json())
            rows.append({"cell": index, "status": "ok", "overrides": overrides, "metrics": report.to_dict()["metrics"]})
        except (ValueError, TypeError, FloatingPointError) as exc:
            log.warning("grid cell %d failed: %s", index, exc)
            rows.append({"cell": index, "status": "failed", "overrides": overrides, "error": str(exc)})
        timings.append(time.perf_counter() - t0)
    ok = [r for r in rows if r["status"] == "ok"]
    best = max(ok, key=lambda r: (r["metrics"]["10"]["ndcg"], -r["cell"]))["cell"] if ok else None
    summary = {"schema": GRID_SCHEMA, "base": base.to_dict(), "cutoffs": list(cutoffs), "rows": rows, "best": best}
    write_json_atomic(out / "grid.json", summary)
    table = _grid_table(rows, cutoffs) + (f"best by NDCG@10: cell {best}\n" if best is not None else "no cell succeeded\n")
    write_text_atomic(out / "grid.txt", table)
    _manifest(
        args,
        out,
        config=base.to_dict(),
        seed=base.seed,
        fingerprint=fingerprint(args.data),
        data=str(args.data),
        grid=str(args.grid),
        paths={"summary": str(out / "grid.json"), "table": str(out / "grid.txt")},
        timings={"seconds": time.perf_counter() - started, "cell_seconds": timings},
    )
    sys.stdout.write(table)
    return 0 if ok else 1


# ---- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptln", description="Social/item transfer recommender experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--threads", type=int, default=1, help="BLAS worker threads (pinned for reproducibility)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest rating and trust files into a processed dataset directory")
    p.add_argument("--interactions", required=True, help="user,item,rating file (tab or comma separated)")
    p.add_argument("--social", help="truster,trustee file")
    p.add_argument("--threshold", type=float, default=4.0, help="keep ratings >= this value")
    p.add_argument("--symmetrize", action="store_true", help="treat trust edges as undirected")
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--out")
    _add_split_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a planted-cluster synthetic dataset")
    s = SyntheticSpec()
    p.add_argument("--users", type=int, default=s.num_users)
    p.add_argument("--items", type=int, default=s.num_items)
    p.add_argument("--clusters", type=int, default=s.num_clusters)
    p.add_argument("--intra", type=float, default=s.intra_cluster_edge_prob, help="within-cluster trust probability")
    p.add_argument("--inter", type=float, default=s.inter_cluster_edge_prob, help="across-cluster trust probability")
    p.add_argument("--items-per-user", type=int, default=s.items_per_user)
    p.add_argument("--popularity", type=float, default=s.popularity_exponent, help="within-block popularity exponent")
    p.add_argument("--hop2-signal", action="store_true", help="add cold users whose taste follows 2-hop friends")
    p.add_argument("--cold-fraction", type=float, default=s.cold_fraction)
    p.add_argument("--cold-items", type=int, default=s.cold_items_per_user)
    p.add_argument("--relay-degree", type=int, default=s.relay_out_degree)
    p.add_argument("--synth-seed", type=int, default=s.seed)
    p.add_argument("--out")
    _add_split_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a processed dataset directory")
    p.add_argument("data", help="processed dataset directory")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    p.add_argument("data", help="processed dataset directory")
    p.add_argument("checkpoint")
    p.add_argument("--cutoffs", type=_parse_cutoffs, default=DEFAULT_CUTOFFS, help="comma list, default 5,10,15")
    p.add_argument(
        "--slices", type=_parse_slices, nargs="?", const=DEFAULT_SLICES, default=None,
        help="add train-count slices; bare flag uses 0-4,5-16,17+",
    )
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="train and evaluate every cell of a grid file")
    p.add_argument("data", help="processed dataset directory")
    p.add_argument("grid", help="JSON list of overrides or object of value lists")
    p.add_argument("--cutoffs", type=_parse_cutoffs, default=DEFAULT_CUTOFFS)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["ptln", *argv]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (IngestionError, ValueError, OSError, FloatingPointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
