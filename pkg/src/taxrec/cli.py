"""Command-line entry point: ``taxrec generate|train|evaluate|recommend|export``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .data.checkpoint import load_checkpoint, save_checkpoint
from .data.synthetic import (GROUND_TRUTH_FILE, TAXONOMY_FILE, TRANSACTIONS_FILE, SynthSpec,
                             generate_synthetic)
from .data.transactions import load_dataset
from .errors import CheckpointError, DivergenceError, TaxonomyFormatError, TaxrecError
from .evaluation import SplitSpec, append_results, evaluate, filter_repeats, split
from .factors import DecayWeights, TFModel, export_factors
from .manifest import command_args, read_manifest, update_manifest
from .ranker import CascadeConfig, recommend_topk
from .trainer import ModelConfig, preset, train

CHECKPOINT_NAME = "model.ckpt"
DIAGNOSTICS_NAME = "diagnostics.csv"
RESULTS_NAME = "results.csv"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

log = logging.getLogger("taxrec")


class UsageError(Exception):
    pass


def _floats(flag):
    def parse(text):
        try:
            return [float(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag}: expected comma-separated numbers") from None
    return parse


def _ints(flag):
    def parse(text):
        try:
            return [int(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag}: expected comma-separated integers") from None
    return parse


def _data_args(p):
    p.add_argument("--data", help="directory holding taxonomy.tsv and transactions.txt")
    p.add_argument("--taxonomy", help="taxonomy TSV (overrides --data)")
    p.add_argument("--transactions", help="transactions file (overrides --data)")


def _model_args(p):
    p.add_argument("--model", help="training output directory (checkpoint + manifest)")
    p.add_argument("--checkpoint", help="checkpoint file (overrides --model)")


def _cascade_args(p):
    p.add_argument("--mode", choices=["exhaustive", "cascaded"], default="exhaustive")
    p.add_argument("--cascade-k", type=_floats("--cascade-k"),
                   help="one fraction for every level, or one per level from the top down")
    p.add_argument("--cascade-leaf", type=float,
                   help="keep upper levels whole and cut the leaf level to this fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic corpus")
    d = SynthSpec()
    g.add_argument("--out")
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--users", type=int, default=d.users)
    g.add_argument("--branching", type=_ints("--branching"), default=list(d.branching))
    g.add_argument("--tx-mean", type=float, default=d.tx_mean)
    g.add_argument("--basket-min", type=int, default=d.basket_min)
    g.add_argument("--basket-max", type=int, default=d.basket_max)
    g.add_argument("--concentration", type=float, default=d.concentration)
    g.add_argument("--taste", type=float, default=d.taste)
    g.add_argument("--beta", type=float, default=d.beta)
    g.add_argument("--cold-fraction", type=float, default=d.cold_fraction)
    g.add_argument("--release", type=float, default=d.release)

    t = sub.add_parser("train", help="split the log and train a model")
    _data_args(t)
    t.add_argument("--out")
    t.add_argument("--preset", help="mf0, mf1, fpmc, tf40 or tf41")
    t.add_argument("--factors", type=int, dest="K")
    t.add_argument("--lambda", type=float, dest="lam")
    t.add_argument("--epsilon", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--max-prev-transactions", type=int, dest="N")
    t.add_argument("--taxonomy-update-levels", type=int, dest="levels")
    t.add_argument("--sibling-mix", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--cache-threshold", type=float)
    t.add_argument("--mu", type=float, default=0.5, help="mean train fraction of the split")
    t.add_argument("--split-sigma", type=float, default=0.05)
    t.add_argument("--holdout-T", type=int, default=1)
    t.add_argument("--no-split", action="store_true", help="train on the whole log")
    t.add_argument("--validate", action="store_true",
                   help="report validation AUC per epoch in the diagnostics")

    e = sub.add_parser("evaluate", help="score a model on held-out transactions")
    _data_args(e)
    _model_args(e)
    _cascade_args(e)
    e.add_argument("--mu", type=_floats("--mu"),
                   help="comma-separated sweep; values other than the training split retrain")
    e.add_argument("--split-sigma", type=float)
    e.add_argument("--holdout-T", type=int)
    e.add_argument("--seed", type=int, help="split seed (default: the training seed)")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out", help="output directory (default: the model directory)")
    e.add_argument("--results", help=f"results CSV (default: OUT/{RESULTS_NAME})")

    r = sub.add_parser("recommend", help="top-k recommendations per user")
    _data_args(r)
    _model_args(r)
    _cascade_args(r)
    r.add_argument("--users", type=_ints("--users"), help="user ids (default: every user)")
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--level", type=int, default=0)
    r.add_argument("--filter-repeats", action="store_true",
                   help="drop leaves the user already bought")
    r.add_argument("--output", help="CSV path (default: stdout)")

    x = sub.add_parser("export", help="dump factors as CSV")
    _data_args(x)
    _model_args(x)
    x.add_argument("--output")

    for p in (g, t, e, r, x):
        p.add_argument("--manifest", help="replay the arguments recorded in a manifest")
    return parser


# ---------------------------------------------------------------- helpers
def _dataset(args):
    base = Path(args.data) if args.data else None
    tax = args.taxonomy or (base / TAXONOMY_FILE if base else None)
    trans = args.transactions or (base / TRANSACTIONS_FILE if base else None)
    if tax is None or trans is None:
        raise UsageError("give --data or both --taxonomy and --transactions")
    for p in (tax, trans):
        if not Path(p).exists():
            raise UsageError(f"missing input file {p}")
    return load_dataset(tax, trans), str(tax), str(trans)


def _checkpoint_path(args) -> Path:
    if args.checkpoint:
        path = Path(args.checkpoint)
    elif args.model:
        path = Path(args.model) / CHECKPOINT_NAME
    else:
        raise UsageError("give --model or --checkpoint")
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    return path


def _training_manifest(ckpt: Path) -> dict | None:
    try:
        return read_manifest(ckpt.parent)["commands"]["train"]
    except (OSError, KeyError, ValueError):
        return None


def _load_model(args, data):
    path = _checkpoint_path(args)
    ck = load_checkpoint(path, data.taxonomy, data.user_count)
    return TFModel(ck.store, data.taxonomy, ck.levels, DecayWeights(ck.N, ck.alpha)), ck, path


def _cascade(args, depth):
    if args.mode == "exhaustive":
        if args.cascade_k or args.cascade_leaf is not None:
            raise UsageError("--cascade-k/--cascade-leaf need --mode cascaded")
        return "exhaustive"
    if args.cascade_leaf is not None:
        if args.cascade_k:
            raise UsageError("use either --cascade-k or --cascade-leaf")
        return CascadeConfig.leaf_only(args.cascade_leaf, depth)
    ks = args.cascade_k or [1.0]
    if len(ks) == 1:
        return CascadeConfig.uniform(ks[0], depth)
    if len(ks) == depth - 1:
        ks = ks + [1.0]  # internal levels only; every child of a surviving parent is scored
    if len(ks) != depth:
        raise UsageError(f"--cascade-k needs 1, {depth - 1} or {depth} values, got {len(ks)}")
    return CascadeConfig(tuple(ks))


def _recorded(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("manifest", "verbose")}


# --------------------------------------------------------------- commands
def cmd_generate(args) -> int:
    if len(args.branching) < 2 or any(b < 2 for b in args.branching):
        raise UsageError("--branching: need at least two levels with >= 2 children each, "
                         f"got {','.join(map(str, args.branching))}")
    try:
        spec = SynthSpec(users=args.users, branching=tuple(args.branching), tx_mean=args.tx_mean,
                         basket_min=args.basket_min, basket_max=args.basket_max,
                         concentration=args.concentration, taste=args.taste, beta=args.beta,
                         cold_fraction=args.cold_fraction, release=args.release, seed=args.seed)
    except TaxrecError as exc:
        raise UsageError(f"invalid generator flags: {exc}") from exc
    paths = generate_synthetic(spec, args.out)
    update_manifest(args.out, "generate", {"args": _recorded(args),
                                           "files": [str(p) for p in paths]})
    print(json.dumps({"taxonomy": str(paths[0]), "transactions": str(paths[1]),
                      "ground_truth": str(paths[2])}))
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    overrides = {k: getattr(args, k) for k in
                 ("K", "lam", "epsilon", "alpha", "N", "levels", "sibling_mix", "epochs",
                  "threads", "seed", "cache_threshold") if getattr(args, k) is not None}
    if args.preset:
        return preset(args.preset, **overrides)
    return ModelConfig(**overrides)


def cmd_train(args) -> int:
    config = _model_config(args)
    data, tax_path, trans_path = _dataset(args)
    config.resolved_levels(data.taxonomy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = None
    validation = None
    train_log = data
    if not args.no_split:
        spec = SplitSpec(args.mu, args.split_sigma, args.holdout_T, config.seed)
        parts = split(data, spec)
        train_log = parts.train
        if args.validate and len(parts.validation):
            validation = parts.validation
    result = train(train_log, data.taxonomy, config, validation=validation)
    save_checkpoint(result.store, config, out / CHECKPOINT_NAME, data.taxonomy)
    result.write_diagnostics(out / DIAGNOSTICS_NAME)
    update_manifest(out, "train", {
        "args": _recorded(args), "config": config.to_dict(),
        "split": None if spec is None else asdict(spec),
        "files": {"taxonomy": tax_path, "transactions": trans_path,
                  "checkpoint": str(out / CHECKPOINT_NAME),
                  "diagnostics": str(out / DIAGNOSTICS_NAME)},
    })
    last = result.epochs[-1]
    print(json.dumps({"checkpoint": str(out / CHECKPOINT_NAME), "epochs": len(result.epochs),
                      "tuples": result.tuples, "mean_c": last.mean_c,
                      "config_hash": config.config_hash()}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data, _, _ = _dataset(args)
    model, ck, path = _load_model(args, data)
    trained = _training_manifest(path)
    trained_split = (trained or {}).get("split") or {}
    config = ModelConfig.from_dict(trained["config"]) if trained else ModelConfig(
        K=ck.K, N=ck.N, alpha=ck.alpha, levels=ck.levels)
    mode = _cascade(args, data.taxonomy.depth)
    mus = args.mu or ([trained_split["mu"]] if "mu" in trained_split else None)
    if not mus:
        raise UsageError("--mu is required when the checkpoint has no training split recorded")
    sigma = args.split_sigma if args.split_sigma is not None else trained_split.get("sigma", 0.05)
    T = args.holdout_T if args.holdout_T is not None else trained_split.get("T", 1)
    seed = args.seed if args.seed is not None else trained_split.get("seed", config.seed)
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    results = Path(args.results) if args.results else out / RESULTS_NAME
    levels = config.resolved_levels(data.taxonomy)
    rows = []
    for mu in mus:
        spec = SplitSpec(mu, sigma, T, seed)
        parts = split(data, spec)
        same = trained_split and all(trained_split.get(k) == v for k, v in vars(spec).items())
        if same or not trained:
            use = model
            retrained = False
        else:
            use = train(parts.train, data.taxonomy, config).model
            retrained = True
        test = filter_repeats(parts.test)
        report = evaluate(use, test, mode, threads=args.threads)
        report.extra.update({"mu": mu, "mode": args.mode, "retrained": retrained})
        print(report.to_json())
        rows.append(report.csv_row(config, mu, levels))
    append_results(results, rows)
    update_manifest(out, "evaluate", {"args": _recorded(args), "results": str(results),
                                      "checkpoint": str(path)})
    return EXIT_OK


def cmd_recommend(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    data, _, _ = _dataset(args)
    model, _, path = _load_model(args, data)
    tax = data.taxonomy
    if not 0 <= args.level < tax.depth:
        raise UsageError(f"--level must lie in [0, {tax.depth - 1}]")
    mode = _cascade(args, tax.depth)
    label_to_user = {int(lbl): u for u, lbl in enumerate(data.user_labels)}
    if args.users:
        missing = [u for u in args.users if u not in label_to_user]
        if missing:
            raise UsageError(f"--users: unknown user ids {missing}")
        users = [label_to_user[u] for u in args.users]
    else:
        users = range(data.user_count)
    fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["user_id", "rank", "node_id", "score", "level"])
        ext = tax.external_ids
        for u in users:
            n = data.transaction_count(u)
            history = data.history(u, n, model.decay.N)
            exclude = data.user_items(u) if args.filter_repeats and args.level == 0 else None
            res = recommend_topk(model, u, history, args.k, mode, args.level, exclude)
            for rank, (node, score) in enumerate(res.entries, 1):
                out.writerow([int(data.user_labels[u]), rank, int(ext[node]), repr(score),
                              args.level])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.output:
        update_manifest(Path(args.output).parent, "recommend",
                        {"args": _recorded(args), "checkpoint": str(path)})
    return EXIT_OK


def cmd_export(args) -> int:
    data, _, _ = _dataset(args)
    model, _, path = _load_model(args, data)
    export_factors(model, args.output)
    update_manifest(Path(args.output).parent, "export",
                    {"args": _recorded(args), "checkpoint": str(path)})
    return EXIT_OK


# checked after a manifest replay has filled in defaults
REQUIRED = {"generate": ("out",), "train": ("out",), "export": ("output",)}

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "recommend": cmd_recommend, "export": cmd_export}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.manifest:
        try:
            stored = command_args(read_manifest(args.manifest), args.command)
        except (OSError, ValueError, KeyError) as exc:
            parser.error(f"--manifest: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        stored.pop("command", None)
        sub.set_defaults(**stored)
        args = parser.parse_args(argv)
    missing = [f"--{name}" for name in REQUIRED.get(args.command, ()) if not getattr(args, name)]
    if missing:
        parser.error(f"{args.command}: the following arguments are required: {', '.join(missing)}")
    return args


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"taxrec: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, TaxrecError, TaxonomyFormatError, CheckpointError, OSError) as exc:
        print(f"taxrec: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
