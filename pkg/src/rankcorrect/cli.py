"""rankcorrect command line: prep, train, eval, simulate, sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
Verbosity comes from the RANKCORRECT_LOG environment variable (e.g. DEBUG).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path


from .core import load_model, save_model
from .data import (
    CacheError,
    PrepConfig,
    load_cache,
    load_interactions,
    prepare,
    prepare_synthetic,
    read_cache_hash,
    save_cache,
)
from .experiments import run
from .metrics import TEST, TUNING, evaluate
from .simulation import simulate
from .training import Algorithm, TrainConfig, TrainingDiverged

logger = logging.getLogger("rankcorrect")

CACHE_NAME = "cache.bin"
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _write_manifest(out: Path, command: str, artifacts, config: dict) -> None:
    path = out / MANIFEST_NAME
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest[command] = {
        "artifacts": sorted(str(a) for a in artifacts),
        "config": config,
        "config_hash": _config_hash(config),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_config_file(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc


def _merge(defaults: dict, file_cfg: dict, flags: dict, known) -> dict:
    unknown = set(file_cfg) - set(known)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_cfg)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _int_list(text: str):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str):
    return [x.strip() for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------
# prep

PREP_FLAGS = {f.name: f.name.replace("_", "-") for f in fields(PrepConfig)}


def cmd_prep(args) -> int:
    if args.input is None and not args.synthetic:
        raise UsageError("prep needs --input PATH or --synthetic")
    if args.input is not None and not Path(args.input).is_file():
        raise UsageError(f"input file not found: {args.input}")
    file_cfg = _read_config_file(args.config)
    flags = {name: getattr(args, name) for name in PREP_FLAGS}
    cfg_dict = _merge(asdict(PrepConfig()), file_cfg, flags, PREP_FLAGS)
    try:
        config = PrepConfig(**cfg_dict)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / CACHE_NAME
    echo = {**asdict(config), "input": args.input, "format": args.format,
            "synthetic": bool(args.synthetic)}
    if cache.exists() and not args.force:
        try:
            if read_cache_hash(cache) == config.config_hash():
                load_cache(cache, config)
                print(f"cache {cache} is up to date; use --force to rebuild")
                return 0
        except CacheError:
            pass
    if args.synthetic:
        prepared = prepare_synthetic(config)
    else:
        raw = load_interactions(args.input, args.format)
        prepared = prepare(raw, config)
    save_cache(prepared, cache)
    _write_manifest(out, "prep", [CACHE_NAME], echo)

    split = prepared.split
    n_holdout = sum(h.size for h in split.holdout.values())
    stats = {
        "users": split.n_users,
        "items": prepared.catalog.n_items,
        "interactions": len(split.train) + n_holdout,
        "train_interactions": len(split.train),
        "holdout_interactions": n_holdout,
        "tuning_users": len(split.users(TUNING)),
        "test_users": len(split.users(TEST)),
    }
    for k, v in stats.items():
        print(f"{k}: {v}")
    return 0


# ---------------------------------------------------------------------------
# train

TRAIN_FLAGS = {
    "loss": "loss", "algorithm": "algorithm", "correction": "correction", "k": "k",
    "m": "m", "eta": "eta", "reg": "lambda", "dim": "dim", "epochs": "epochs",
    "max_trials": "max-trials", "seed": "seed", "replacement": "replacement",
    "eval_every": "eval-every", "early_stop_patience": "patience", "dtype": "dtype",
}


def _train_config(args) -> TrainConfig:
    file_cfg = _read_config_file(getattr(args, "config", None))
    flags = {name: getattr(args, name) for name in TRAIN_FLAGS}
    cfg = _merge(TrainConfig().to_dict(), file_cfg, flags, TRAIN_FLAGS)
    try:
        config = TrainConfig.from_dict(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if config.algorithm is Algorithm.ITERATIVE:
        if args.correction is not None:
            logger.warning("--correction applies to batched ranks only; ignored for iterative")
        if args.m is not None or args.k is not None:
            logger.warning("--k/--m are ignored by the iterative algorithm")
    return config


def _load_cache_arg(path):
    if path is None or not Path(path).is_file():
        raise UsageError(f"cache not found: {path}; run `rankcorrect prep` first")
    return load_cache(path)


def cmd_train(args) -> int:
    prepared = _load_cache_arg(args.cache)
    config = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run(prepared, config, log_path=out / "train_log.jsonl")
    save_model(result.model, out / "model.ckpt")
    echo = {**config.to_dict(), "cache": str(args.cache)}
    (out / "train_config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "train", ["model.ckpt", "train_log.jsonl", "train_config.json"], echo)
    t = result.tuning
    print(f"best_epoch: {result.report.best_epoch}")
    print(f"stop_reason: {result.report.stop_reason}")
    print(f"tuning recall20={t.recall20:.6f} recall50={t.recall50:.6f} ndcg100={t.ndcg100:.6f}")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    prepared = _load_cache_arg(args.cache)
    if args.checkpoint is None or not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model = load_model(args.checkpoint)
    if model.n_contexts != prepared.split.n_users or model.n_items != prepared.catalog.n_items:
        print(f"error: checkpoint is {model.n_contexts}x{model.n_items} but cache has "
              f"{prepared.split.n_users} users x {prepared.catalog.n_items} items",
              file=sys.stderr)
        return 1
    report = evaluate(model, prepared.split, args.partition, ndcg_cutoffs=args.ndcg_cutoffs)
    report.config = {"checkpoint": str(args.checkpoint), "cache": str(args.cache)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"eval_{args.partition}.txt"
    (out / name).write_text(report.to_text())
    if args.log is not None:
        with open(args.log, "a") as f:
            f.write(json.dumps({"partition": args.partition, "n_users": report.n_users,
                                **report.flat()}, sort_keys=True) + "\n")
    _write_manifest(out, "eval", [name], report.config)
    sys.stdout.write(report.to_text())
    return 0


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    if not 1 <= args.true_rank <= args.n or args.n < 2:
        raise UsageError("need n >= 2 and 1 <= true-rank <= n")
    if args.mode == "without" and args.m > args.n - 1:
        raise UsageError("without replacement needs m <= n - 1")
    res = simulate(args.n, args.true_rank, args.m, args.trials, args.seed, args.mode)
    stat, pval, dof = res.chi_square()
    summary = {
        "n": args.n, "true_rank": args.true_rank, "m": args.m, "trials": args.trials,
        "mode": args.mode, "seed": args.seed,
        "mean_sampled_rank": res.mean_sampled(), "se_sampled_rank": res.se_sampled(),
        "analytic_mean_sampled_rank": 1 + args.m * res.p,
        "mean_estimated_rank": res.mean_estimated(), "se_estimated_rank": res.se_estimated(),
        "chi_square": stat, "chi_square_dof": dof, "p_value": pval,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values, observed, expected = res.distribution()
    with open(out / "simulate_distribution.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sampled_rank", "estimated_rank", "count", "expected_count"])
        for v, o, e in zip(values, observed, expected):
            est = 1 + (v - 1) / args.m * (args.n - 1)
            w.writerow([int(v), repr(float(est)), int(o), repr(float(e))])
    (out / "simulate_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "simulate", ["simulate_distribution.csv", "simulate_summary.json"],
                    {k: summary[k] for k in ("n", "true_rank", "m", "trials", "mode", "seed")})
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ["run_id", "m", "correction", "seed", "partition", "metric", "cutoff", "value"]


def _sweep_cell(cache, base: dict, m: int, correction: str, seed: int, cutoffs, log_path):
    prepared = load_cache(cache)
    config = TrainConfig.from_dict({**base, "m": m, "correction": correction, "seed": seed})
    result = run(prepared, config, log_path=log_path, ndcg_cutoffs=cutoffs)
    rows = []
    for rep in (result.tuning, result.test):
        for k, v in sorted(rep.recall.items()):
            rows.append((rep.partition, "recall", k, v))
        for k, v in sorted(rep.ndcg.items()):
            rows.append((rep.partition, "ndcg", k, v))
    return rows


def cmd_sweep(args) -> int:
    _load_cache_arg(args.cache)
    base = _train_config(args).to_dict()
    corrections = args.corrections
    for c in corrections:
        if c not in ("none", "corrected"):
            raise UsageError(f"unknown correction mode {c!r}")
    out = Path(args.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cells = [(m, c, s) for m in args.m_values for c in corrections for s in args.seeds]
    cutoffs = tuple(args.ndcg_cutoffs)

    def run_id(m, c, s):
        return f"m{m}_{c}_s{s}"

    jobs = []
    failures = 0
    results = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for cell in cells:
                log = out / "runs" / f"{run_id(*cell)}.jsonl"
                jobs.append((cell, pool.submit(_sweep_cell, args.cache, base, *cell, cutoffs, log)))
            for cell, fut in jobs:
                try:
                    results[cell] = fut.result()
                except Exception as exc:  # noqa: BLE001 - keep sweeping
                    failures += 1
                    logger.error("sweep cell %s failed: %s", run_id(*cell), exc)
    else:
        for cell in cells:
            log = out / "runs" / f"{run_id(*cell)}.jsonl"
            try:
                results[cell] = _sweep_cell(args.cache, base, *cell, cutoffs, log)
            except Exception as exc:  # noqa: BLE001 - keep sweeping
                failures += 1
                logger.error("sweep cell %s failed: %s", run_id(*cell), exc)

    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_COLUMNS)
        for cell in cells:
            for partition, metric, cutoff, value in results.get(cell, []):
                w.writerow([run_id(*cell), cell[0], cell[1], cell[2], partition, metric,
                            cutoff, repr(float(value))])
    echo = {"base": base, "m": args.m_values, "corrections": corrections,
            "seeds": args.seeds, "ndcg_cutoffs": list(cutoffs), "cache": str(args.cache)}
    artifacts = ["sweep.csv"] + [f"runs/{run_id(*c)}.jsonl" for c in cells]
    _write_manifest(out, "sweep", artifacts, echo)
    print(f"sweep: {len(cells) - failures}/{len(cells)} runs succeeded; wrote {out / 'sweep.csv'}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# parser

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--config", help="JSON file with training keys (flags override it)")
    g.add_argument("--algorithm", choices=["iterative", "batched"],
                   help=f"default: {d.algorithm.value}")
    g.add_argument("--loss", choices=["warp", "lambdarank"], help=f"default: {d.loss.value}")
    g.add_argument("--correction", choices=["none", "corrected"],
                   help=f"default: {d.correction.value}")
    g.add_argument("--k", type=int, help=f"positives per batch (default: {d.k})")
    g.add_argument("--eta", type=float, help=f"learning rate (default: {d.eta})")
    g.add_argument("--lambda", dest="reg", type=float,
                   help=f"L2 coefficient on touched rows (default: {d.reg})")
    g.add_argument("--dim", type=int, help=f"embedding dimension (default: {d.dim})")
    g.add_argument("--epochs", type=int, help=f"default: {d.epochs}")
    g.add_argument("--max-trials", type=int,
                   help=f"WARP rejection cap (default: {d.max_trials})")
    g.add_argument("--seed", type=int, help=f"64-bit master seed (default: {d.seed})")
    g.add_argument("--replacement", choices=["with", "without"],
                   help=f"negative sampling mode (default: {d.replacement.value})")
    g.add_argument("--eval-every", type=int, help=f"default: {d.eval_every}")
    g.add_argument("--patience", dest="early_stop_patience", type=int,
                   help=f"early-stopping patience, 0 disables (default: {d.early_stop_patience})")
    g.add_argument("--dtype", choices=["float64", "float32"], help=f"default: {d.dtype}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankcorrect", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("prep", help="preprocess a log (or planted data) into a cache",
                       formatter_class=fmt)
    p.add_argument("--input", help="CSV/TSV with header user,item[,rating[,timestamp]]")
    p.add_argument("--format", choices=["csv", "tsv"], default=None,
                   help="input format (default: from file suffix)")
    p.add_argument("--synthetic", action="store_true", help="generate planted low-rank data")
    p.add_argument("--config", help="JSON file with prep keys (flags override it)")
    dp = PrepConfig()
    for name, flag in PREP_FLAGS.items():
        typ = float if name in ("rating_threshold", "holdout_fraction") else int
        p.add_argument(f"--{flag}", dest=name, type=typ, default=None,
                       help=f"(default: {getattr(dp, name)})")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--force", action="store_true", help="rebuild an existing valid cache")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train a model from a cache", formatter_class=fmt)
    p.add_argument("--cache", required=True)
    _add_train_flags(p)
    p.add_argument("--m", type=int, help=f"negatives per batch (default: {TrainConfig().m})")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--cache", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--partition", choices=[TUNING, TEST], default=TEST)
    p.add_argument("--ndcg-cutoffs", type=_int_list, default=[100])
    p.add_argument("--log", help="JSON-lines log to append the report to")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="Monte-Carlo study of sampled-rank correction",
                       formatter_class=fmt)
    p.add_argument("--n", type=int, default=1000, help="catalog size")
    p.add_argument("--true-rank", type=int, default=101)
    p.add_argument("--m", type=int, default=50, help="negatives per trial")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--mode", choices=["with", "without"], default="with")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid of m x correction x seed trainings",
                       formatter_class=fmt)
    p.add_argument("--cache", required=True)
    _add_train_flags(p)
    p.add_argument("--m", dest="m_values", type=_int_list, default=[8, 64],
                   help="comma-separated negative sample sizes")
    p.add_argument("--corrections", type=_str_list, default=["none", "corrected"])
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--ndcg-cutoffs", type=_int_list, default=[100],
                   help="NDCG@k cutoffs to report")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_sweep, m=None)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("RANKCORRECT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rankcorrect: error: {exc}", file=sys.stderr)
        return 2
    except (CacheError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"rankcorrect: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
