"""Command-line entry point: gen, pack, eval, train, render.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import bench
from .baselines import BrkgaConfig
from .instance import (DatasetParseError, GenConfig, InstanceError, atomic_write_text,
                       generate_dataset, read_dataset, write_dataset)
from .metrics import RewardConfig, format_table, table_record
from .placement import ContractError, read_results, write_results
from .policy import load_checkpoint
from .render import render_result
from .trainer import TrainConfig, TrainingDivergence, load_state, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def load_config(path) -> dict:
    """Flat JSON object of option names to values."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise DataError(f"config file {path} must be a flat JSON object")
    return data


def _pick(args, config: dict, names) -> dict:
    """CLI flag if given, else config file value, else leave to the dataclass default."""
    out = {}
    for name in names:
        value = getattr(args, name, None)
        if value is None:
            value = config.get(name)
        if value is not None:
            out[name] = value
    return out


def _brkga_config(args, config) -> BrkgaConfig:
    names = [f.name for f in fields(BrkgaConfig) if f.name != "seed"]
    try:
        return BrkgaConfig(seed=args.seed, **_pick(args, config, names))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad BRKGA settings: {exc}") from None


def _reward_config(args, config) -> RewardConfig:
    try:
        return RewardConfig(**_pick(args, config, ["alpha", "beta"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _read_dataset(path):
    try:
        instances = read_dataset(path)
    except FileNotFoundError:
        raise DataError(f"dataset {path} not found") from None
    except DatasetParseError as exc:
        raise DataError(f"{path}: {exc}") from None
    return instances


def _load_params(path):
    if path is None:
        raise UsageError("method 'drl' needs --checkpoint")
    try:
        _, params, _, _ = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    except (ValueError, KeyError, OSError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return params


def cmd_gen(args) -> int:
    try:
        cfg = GenConfig.preset(args.mode, n=args.n, dim_low=args.dim_low, dim_high=args.dim_high,
                               box_dims=args.box, seed=args.seed)
    except InstanceError as exc:
        raise UsageError(str(exc)) from None
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    write_dataset(generate_dataset(cfg, args.count), args.out)
    print(f"wrote {args.count} instances to {args.out} (seed {cfg.seed})")
    return EXIT_OK


def _add_method_options(p):
    p.add_argument("--dataset", required=True, help="JSONL dataset file")
    p.add_argument("--checkpoint", help="model checkpoint (method drl)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--population-size", dest="population_size", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--elite-fraction", dest="elite_fraction", type=float)
    p.add_argument("--mutant-fraction", dest="mutant_fraction", type=float)
    p.add_argument("--elite-inherit-prob", dest="elite_inherit_prob", type=float)


def cmd_pack(args) -> int:
    config = load_config(args.config)
    instances = _read_dataset(args.dataset)
    params = _load_params(args.checkpoint) if args.method == "drl" else None
    results, _ = bench.run_method(instances, args.method, args.seed, params,
                                  _brkga_config(args, config), _reward_config(args, config))
    write_results(results, args.out)
    print(f"packed {len(results)} instances with {args.method} into {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.all and args.method is None:
        raise UsageError("eval needs --method or --all")
    config = load_config(args.config)
    methods = list(bench.METHODS) if args.all else [args.method]
    params = _load_params(args.checkpoint) if "drl" in methods else None
    instances = _read_dataset(args.dataset)
    if not instances:
        raise DataError(f"dataset {args.dataset} is empty")
    brkga_cfg, reward_cfg = _brkga_config(args, config), _reward_config(args, config)
    rows = []
    for method in methods:
        summary, _ = bench.summarize(instances, method, args.seed, params, brkga_cfg, reward_cfg)
        rows.append(summary)
    print(format_table(rows))
    if args.json:
        atomic_write_text(args.json, table_record(rows) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.resume:
        try:
            state, cfg = load_state(args.resume)
        except FileNotFoundError:
            raise DataError(f"checkpoint {args.resume} not found") from None
        except (ValueError, KeyError) as exc:
            raise DataError(f"cannot resume from {args.resume}: {exc}") from None
        if args.epochs is not None:
            cfg = replace(cfg, epochs=args.epochs)
    else:
        state = None
        names = [f.name for f in fields(TrainConfig)]
        picked = _pick(args, config, names)
        if args.lr is not None:
            picked["learning_rate"] = args.lr
        try:
            cfg = TrainConfig.desk(**picked) if args.desk else TrainConfig(**picked)
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    train_set = _read_dataset(args.train_data) if args.train_data else None
    val_set = _read_dataset(args.val_data) if args.val_data else None

    def progress(epoch, val):
        print(f"epoch {epoch + 1}/{cfg.epochs}: validation penalty {val:.6f}", flush=True)

    state, _ = train(cfg, train_set, val_set, out_dir=args.out_dir, state=state, progress=progress)
    print(f"checkpoint: {Path(args.out_dir) / 'last.npz'}")
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        results = read_results(args.results)
    except FileNotFoundError:
        raise DataError(f"result file {args.results} not found") from None
    except DatasetParseError as exc:
        raise DataError(f"{args.results}: {exc}") from None
    if not results:
        raise DataError(f"result file {args.results} holds no packing results")
    indices = range(len(results)) if args.index is None else [args.index]
    written = []
    for i in indices:
        if not 0 <= i < len(results):
            raise UsageError(f"--index {i} out of range (file has {len(results)} results)")
        written += render_result(results[i], args.out_dir, stem=f"result{i}")
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heightpack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a random dataset")
    p.add_argument("--mode", choices=["2d", "3d"], default="2d")
    p.add_argument("--n", type=int, help="objects per instance (default 40 in 2D, 70 in 3D)")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--dim-low", dest="dim_low", type=int)
    p.add_argument("--dim-high", dest="dim_high", type=int)
    p.add_argument("--box", type=_dims, help="box dimensions, e.g. 10,10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dataset.jsonl")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pack", help="pack a dataset with one method and save placements")
    p.add_argument("--method", choices=bench.METHODS, required=True)
    _add_method_options(p)
    p.add_argument("--out", default="results.jsonl")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("eval", help="print the C / P / Num. / Lat. table")
    p.add_argument("--method", choices=bench.METHODS)
    p.add_argument("--all", action="store_true", help="run every method (needs --checkpoint)")
    _add_method_options(p)
    p.add_argument("--json", help="also write the table as JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the pointer-network policy")
    p.add_argument("--mode", choices=["2d", "3d"])
    p.add_argument("--desk", action="store_true", help="reduced setting (2D, n=10, 10k instances, 3 epochs)")
    p.add_argument("--n", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--val-size", dest="val_size", type=int)
    p.add_argument("--d-h", dest="d_h", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-data", dest="train_data")
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--config")
    p.add_argument("--resume", help="continue from a training checkpoint")
    p.add_argument("--out-dir", dest="out_dir", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="draw packed boxes as SVG")
    p.add_argument("results", help="JSONL file written by `pack`")
    p.add_argument("--out-dir", dest="out_dir", default="figures")
    p.add_argument("--index", type=int, help="only this result (0-based)")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"heightpack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"heightpack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, TrainingDivergence, AssertionError, RuntimeError) as exc:
        print(f"heightpack: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
