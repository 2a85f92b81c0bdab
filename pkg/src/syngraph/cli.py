"""Command-line interface: graphify, train, eval, ablate, perturb, sweep, gradcheck, toy-data."""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import fields
from pathlib import Path

# keep BLAS single-threaded so fixed seeds give bit-identical runs
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from . import __version__  # noqa: E402
from . import gradcheck  # noqa: E402
from .adversarial import SwapConfig, eligible_words, example_rng, swap_noise  # noqa: E402
from .corpus_io import Example, load_dataset, make_tokens, write_parallel_corpus  # noqa: E402
from .graph import FeatureFlags, build_syntactic_graph, graph_to_dict  # noqa: E402
from .harness import (ABLATION_ROWS, DatasetError, TrainConfig, ablation_csv,  # noqa: E402
                      evaluate_exact_match, exact_match, load_split, robustness_sweep,
                      run_ablation, train)
from .model import Graph2Seq  # noqa: E402
from .toy import generate_splits, generate, write_split  # noqa: E402

log = logging.getLogger("syngraph")


def version_string() -> str:
    """``<version>+g<commit>[.dirty]`` when run from a git checkout, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--abbrev=12"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=10)
    except (OSError, subprocess.SubprocessError):
        return __version__
    desc = out.stdout.strip()
    if out.returncode != 0 or not desc:
        return __version__
    return f"{__version__}+g{desc.replace('-dirty', '.dirty')}"


# --- config handling -------------------------------------------------------------------

def add_config_args(p: argparse.ArgumentParser):
    """Every TrainConfig field becomes an optional override flag."""
    p.add_argument("--config", help="flat JSON config file; flags below override it")
    group = p.add_argument_group("config overrides")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.type in ("int", int):
            group.add_argument(flag, dest=f.name, type=int, default=None, metavar="N")
        elif f.type in ("float", float):
            group.add_argument(flag, dest=f.name, type=float, default=None, metavar="X")
        else:
            group.add_argument(flag, dest=f.name, default=None, metavar="VALUE")


def load_config(args) -> TrainConfig:
    workdir = Path(args.workdir)
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.is_absolute():
            path = workdir / path
        base = json.loads(path.read_text(encoding="utf-8"))
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    return TrainConfig.from_dict(base).resolve(workdir)


def out_path(args, name: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else Path(args.workdir) / path


def write_manifest(args, path: Path, command: str, cfg: TrainConfig | None = None, **extra):
    manifest = {"command": command, "version": version_string(), "argv": args.argv}
    if cfg is not None:
        manifest["config"] = cfg.to_dict()
        manifest["seed"] = cfg.seed
    manifest.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --- subcommands ---------------------------------------------------------------------------

def cmd_toy_data(args) -> int:
    out = out_path(args, args.out)
    train_set, dev_set = generate_splits(args.train, args.dev, args.seed)
    splits = {"train": train_set, "dev": dev_set}
    if args.test:
        seen = {" ".join(ex.words) for ex in train_set + dev_set}
        splits["test"] = generate(args.test, args.seed + 1, exclude=seen)
    config = {}
    for name, examples in splits.items():
        paths = write_split(examples, out, name)
        for kind in ("corpus", "dep", "cons"):
            config[f"{name}_{kind}"] = os.path.relpath(paths[kind], args.workdir)
    write_text(out / "config.json", json.dumps(config, sort_keys=True, indent=2) + "\n")
    print(f"wrote {', '.join(f'{len(v)} {k}' for k, v in splits.items())} examples to {out}")
    return 0


def cmd_graphify(args) -> int:
    flags = FeatureFlags.parse(args.features)
    examples = load_dataset(out_path(args, args.corpus),
                            out_path(args, args.dep) if args.dep else None,
                            out_path(args, args.cons) if args.cons else None)
    lines = [json.dumps(graph_to_dict(build_syntactic_graph(ex, flags)), sort_keys=True)
             for ex in examples]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        write_text(out_path(args, args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    train_set = load_split(cfg, "train")
    if train_set is None:
        raise DatasetError("train_corpus is not set")
    dev_set = load_split(cfg, "dev")
    test_set = load_split(cfg, "test")
    model, report = train(cfg, train_set, dev_set)
    if test_set:
        report.test_accuracy = evaluate_exact_match(model, test_set)
    out = out_path(args, args.out)
    checkpoint = Path(cfg.checkpoint) if cfg.checkpoint else out / "model.json"
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    model.save(checkpoint)
    write_text(out / "report.json", report.to_json() + "\n")
    write_manifest(args, out / "manifest.json", "train", cfg, checkpoint=str(checkpoint),
                   wall_time=report.wall_time)
    print(f"best dev accuracy {report.best_dev_accuracy:.4f} at epoch {report.best_epoch}"
          + (f"; test accuracy {report.test_accuracy:.4f}" if report.test_accuracy is not None else ""))
    return 0


def load_checkpoint(cfg: TrainConfig) -> Graph2Seq:
    if not cfg.checkpoint:
        raise DatasetError("no checkpoint given (use --checkpoint or the config file)")
    return Graph2Seq.load(cfg.checkpoint)


def _eval_examples(args, cfg: TrainConfig, flags: FeatureFlags) -> list[Example]:
    if args.corpus:
        return load_dataset(out_path(args, args.corpus),
                            out_path(args, args.dep) if args.dep and flags.dependency else None,
                            out_path(args, args.cons) if args.cons and flags.constituency else None)
    examples = load_split(cfg, args.split, flags)
    if examples is None:
        raise DatasetError(f"no corpus given and {args.split}_corpus is not set")
    return examples


def cmd_eval(args) -> int:
    cfg = load_config(args)
    model = load_checkpoint(cfg)
    examples = _eval_examples(args, cfg, model.flags)
    beam = args.beam_size or model.dec_cfg.beam
    preds = model.predict(examples, beam)
    acc = exact_match(preds, [ex.logic for ex in examples])
    out = out_path(args, args.out)
    write_text(out / "predictions.txt", "".join(" ".join(p) + "\n" for p in preds))
    result = {"accuracy": acc, "examples": len(examples), "beam": beam}
    write_text(out / "eval.json", json.dumps(result, sort_keys=True, indent=2) + "\n")
    write_manifest(args, out / "manifest.json", "eval", cfg, checkpoint=cfg.checkpoint)
    print(f"exact match {acc:.4f} on {len(examples)} examples")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    if args.features:
        sets = {name: FeatureFlags.parse(name) for name in args.features}
    else:
        sets = dict(ABLATION_ROWS)
    needed = FeatureFlags(True, any(f.dependency for f in sets.values()),
                          any(f.constituency for f in sets.values()))
    train_set = load_split(cfg, "train", needed)
    dev_set = load_split(cfg, "dev", needed)
    test_set = load_split(cfg, "test", needed)
    if train_set is None or (dev_set is None and test_set is None):
        raise DatasetError("ablation needs a train split and a dev or test split")
    eval_set = test_set if test_set is not None else dev_set
    rows = run_ablation(cfg, train_set, eval_set, sets, dev_set)
    out = out_path(args, args.out)
    write_text(out / "ablation.csv", ablation_csv(rows))
    write_manifest(args, out / "manifest.json", "ablate", cfg,
                   rows={r.name: r.flags.to_dict() for r in rows},
                   wall_time={r.name: r.report.wall_time for r in rows})
    for r in rows:
        print(f"{r.name:<28} {r.accuracy:.4f}")
    return 0


def cmd_perturb(args) -> int:
    examples = load_dataset(out_path(args, args.corpus))
    cfg = SwapConfig(args.m, args.seed, allow_any_m=args.allow_any_m)
    noisy, records = [], []
    for i, ex in enumerate(examples):
        words, rec = swap_noise(ex.words, cfg, rng=example_rng(cfg.seed, i),
                                eligible=eligible_words(ex.words, ex.logic))
        noisy.append(Example(make_tokens(words), list(ex.logic)))
        records.append({"line": i + 1, **rec.to_dict()})
    out = out_path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_parallel_corpus(noisy, out)
    manifest = Path(args.manifest) if args.manifest else out.with_suffix(out.suffix + ".manifest.json")
    if not manifest.is_absolute() and args.manifest:
        manifest = Path(args.workdir) / manifest
    write_manifest(args, manifest, "perturb", m=cfg.m, seed=cfg.seed, corpus=args.corpus,
                   records=records)
    short = sum(r["shortfall"] > 0 for r in records)
    print(f"perturbed {len(noisy)} examples with m={cfg.m}; {short} had fewer eligible words than m")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    model = load_checkpoint(cfg)
    examples = _eval_examples(args, cfg, model.flags)
    report = robustness_sweep(model, examples, args.m_values, args.trials, args.sweep_seed)
    out = out_path(args, args.out)
    write_text(out / "sweep.csv", report.to_csv())
    write_manifest(args, out / "manifest.json", "sweep", cfg, checkpoint=cfg.checkpoint,
                   m_values=list(args.m_values), trials=args.trials, sweep_seed=args.sweep_seed)
    for m, acc in report.rows:
        print(f"m={m} accuracy {acc:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    return 0 if gradcheck.main(args.seed) else 1


# --- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="root for every relative path (default: .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    parser = argparse.ArgumentParser(prog="syngraph", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("toy-data", parents=[common], help="write the synthetic flight-query corpus")
    p.add_argument("--out", default="data", help="output directory")
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--dev", type=int, default=100)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_data)

    p = sub.add_parser("graphify", parents=[common], help="emit one JSON syntactic graph per example")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dep")
    p.add_argument("--cons")
    p.add_argument("--features", default="all", help="'all' or e.g. word_order+dependency")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_graphify)

    p = sub.add_parser("train", parents=[common], help="train a model and write checkpoint and report")
    add_config_args(p)
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "exact-match accuracy of a checkpoint"),
                             ("sweep", cmd_sweep, "SWAP-noise robustness sweep of a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=text)
        add_config_args(p)
        p.add_argument("--split", default="dev", choices=("train", "dev", "test"))
        p.add_argument("--corpus", help="evaluate this corpus instead of a configured split")
        p.add_argument("--dep")
        p.add_argument("--cons")
        p.add_argument("--out", default=name)
        if name == "eval":
            p.add_argument("--beam-size", type=int, default=None)
        else:
            p.add_argument("--m-values", type=int, nargs="+", default=[0, 1, 2, 3, 4, 5])
            p.add_argument("--trials", type=int, default=3)
            p.add_argument("--sweep-seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", parents=[common], help="one training run per feature set")
    add_config_args(p)
    p.add_argument("--features", nargs="+",
                   help="feature sets such as all, word_order; default: the five standard rows")
    p.add_argument("--out", default="ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("perturb", parents=[common], help="write a SWAP-noise copy of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allow-any-m", action="store_true", help="permit m outside 1..5")
    p.add_argument("--out", required=True, help="perturbed corpus path")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        code = args.func(args)
    except (DatasetError, ValueError, FileNotFoundError, FloatingPointError) as err:
        print(f"syngraph {args.command}: error: {err}", file=sys.stderr)
        return 1
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
