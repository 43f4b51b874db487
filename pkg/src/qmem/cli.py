"""Command line: ``qmem {gen,train,eval,ablate,sweep}``.

Configuration precedence is flags > ``--config`` file > built-in defaults. Each
command writes the fully resolved configuration to ``resolved_config.json`` in
its output directory; passing that file back via ``--config`` reruns it.

Exit codes: 0 success, 2 usage error, 3 data/config mismatch, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .data import Standardizer, SynthSpec, build_windows, read_corpus, read_split, split_contiguous, \
    synth_generate, write_corpus
from .model import ABLATION_ROWS, ModelConfig, QDistModel
from .training import DivergenceError, TrainConfig, evaluate, load_checkpoint, load_standardizer, train

log = logging.getLogger("qmem")

EXIT_USAGE, EXIT_MISMATCH, EXIT_NUMERIC = 2, 3, 4
SWEEP_AXES = {"hidden": "feat_dim", "heads": "n_heads", "layers": "n_layers"}


class UsageError(Exception):
    pass


class MismatchError(Exception):
    pass


def default_config() -> dict:
    model = ModelConfig(in_dim=1, out_dim=1).to_dict()
    for k in ("in_dim", "out_dim"):
        model[k] = None
    return {
        "seed": 0,
        "out": None,
        "synth": dataclasses.asdict(SynthSpec()),
        "split": {"test_ratio": 0.1, "n_history": 4},
        "data": {"corpus": None, "gap_ms": None},
        "model": model,
        "train": {k: v for k, v in dataclasses.asdict(TrainConfig()).items() if k != "seed"},
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set(cfg: dict, path: str, value) -> None:
    if value is None:
        return
    node = cfg
    *parents, leaf = path.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def resolve(args: argparse.Namespace, mapping: dict[str, str]) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
    for attr, path in mapping.items():
        _set(cfg, path, getattr(args, attr, None))
    if getattr(args, "ablation", None):
        cfg["model"]["ablation"] = dataclasses.asdict(ABLATION_ROWS[args.ablation])
    return cfg


def _prepare_out(out: str | None, force: bool) -> Path:
    if not out:
        raise UsageError("an output directory is required (--out)")
    path = Path(out)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"output directory {path} exists and is not empty (use --force)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- gen

GEN_FLAGS = {
    "shots": "synth.n_shots", "samples": "synth.samples_per_shot", "in_dim": "synth.in_dim",
    "out_dim": "synth.out_dim", "latent_dim": "synth.latent_dim", "rho": "synth.rho",
    "noise": "synth.obs_noise", "dt_ms": "synth.dt_ms", "seed": "seed",
    "test_ratio": "split.test_ratio", "n_history": "split.n_history", "out": "out",
}


def cmd_gen(args) -> int:
    cfg = resolve(args, GEN_FLAGS)
    cfg["synth"]["seed"] = cfg["seed"]
    try:
        spec = SynthSpec(**cfg["synth"])
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e
    out = _prepare_out(cfg["out"], args.force)
    shots = synth_generate(spec)
    split = split_contiguous(shots, cfg["split"]["test_ratio"], cfg["seed"], cfg["split"]["n_history"])
    write_corpus(out, shots, spec, split)
    _write_json(out / "resolved_config.json", {"command": "gen", **{k: cfg[k] for k in ("seed", "out", "synth", "split")}})
    print(json.dumps({"corpus": str(out), "shots": len(shots), "train": len(split.train), "test": len(split.test)}))
    return 0


# ---------------------------------------------------------------- train

TRAIN_FLAGS = {
    "corpus": "data.corpus", "gap_ms": "data.gap_ms", "seed": "seed", "out": "out",
    "epochs": "train.epochs", "lr": "train.lr", "batch_size": "train.batch_size",
    "feat_dim": "model.feat_dim", "heads": "model.n_heads", "layers": "model.n_layers",
    "n_history": "model.n_history", "n_global_tokens": "model.n_global_tokens", "beta": "model.beta",
}


def load_data(cfg: dict):
    corpus = cfg["data"]["corpus"]
    if not corpus:
        raise UsageError("a corpus directory is required (--corpus)")
    try:
        manifest, shots = read_corpus(Path(corpus))
        split = read_split(Path(corpus))
    except FileNotFoundError as e:
        raise UsageError(f"corpus not found: {e}") from e
    except ValueError as e:
        raise MismatchError(str(e)) from e
    return manifest, shots, split


def model_config(cfg: dict, manifest: dict) -> ModelConfig:
    m = dict(cfg["model"])
    for k in ("in_dim", "out_dim"):
        if m.get(k) is not None and m[k] != manifest[k]:
            raise MismatchError(f"config {k}={m[k]} but corpus {k}={manifest[k]}")
        m[k] = manifest[k]
    try:
        return ModelConfig.from_dict(m)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid model config: {e}") from e


def run_training(cfg: dict, out: Path, echo: bool = False) -> dict:
    """Train one configuration into ``out``; returns the report summary plus run metadata."""
    manifest, shots, split = load_data(cfg)
    mcfg = model_config(cfg, manifest)
    gap = cfg["data"]["gap_ms"]
    if gap is None:
        gap = 3.0 * float(manifest.get("dt_ms") or 10.0)
    cfg["data"]["gap_ms"] = gap
    cfg["model"] = mcfg.to_dict()
    tcfg = TrainConfig(seed=int(cfg["seed"]), **cfg["train"])

    tr = build_windows(shots, split.train, mcfg.n_history, gap)
    te = build_windows(shots, split.test, mcfg.n_history, gap) if split.test else None
    std = Standardizer.fit(tr.current)
    tr = std.apply_windows(tr)
    te = std.apply_windows(te) if te is not None else None

    _write_json(out / "resolved_config.json", cfg)
    model = QDistModel(mcfg, seed=int(cfg["seed"]))
    with open(out / "metrics.jsonl", "w") as fh:
        report = train(model, tr, te, tcfg, out_dir=out, metrics=fh, echo=echo, standardizer=std)
    doc = report.to_dict()
    _write_json(out / "report.json", doc)
    return {**doc["summary"], "final_test_mse": report.final.test_mse, "final_train_mse": report.final.train_mse}


def cmd_train(args) -> int:
    cfg = resolve(args, TRAIN_FLAGS)
    cfg["command"] = "train"
    out = _prepare_out(cfg["out"], args.force)
    summary = run_training(cfg, out, echo=not args.quiet)
    print(json.dumps({"run": str(out), **summary}))
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if (ckpt / "checkpoint").is_dir():
        ckpt = ckpt / "checkpoint"
    if not (ckpt / "index.json").exists():
        raise UsageError(f"no checkpoint at {ckpt}")
    model = load_checkpoint(ckpt)
    std = load_standardizer(ckpt)
    cfg = {"data": {"corpus": args.corpus, "gap_ms": args.gap_ms}}
    manifest, shots, split = load_data(cfg)
    for k in ("in_dim", "out_dim"):
        if manifest[k] != getattr(model.config, k):
            raise MismatchError(f"checkpoint {k}={getattr(model.config, k)} but corpus {k}={manifest[k]}")
    gap = args.gap_ms if args.gap_ms is not None else 3.0 * float(manifest.get("dt_ms") or 10.0)
    pairs = {"train": split.train, "test": split.test, "all": split.train + split.test}[args.partition]
    if not pairs:
        raise UsageError(f"partition {args.partition!r} is empty")
    win = build_windows(shots, pairs, model.config.n_history, gap)
    if std is not None:
        win = std.apply_windows(win)
    mse = evaluate(model, win, args.batch_size)
    result = {"checkpoint": str(ckpt), "partition": args.partition, "n": len(win), "mse": mse}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "eval.json", result)
    print(json.dumps(result))
    return 0


# ---------------------------------------------------------------- ablate / sweep

def _run_child(item: tuple[dict, str]) -> dict:
    cfg, out = item
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return run_training(cfg, path)


def _run_all(items: list[tuple[dict, str]], jobs: int) -> list[dict]:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_child, items))
    return [_run_child(it) for it in items]


def _write_table(out: Path, rows: list[dict]) -> None:
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "table.json", rows)


def cmd_ablate(args) -> int:
    cfg = resolve(args, TRAIN_FLAGS)
    cfg["command"] = "ablate"
    out = _prepare_out(cfg["out"], args.force)
    manifest, _, _ = load_data(cfg)
    model_config(cfg, manifest)
    _write_json(out / "resolved_config.json", cfg)
    items = []
    for name, abl in ABLATION_ROWS.items():
        sub = copy.deepcopy(cfg)
        sub["command"] = "train"
        sub["model"]["ablation"] = dataclasses.asdict(abl)
        sub["out"] = str(out / name)
        items.append((sub, str(out / name)))
    results = _run_all(items, args.jobs)
    rows = []
    for k, ((name, abl), res) in enumerate(zip(ABLATION_ROWS.items(), results), start=1):
        rows.append({"row": k, "name": name, "mlp": 1, "hopfield": int(abl.use_hopfield),
                     "position": int(abl.use_posenc), "lparam": int(abl.use_lparam),
                     "param_count": res["param_count"], "best_test_mse": res["best_test_mse"],
                     "final_test_mse": res["final_test_mse"]})
    _write_table(out, rows)
    print(json.dumps(rows))
    return 0


def _parse_values(text: str) -> list[int]:
    vals = [v.strip() for v in (text or "").split(",") if v.strip()]
    if not vals:
        raise UsageError("--values must list at least one value")
    try:
        return [int(v) for v in vals]
    except ValueError as e:
        raise UsageError(f"--values must be integers: {text}") from e


def cmd_sweep(args) -> int:
    cfg = resolve(args, TRAIN_FLAGS)
    if args.axis:
        cfg.setdefault("sweep", {})["axis"] = args.axis
    if args.values:
        cfg.setdefault("sweep", {})["values"] = _parse_values(args.values)
    sweep = cfg.get("sweep") or {}
    if sweep.get("axis") not in SWEEP_AXES:
        raise UsageError(f"--axis must be one of {sorted(SWEEP_AXES)}")
    values = sweep.get("values") or []
    if not values:
        raise UsageError("--values must list at least one value")
    cfg["command"] = "sweep"
    out = _prepare_out(cfg["out"], args.force)
    manifest, _, _ = load_data(cfg)
    key = SWEEP_AXES[sweep["axis"]]
    items = []
    for v in values:
        sub = copy.deepcopy(cfg)
        sub.pop("sweep")
        sub["command"] = "train"
        sub["model"][key] = int(v)
        model_config(sub, manifest)
        sub["out"] = str(out / f"{sweep['axis']}_{v}")
        items.append((sub, sub["out"]))
    _write_json(out / "resolved_config.json", cfg)
    results = _run_all(items, args.jobs)
    rows = [{"axis": sweep["axis"], "value": int(v), "param_count": r["param_count"],
             "best_test_mse": r["best_test_mse"], "final_test_mse": r["final_test_mse"]}
            for v, r in zip(values, results)]
    _write_table(out, rows)
    print(json.dumps(rows))
    return 0


# ---------------------------------------------------------------- parser

def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--feat-dim", type=int, help="encoder width = Hopfield hidden size")
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--n-history", type=int)
    p.add_argument("--n-global-tokens", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--gap-ms", type=float)
    p.add_argument("--ablation", choices=sorted(ABLATION_ROWS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmem", description="Generate synthetic shot corpora and train memory-aware Q-profile regressors.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true")

    g = sub.add_parser("gen", help="write a synthetic shot corpus and split")
    common(g)
    g.add_argument("--shots", type=int)
    g.add_argument("--samples", type=int, help="samples per shot")
    g.add_argument("--in-dim", type=int)
    g.add_argument("--out-dim", type=int)
    g.add_argument("--latent-dim", type=int)
    g.add_argument("--rho", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--dt-ms", type=float)
    g.add_argument("--test-ratio", type=float)
    g.add_argument("--n-history", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model")
    common(t)
    _train_flags(t)
    t.add_argument("--quiet", action="store_true", help="do not echo epoch records to stdout")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus partition")
    e.add_argument("--checkpoint", required=True, help="checkpoint dir or run dir")
    e.add_argument("--corpus", required=True)
    e.add_argument("--partition", choices=("train", "test", "all"), default="test")
    e.add_argument("--batch-size", type=int, default=512)
    e.add_argument("--gap-ms", type=float)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train the five component-analysis configurations")
    common(a)
    _train_flags(a)
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="one run per value of hidden size, heads or layers")
    common(s)
    _train_flags(s)
    s.add_argument("--axis", choices=sorted(SWEEP_AXES))
    s.add_argument("--values", help="comma-separated integers")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"qmem: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MismatchError as e:
        print(f"qmem: data/config mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except DivergenceError as e:
        print(f"qmem: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
