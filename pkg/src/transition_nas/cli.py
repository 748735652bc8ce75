"""Command-line entry point: search, prune, eval, export-dot, gradcheck, selftest.

All runs are driven by a single JSON configuration file; individual fields
can be overridden with repeated ``--set dotted.path=value`` flags and the
``--toy`` flag swaps in the desk-scale preset.  The effective configuration
is echoed verbatim into the output directory, whose seed makes every
command deterministic.

Exit codes: 0 success, 1 usage/config error, 2 numeric failure,
3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from .autodiff import Tape
from .data import (
    CifarFormatError,
    Dataset,
    SyntheticSpec,
    batches,
    gen_synthetic,
    read_cifar10_binary,
)
from .genio import (
    CheckpointError,
    GenotypeFormatError,
    load_arch_checkpoint,
    parse_genotype,
    save_arch_checkpoint,
    serialize_genotype,
    to_dot,
    validate_genotype,
)
from .gradcheck import TOLERANCE, run_battery
from .pruning import STRATEGIES, Genotype, prune_arch
from .search import (
    NumericError,
    SearchConfig,
    _clip_scale,
    cosine_lr,
    format_history,
    run_search,
    split_train_val,
)
from .selftest import run_selftest
from .supernet import GenotypeNet, SuperNetConfig, nll_loss
from .topology import NORMAL, REDUCTION, build_topology, op_set_from_names, K7_OP_NAMES

__all__ = ["ConfigError", "main", "entry", "default_config", "retrain_genotype"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_GRADCHECK = 3


class ConfigError(ValueError):
    """The run configuration is unusable; the message names the field."""


class _UsageError(Exception):
    def __init__(self, message, parser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message, self)


def default_config() -> dict:
    """Full-scale defaults (the values the desk-scale preset swaps out)."""
    return {
        "seed": None,
        "out_dir": None,
        "search": {
            "epochs": 50,
            "batch_size": 64,
            "weight_lr_start": 0.025,
            "weight_lr_end": 1e-3,
            "weight_momentum": 0.9,
            "arch_lr": 3e-4,
            "arch_weight_decay": 1e-3,
            "tau_start": 5.0,
            "tau_end": 0.5,
            "tau_steps": 49,
        },
        "supernet": {
            "num_cells": 8,
            "reduction_cells": [3, 6],
            "init_channels": 16,
            "num_classes": 10,
            "input_spatial": [32, 32],
            "input_channels": 3,
            "ops": list(K7_OP_NAMES),
            "toy": False,
        },
        "data": {
            "kind": "synthetic",
            "synthetic": {
                "class_count": 10,
                "samples_per_class": 64,
                "height": 32,
                "width": 32,
                "channels": 3,
                "contrast": 1.0,
                "noise_std": 0.1,
                "seed": None,
            },
            "paths": [],
        },
        "eval": {
            "epochs": 30,
            "batch_size": 8,
            "lr_start": 0.05,
            "lr_end": 0.0,
            "momentum": 0.9,
        },
    }


TOY_OVERLAY = {
    "search": {"epochs": 5, "batch_size": 8},
    "supernet": {
        "num_cells": 2,
        "reduction_cells": [2],
        "init_channels": 8,
        "num_classes": 4,
        "input_spatial": [16, 16],
        "input_channels": 3,
        "toy": True,
    },
    "data": {
        "kind": "synthetic",
        "synthetic": {
            "class_count": 4,
            "samples_per_class": 32,
            "height": 16,
            "width": 16,
            "channels": 3,
            "contrast": 1.0,
            "noise_std": 0.1,
        },
    },
}


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects dotted.path=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    target = cfg
    for key in keys[:-1]:
        nxt = target.setdefault(key, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {dotted}: {key!r} is not a section")
        target = nxt
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target[keys[-1]] = value


def load_config(path: str | None, toy: bool, overrides) -> dict:
    cfg = default_config()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path!r} must hold a JSON object")
        cfg = _deep_merge(cfg, user)
    if toy:
        cfg = _deep_merge(cfg, TOY_OVERLAY)
    for assignment in overrides or []:
        _apply_override(cfg, assignment)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    seed = cfg.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: an explicit integer seed is required")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed: must fit an unsigned 64-bit integer")
    data = cfg.get("data", {})
    kind = data.get("kind")
    if kind == "cifar10":
        paths = data.get("paths") or []
        if not paths:
            raise ConfigError("data.paths: cifar10 input files are required")
        for i, p in enumerate(paths):
            if not os.path.exists(p):
                raise ConfigError(f"data.paths[{i}]: no such file {p!r}")
    elif kind != "synthetic":
        raise ConfigError(f"data.kind: unknown dataset kind {kind!r}")


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_search_config(cfg: dict) -> SearchConfig:
    s = cfg["search"]
    try:
        return SearchConfig(
            epochs=int(s["epochs"]),
            batch_size=int(s["batch_size"]),
            weight_lr_start=float(s["weight_lr_start"]),
            weight_lr_end=float(s["weight_lr_end"]),
            weight_momentum=float(s["weight_momentum"]),
            arch_lr=float(s["arch_lr"]),
            arch_weight_decay=float(s["arch_weight_decay"]),
            tau_start=float(s["tau_start"]),
            tau_end=float(s["tau_end"]),
            tau_steps=int(s["tau_steps"]),
            seed=int(cfg["seed"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"search: {exc}") from exc


def build_net_config(cfg: dict) -> SuperNetConfig:
    s = cfg["supernet"]
    try:
        return SuperNetConfig(
            num_cells=int(s["num_cells"]),
            reduction_positions=frozenset(int(p) for p in s["reduction_cells"]),
            init_channels=int(s["init_channels"]),
            num_classes=int(s["num_classes"]),
            input_spatial=tuple(int(v) for v in s["input_spatial"]),
            input_channels=int(s["input_channels"]),
            op_set=op_set_from_names(s["ops"]),
            toy=bool(s.get("toy", False)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"supernet: {exc}") from exc


def build_dataset(cfg: dict) -> Dataset:
    data = cfg["data"]
    if data["kind"] == "cifar10":
        return read_cifar10_binary(data["paths"])
    s = dict(data["synthetic"])
    if s.get("seed") is None:
        s["seed"] = cfg["seed"]
    try:
        spec = SyntheticSpec(
            class_count=int(s["class_count"]),
            samples_per_class=int(s["samples_per_class"]),
            height=int(s["height"]),
            width=int(s["width"]),
            channels=int(s["channels"]),
            contrast=float(s["contrast"]),
            noise_std=float(s["noise_std"]),
            seed=int(s["seed"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"data.synthetic: {exc}") from exc
    return gen_synthetic(spec)


def _prepare_out_dir(path: str | None, force: bool) -> str:
    if not path:
        raise ConfigError("out_dir: an output directory is required (--out or config)")
    if os.path.exists(path) and not force:
        raise ConfigError(f"out_dir: {path!r} already exists; pass --force to reuse it")
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(cfg: dict, out_dir: str) -> None:
    with open(os.path.join(out_dir, "config.echo.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_search(args) -> int:
    cfg = load_config(args.config, args.toy, args.set)
    out_dir = _prepare_out_dir(args.out or cfg.get("out_dir"), args.force)
    search_cfg = build_search_config(cfg)
    net_cfg = build_net_config(cfg)
    dataset = build_dataset(cfg)

    arch, history, _state = run_search(search_cfg, net_cfg, dataset)

    digest = config_digest(cfg)
    meta = {
        "kind": "arch",
        "k": net_cfg.op_set.k,
        "op_set": {"name": net_cfg.op_set.name, "ops": list(net_cfg.op_set.names)},
        "tau_end": search_cfg.tau_end,
        "seed": search_cfg.seed,
        "config_digest": digest,
    }
    save_arch_checkpoint(os.path.join(out_dir, "arch.ckpt"), arch, meta)
    with open(os.path.join(out_dir, "history.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_history(history))
    _echo_config(cfg, out_dir)
    from .report import render_history_figure

    render_history_figure(history, os.path.join(out_dir, "history.png"))
    last = history[-1]
    print(
        f"search done: {len(history)} epochs, "
        f"train loss {last.train_loss:.4f}, val loss {last.val_loss:.4f}"
    )
    print(f"wrote arch.ckpt, history.txt, history.png, config.echo.json to {out_dir}")
    return EXIT_OK


def cmd_prune(args) -> int:
    arch, meta = load_arch_checkpoint(args.arch)
    ops_field = meta.get("op_set", {})
    try:
        op_set = op_set_from_names(ops_field["ops"], set_name=ops_field.get("name"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{args.arch}: unusable op_set metadata: {exc}") from exc
    tau = float(meta.get("tau_end", 0.5))
    provenance = {
        "seed": meta.get("seed"),
        "config_digest": meta.get("config_digest"),
        "strategy": args.strategy,
    }
    genotype = prune_arch(
        arch, build_topology(), op_set, tau, args.strategy, provenance
    )
    errors = validate_genotype(genotype)
    if errors:
        raise CheckpointError(f"pruning produced an invalid genotype: {errors}")
    out = args.out
    if out is None:
        out = os.path.join(os.path.dirname(args.arch) or ".", f"{args.strategy}.genotype.json")
    with open(out, "wb") as fh:
        fh.write(serialize_genotype(genotype))
    print(f"wrote {out}")
    return EXIT_OK


def _accuracy(net: GenotypeNet, dataset: Dataset, batch_size: int) -> float:
    correct = 0
    for batch in batches(dataset, batch_size, seed=0, epoch=0):
        log_probs = net.network_forward(batch.images)
        pred = np.argmax(log_probs.values, axis=1)
        correct += int((pred == batch.labels).sum())
    return correct / len(dataset)


def retrain_genotype(
    genotype: Genotype,
    net_cfg: SuperNetConfig,
    dataset: Dataset,
    eval_cfg: dict,
    seed: int,
) -> tuple[dict, list[dict]]:
    """Train the discrete network from scratch at desk scale.

    Returns the summary record and the per-epoch history.
    """
    epochs = int(eval_cfg["epochs"])
    batch_size = int(eval_cfg["batch_size"])
    lr_start = float(eval_cfg["lr_start"])
    lr_end = float(eval_cfg["lr_end"])
    momentum = float(eval_cfg["momentum"])
    grad_clip = float(eval_cfg.get("grad_clip", 5.0))

    train_half, val_half = split_train_val(dataset, seed)
    net = GenotypeNet(genotype, net_cfg, seed)
    velocity = {name: np.zeros_like(t.values) for name, t in net.parameters()}
    history: list[dict] = []
    for epoch in range(epochs):
        lr = cosine_lr(lr_start, lr_end, epoch, epochs)
        losses = []
        for batch in batches(train_half, batch_size, seed + 2, epoch):
            with Tape() as tape:
                loss = nll_loss(net.network_forward(batch.images), batch.labels)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value!r} during retraining")
            grads = tape.backward(loss)
            clip = _clip_scale(grads, [t for _, t in net.parameters()], grad_clip)
            for name, t in net.parameters():
                buf = velocity[name]
                buf *= momentum
                g = grads.get(t)
                if g is not None:
                    buf += clip * g
                t.values -= lr * buf
            losses.append(value)
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(losses)),
                "train_acc": _accuracy(net, train_half, batch_size),
                "val_acc": _accuracy(net, val_half, batch_size),
            }
        )
    digest = hashlib.sha256(serialize_genotype(genotype)).hexdigest()
    record = {
        "genotype_digest": digest,
        "seed": seed,
        "train_acc": history[-1]["train_acc"],
        "val_acc": history[-1]["val_acc"],
    }
    return record, history


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.toy, args.set)
    with open(args.genotype, "rb") as fh:
        genotype = parse_genotype(fh.read())
    out_dir = _prepare_out_dir(args.out or cfg.get("out_dir"), args.force)
    base_net = build_net_config(cfg)
    net_cfg = SuperNetConfig(
        num_cells=base_net.num_cells,
        reduction_positions=base_net.reduction_positions,
        init_channels=base_net.init_channels,
        num_classes=base_net.num_classes,
        input_spatial=base_net.input_spatial,
        input_channels=base_net.input_channels,
        op_set=genotype.op_set,
        toy=base_net.toy,
    )
    dataset = build_dataset(cfg)
    record, history = retrain_genotype(genotype, net_cfg, dataset, cfg["eval"], cfg["seed"])

    _echo_config(cfg, out_dir)
    with open(os.path.join(out_dir, "eval_report.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    lines = ["epoch,lr,train_loss,train_acc,val_acc"]
    for rec in history:
        lines.append(
            f"{rec['epoch']},{rec['lr']:.17g},{rec['train_loss']:.17g},"
            f"{rec['train_acc']:.17g},{rec['val_acc']:.17g}"
        )
    with open(os.path.join(out_dir, "eval_history.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    from .report import render_eval_figure

    render_eval_figure(history, os.path.join(out_dir, "eval_history.png"))
    print(
        f"eval done: train_acc={record['train_acc']:.4f} val_acc={record['val_acc']:.4f}"
    )
    return EXIT_OK


def cmd_export_dot(args) -> int:
    with open(args.genotype, "rb") as fh:
        genotype = parse_genotype(fh.read())
    out_dir = args.out_dir or os.path.dirname(args.genotype) or "."
    os.makedirs(out_dir, exist_ok=True)
    for kind in (NORMAL, REDUCTION):
        path = os.path.join(out_dir, f"{kind}.dot")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(to_dot(genotype, kind))
        print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_battery()
    failed = []
    for name, err in results:
        status = "PASS" if err <= TOLERANCE else "FAIL"
        print(f"{status} {name}: max_rel_err={err:.3e}")
        if err > TOLERANCE:
            failed.append(name)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest() else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", help="JSON configuration file")
    sub.add_argument("--toy", action="store_true", help="apply the desk-scale preset")
    sub.add_argument(
        "--set",
        action="append",
        metavar="PATH=VALUE",
        help="override one config field (dotted path, JSON value)",
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="transition-nas", description=__doc__)
    subs = parser.add_subparsers(dest="cmd", parser_class=_Parser)

    p = subs.add_parser("search", help="run the bi-level architecture search")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--force", action="store_true", help="reuse an existing output directory")
    p.set_defaults(func=cmd_search)

    p = subs.add_parser("prune", help="derive a genotype from a search checkpoint")
    p.add_argument("--arch", required=True, help="arch.ckpt from a search run")
    p.add_argument("--strategy", choices=STRATEGIES, default="tiep")
    p.add_argument("--out", help="genotype output path (.genotype.json)")
    p.set_defaults(func=cmd_prune)

    p = subs.add_parser("eval", help="retrain a genotype from scratch at desk scale")
    p.add_argument("--genotype", required=True)
    _add_config_flags(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", help="reuse an existing output directory")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("export-dot", help="write DOT graphs for both cell kinds")
    p.add_argument("--genotype", required=True)
    p.add_argument("--out-dir", help="directory for normal.dot / reduction.dot")
    p.set_defaults(func=cmd_export_dot)

    p = subs.add_parser("gradcheck", help="finite-difference gradient battery")
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("selftest", help="run the in-process property suites")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc.parser.format_usage(), end="", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "func", None) is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GenotypeFormatError, CheckpointError, CifarFormatError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
