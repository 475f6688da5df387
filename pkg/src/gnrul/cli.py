"""Command-line entry point: ``gnrul {simulate,ingest,train,evaluate,plot}``.

Configuration files are flat ``section.key = value`` text with ``#``
comments. Sections are ``sim``, ``sampler``, ``model``, ``train`` and
``paths``; every key has a default, so an empty file is a valid config.

Exit codes: 0 success, 2 user or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .bearings import SEGMENT_LENGTH, FemtoFormatError, ingest_femto
from .experiments import load_dataset, save_dataset
from .models import Model, ModelConfig, expected_shapes
from .sampler import SamplerConfig
from .simdata import SimProcessConfig, generate_dataset
from .trainer import (
    TrainConfig,
    TrainingAborted,
    evaluate,
    read_report,
    train,
    write_csv,
    write_history,
    write_report,
)

log = logging.getLogger("gnrul")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3
SECTIONS = {"sim": SimProcessConfig, "sampler": SamplerConfig, "model": ModelConfig, "train": TrainConfig}
PATH_KEYS = {"data", "out", "checkpoint", "femto_root"}
DATASET_INFO = "dataset.cfg"


class UserError(Exception):
    """Bad arguments, configuration or inputs; maps to exit code 2."""


# ---------------------------------------------------------------- config

def field_types(cls):
    return {f.name: f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
            for f in fields(cls)}


def _coerce(raw, hint, where):
    if raw.lower() == "none" and "None" in hint:
        return None
    try:
        if hint.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if hint.startswith("int"):
            return int(raw)
        if hint.startswith("float"):
            return float(raw)
        if hint.startswith("tuple"):
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise UserError(f"{where}: cannot parse {raw!r} as {hint}") from None
    return raw


def parse_config(text, source="<config>"):
    """Parse flat config text into ``{section: {key: value}}`` with typed values."""
    out = {name: {} for name in (*SECTIONS, "paths")}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        key, sep, value = line.partition("=")
        if not sep:
            raise UserError(f"{where}: expected 'section.key = value'")
        section, dot, name = key.strip().partition(".")
        value = value.strip()
        if not dot or section not in out:
            raise UserError(f"{where}: unknown section in {key.strip()!r}")
        if section == "paths":
            if name not in PATH_KEYS:
                raise UserError(f"{where}: unknown path key {name!r}")
            out["paths"][name] = value
            continue
        hints = field_types(SECTIONS[section])
        if name not in hints:
            raise UserError(f"{where}: unknown key {key.strip()!r}")
        out[section][name] = _coerce(value, hints[name], where)
    return out


def load_config(path):
    if path is None:
        return parse_config("")
    p = Path(path)
    if not p.is_file():
        raise UserError(f"config file {p} does not exist")
    return parse_config(p.read_text(), str(p))


def build(section_cls, values, **overrides):
    merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return section_cls(**merged)
    except (TypeError, ValueError) as err:
        raise UserError(f"invalid {section_cls.__name__}: {err}") from None


def _path(args, cfg, key, required=True):
    value = getattr(args, key, None) or cfg["paths"].get(key)
    if value is None and required:
        raise UserError(f"missing --{key.replace('_', '-')} (or paths.{key} in the config)")
    return Path(value) if value is not None else None


def write_dataset_info(out, **info):
    Path(out, DATASET_INFO).write_text("".join(f"{k} = {v!r}\n" for k, v in info.items()))


def read_dataset_info(root):
    p = Path(root, DATASET_INFO)
    info = {}
    if p.is_file():
        for line in p.read_text().splitlines():
            k, _, v = line.partition("=")
            info[k.strip()] = float(v) if k.strip() != "kind" else v.strip().strip("'")
    return info


def _load_data(root):
    try:
        return load_dataset(root)
    except FileNotFoundError as err:
        raise UserError(str(err)) from None


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg):
    out = _path(args, cfg, "out")
    sim = build(SimProcessConfig, cfg["sim"], seed=args.seed)
    train_set, test_set, z_f = generate_dataset(sim, threads=args.threads)
    save_dataset(train_set, test_set, out)
    write_dataset_info(out, kind="simulated", time_scale=sim.horizon, z_f=z_f)
    rows = [{"exp_id": e.exp_id, "split": e.split, "n_obs": e.n_obs, "failure_time": float(e.failure_time),
             "condition": e.condition} for e in train_set + test_set]
    write_csv(out / "summary.csv", ("exp_id", "split", "n_obs", "failure_time", "condition"), rows)
    print(f"wrote {len(train_set)} training and {len(test_set)} test experiments to {out} (z_f = {z_f:.6g})")
    return EXIT_OK


def cmd_ingest(args, cfg):
    root = _path(args, cfg, "femto_root")
    out = _path(args, cfg, "out")
    if not root.is_dir():
        raise UserError(f"--femto-root {root} is not a directory")
    try:
        train_set, test_set = ingest_femto(root, out, strict=not args.lenient, threads=args.threads,
                                           segment_length=args.segment_length)
    except (FemtoFormatError, FileNotFoundError) as err:
        raise UserError(str(err)) from None
    write_dataset_info(out, kind="bearings", time_scale=1000.0)
    print(f"ingested {len(train_set)} training and {len(test_set)} test experiments into {out}")
    return EXIT_OK


def model_config_for(cfg, data_root, kind=None):
    """Model config with dataset-dependent defaults (channels, length, time scale) filled in."""
    train_set, test_set = _load_data(data_root)
    first = (train_set or test_set)[0]
    values = dict(cfg["model"])
    values.setdefault("in_channels", first.segments.shape[1])
    values.setdefault("segment_length", first.segments.shape[2])
    info = read_dataset_info(data_root)
    if "time_scale" in info:
        values.setdefault("time_scale", info["time_scale"])
    return build(ModelConfig, values, kind=kind), train_set, test_set


def cmd_train(args, cfg):
    data = _path(args, cfg, "data")
    out = _path(args, cfg, "out")
    model_cfg, train_set, _ = model_config_for(cfg, data, kind=args.model)
    _check_compatible(model_cfg, train_set)
    train_cfg = build(TrainConfig, cfg["train"], seed=args.seed)
    sampler_cfg = build(SamplerConfig, cfg["sampler"])
    history = []
    try:
        result = train(model_cfg.kind, train_set, model_cfg, train_cfg, sampler_cfg, on_epoch=lambda row, _: history.append(row))
    except TrainingAborted as err:
        if err.params is not None:
            Model(model_cfg, err.params).save(out / "last_good")
        write_history(out / "history.csv", history)
        raise
    Model(model_cfg, result.params).save(out)
    write_history(out / "history.csv", result.history)
    print(f"best epoch {result.best_epoch}, validation NLL {result.best_val_nll:.6f}; checkpoint in {out}")
    return EXIT_OK


def _check_compatible(model_cfg, experiments):
    for exp in experiments:
        _, c, length = exp.segments.shape
        if (c, length) != (model_cfg.in_channels, model_cfg.segment_length):
            raise UserError(f"{exp.exp_id}: segments are {c}x{length} but the model expects "
                            f"{model_cfg.in_channels}x{model_cfg.segment_length}")


def load_checkpoint(directory):
    directory = Path(directory)
    if not (directory / "model.cfg").is_file() or not (directory / "params.bin").is_file():
        raise UserError(f"{directory} is not a checkpoint directory")
    model_cfg = ModelConfig.from_text((directory / "model.cfg").read_text())
    manifest = gc.read_manifest(gc.manifest_path(directory / "params.bin"))
    if manifest != expected_shapes(model_cfg):
        raise UserError(f"{directory}: parameter manifest does not match model.cfg")
    return Model.load(directory)


def cmd_evaluate(args, cfg):
    model = load_checkpoint(_path(args, cfg, "checkpoint"))
    train_set, test_set = _load_data(_path(args, cfg, "data"))
    dataset = test_set if args.split == "test" else train_set if args.split == "train" else train_set + test_set
    if not dataset:
        raise UserError(f"dataset has no {args.split} experiments")
    _check_compatible(model.cfg, dataset)
    sampler_cfg = build(SamplerConfig, cfg["sampler"], seed=args.seed)
    report = evaluate(model.params, dataset, model.cfg, sampler_cfg, n_past=args.n_past, threads=args.threads)
    out = _path(args, cfg, "out")
    out = out if out.suffix == ".csv" else out / f"report_npast{report.n_past}.csv"
    write_report(out, report)
    for exp_id, nll in report.per_experiment.items():
        print(f"{exp_id}\t{nll:.6f}")
    print(f"aggregate NLL {report.aggregate_nll:.6f} over {len(report.rows)} anchors (n_past {report.n_past})")
    return EXIT_OK


def cmd_plot(args, cfg):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    report = Path(args.report)
    if not report.is_file():
        raise UserError(f"report {report} does not exist")
    try:
        rows = read_report(report)
    except ValueError as err:
        raise UserError(str(err)) from None
    if not rows:
        raise UserError(f"report {report} is empty")
    out = _path(args, cfg, "out")
    out.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "gnrul"
    by_exp = {}
    for r in rows:
        by_exp.setdefault(r["exp_id"], []).append(r)
    for exp_id, rs in by_exp.items():
        t = np.array([r["timestamp"] for r in rs])
        col = {k: np.array([r[k] for r in rs]) for k in ("true_rul", "q05", "q50", "q95")}
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.fill_between(t, col["q05"], col["q95"], alpha=0.3, label="5-95% interval")
        ax.plot(t, col["q50"], label="predictive median")
        ax.plot(t, col["true_rul"], "k--", label="true RUL")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("remaining useful life [s]")
        ax.set_title(exp_id)
        ax.legend()
        fig.savefig(out / f"{exp_id}.svg", format="svg", metadata={"Date": None})
        plt.close(fig)
    print(f"wrote {len(by_exp)} plots to {out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "train": cmd_train, "evaluate": cmd_evaluate,
            "plot": cmd_plot}


def build_parser():
    parser = argparse.ArgumentParser(prog="gnrul", description=__doc__.split("\n", 1)[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="flat section.key = value config file")
        p.add_argument("--out", help="output directory (or .csv file for evaluate)")
        p.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
        if seed:
            p.add_argument("--seed", type=int, help="overrides the configured seed")
        return p

    common(sub.add_parser("simulate", help="generate a simulated run-to-failure dataset"))
    ing = common(sub.add_parser("ingest", help="convert raw bearing recordings into the dataset layout"), seed=False)
    ing.add_argument("--femto-root", dest="femto_root", help="directory with one subdirectory per bearing")
    ing.add_argument("--lenient", action="store_true", help="allow +-2 segments against the expected counts")
    ing.add_argument("--segment-length", dest="segment_length", type=int, default=SEGMENT_LENGTH,
                     help="samples per segment file")
    tr = common(sub.add_parser("train", help="train a model and write a checkpoint"))
    tr.add_argument("--data", help="dataset directory")
    tr.add_argument("--model", choices=["gnn-tcnn", "lstm-tcnn", "gnn_tcnn", "lstm_tcnn"])
    ev = common(sub.add_parser("evaluate", help="write a per-anchor prediction report"))
    ev.add_argument("--checkpoint", help="checkpoint directory written by train")
    ev.add_argument("--data", help="dataset directory")
    ev.add_argument("--n-past", dest="n_past", type=int, help="observations per prediction (default sampler.eval_past)")
    ev.add_argument("--split", choices=["test", "train", "all"], default="test")
    pl = common(sub.add_parser("plot", help="one SVG per experiment of a report"), seed=False)
    pl.add_argument("report", help="report CSV written by evaluate")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise UserError("--threads must be >= 1")
        if getattr(args, "n_past", None) is not None and args.n_past < 1:
            raise UserError("--n-past must be >= 1")
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UserError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USER
    except (TrainingAborted, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
