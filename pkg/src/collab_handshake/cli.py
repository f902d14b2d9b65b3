"""Experiment runner.

    collab-handshake train  [--config FILE] [--setting S] [--seed N] [--out DIR] [--a.b VALUE ...]
    collab-handshake eval   --checkpoint CKPT [--checkpoint CKPT ...] [--dataset DIR] [--report FILE]
    collab-handshake sweep  [--messages 1,2,4] [--keys 4,16] [--out DIR]
    collab-handshake bis-table INPUT.csv [--out FILE]
    collab-handshake export --out DIR
    collab-handshake import DIR [--reexport DIR]

Exit codes: 0 ok, 2 usage or config error, 3 data or format error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_value
from .errors import (CollabError, ConfigError, DivergenceError, FormatError, GenerationError, ShapeError,
                     UndefinedMetricError)
from .model import Method, Model
from .scenario import Setting, build_split, episodes_bytes, load_episodes
from .train import evaluate, train

log = logging.getLogger("collab_handshake")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    p = _Parser(prog="collab-handshake", description="Learned handshake communication experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML (or frozen JSON) run config")
        sp.add_argument("--setting", choices=[s.value for s in Setting])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--dataset", help="directory written by `export`; default regenerates from config")

    sp = sub.add_parser("train", help="train one method and write checkpoint, history and config")
    common(sp)
    sp.add_argument("--method", choices=[m.value for m in Method])

    sp = sub.add_parser("eval", help="evaluate checkpoints on the test split and report BIS")
    common(sp)
    sp.add_argument("--checkpoint", action="append", required=True)
    sp.add_argument("--report", help="report path (default OUT/report.csv or .json)")

    sp = sub.add_parser("sweep", help="message-size x key-size grid")
    common(sp)
    sp.add_argument("--messages", type=_int_list)
    sp.add_argument("--keys", type=_int_list)

    sp = sub.add_parser("bis-table", help="BIS for every row of a method,setting,accuracy,kbpf CSV")
    sp.add_argument("input")
    sp.add_argument("--out", help="write the computed table as CSV")

    sp = sub.add_parser("export", help="write train/val/test episode containers")
    common(sp)

    sp = sub.add_parser("import", help="read an exported dataset directory")
    sp.add_argument("path")
    sp.add_argument("--reexport", help="write the imported episodes to this directory again")
    return p


def _overrides(extra):
    """``--a.b value`` / ``--a.b=value`` pairs left over by argparse."""
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"override {tok} needs a value")
            value = extra[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), parse_value(value)))
    return pairs


def resolve_config(args, extra):
    pairs = _overrides(extra)
    if getattr(args, "setting", None):
        pairs.append(("setting", args.setting))
    if getattr(args, "seed", None) is not None:
        pairs.append(("seed", args.seed))
    if getattr(args, "out", None):
        pairs.append(("output.dir", args.out))
    if getattr(args, "method", None):
        pairs.append(("model.method", args.method))
    if getattr(args, "messages", None):
        pairs.append(("sweep.messages", list(args.messages)))
    if getattr(args, "keys", None):
        pairs.append(("sweep.keys", list(args.keys)))
    return load_config(args.config, pairs)


def _write(path, text, mode="w"):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, mode) as fh:
        fh.write(text)


def load_dataset(cfg, path=None):
    if path is None:
        return build_split(cfg.setting, cfg.split.seeds(), cfg.split.sizes(), cfg.scenario, seed=cfg.seed)
    out = {}
    for name in SPLITS:
        episodes, _ = load_episodes(os.path.join(path, f"{name}.chsk"))
        out[name] = episodes
    return out


def cmd_train(cfg, dataset=None):
    data = load_dataset(cfg, dataset)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.json"), cfg.to_json())
    result = train(cfg.train_config(), data["train"], data["val"], scenario=cfg.scenario)
    save_checkpoint(result.params, cfg.model, os.path.join(out, "checkpoint.chsk"))
    _write(os.path.join(out, "history.csv"), result.history_csv())
    log.info("wrote %s", out)
    return result


def _check_compatible(model_cfg, cfg, path):
    for name in ("num_agents", "image_size", "num_classes"):
        have, want = getattr(model_cfg, name), getattr(cfg.scenario, name)
        if have != want:
            raise ShapeError(f"{path}: checkpoint {name}={have} but the dataset has {name}={want}")


def cmd_eval(cfg, checkpoints, dataset=None, report=None):
    data = load_dataset(cfg, dataset)
    records = []
    for path in checkpoints:
        params, model_cfg = load_checkpoint(path)
        _check_compatible(model_cfg, cfg, path)
        rec = evaluate(Model(model_cfg, params), data["test"], seed=cfg.seed)
        log.info("%s: acc %.4f", rec.method, rec.overall_acc)
        records.append(rec)
    metrics.attach_bis(records)
    fmt = cfg.metrics.format
    report = report or os.path.join(cfg.output.dir, f"report.{fmt}")
    if report.endswith(".json"):
        fmt = "json"
    elif report.endswith(".csv"):
        fmt = "csv"
    text = metrics.emit_report(records, report, fmt)
    _write(os.path.join(os.path.dirname(os.path.abspath(report)), "config.json"), cfg.to_json())
    sys.stdout.write(text)
    return records


SWEEP_COLUMNS = ("m", "k", "selection_acc", "overall_acc", "error")


def cmd_sweep(cfg, dataset=None):
    """Train and evaluate one model per (m, k). Cells the variant cannot build are reported, not run."""
    data = load_dataset(cfg, dataset)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.json"), cfg.to_json())
    rows = []
    for m in sorted(set(cfg.sweep.messages)):
        for k in sorted(set(cfg.sweep.keys)):
            try:
                model_cfg = dataclasses.replace(cfg.model, message_size=m, key_size=k)
            except ConfigError as exc:
                log.warning("m=%d k=%d rejected: %s", m, k, exc)
                rows.append({"m": m, "k": k, "selection_acc": "", "overall_acc": "", "error": str(exc)})
                continue
            result = train(cfg.train_config(model_cfg), data["train"], data["val"], scenario=cfg.scenario)
            rec = evaluate(Model(model_cfg, result.params), data["test"], seed=cfg.seed)
            sel = "" if rec.selection_acc is None else repr(rec.selection_acc)
            rows.append({"m": m, "k": k, "selection_acc": sel, "overall_acc": repr(rec.overall_acc), "error": ""})
            log.info("m=%d k=%d sel=%s acc=%.4f", m, k, sel, rec.overall_acc)
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        err = r["error"].replace('"', "'")
        lines.append(f'{r["m"]},{r["k"]},{r["selection_acc"]},{r["overall_acc"]},"{err}"' if err else
                     f'{r["m"]},{r["k"]},{r["selection_acc"]},{r["overall_acc"]},')
    text = "\n".join(lines) + "\n"
    _write(os.path.join(out, "sweep.csv"), text)
    sys.stdout.write(text)
    return rows


def cmd_bis_table(path, out=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    rows = metrics.bis_table(text)
    sys.stdout.write(metrics.format_bis_layout(rows))
    for r in rows:
        if r.error:
            sys.stderr.write(f"{r.method} / {r.setting}: BIS undefined ({r.error})\n")
    if out:
        _write(out, metrics.bis_rows_csv(rows))
    return rows


def cmd_export(cfg, dataset=None):
    data = load_dataset(cfg, dataset)
    out = cfg.output.dir
    meta = {"config": cfg.to_dict()}
    for name in SPLITS:
        _write(os.path.join(out, f"{name}.chsk"), episodes_bytes(data[name], dict(meta, split=name)), "wb")
    _write(os.path.join(out, "config.json"), cfg.to_json())
    log.info("exported %s to %s", {k: len(v) for k, v in data.items()}, out)
    return data


def cmd_import(path, reexport=None):
    loaded = {}
    for name in SPLITS:
        loaded[name] = load_episodes(os.path.join(path, f"{name}.chsk"))
    for name, (episodes, meta) in loaded.items():
        settings = sorted({e.setting.value for e in episodes})
        sys.stdout.write(f"{name}: {len(episodes)} episodes, setting {','.join(settings) or '-'}\n")
    if reexport:
        for name, (episodes, meta) in loaded.items():
            _write(os.path.join(reexport, f"{name}.chsk"), episodes_bytes(episodes, meta), "wb")
        cfg_path = os.path.join(path, "config.json")
        if os.path.exists(cfg_path):
            with open(cfg_path) as fh:
                _write(os.path.join(reexport, "config.json"), fh.read())
    return {k: v[0] for k, v in loaded.items()}


def run(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "bis-table":
        if extra:
            raise UsageError(f"unexpected arguments {extra}")
        return cmd_bis_table(args.input, args.out)
    if args.command == "import":
        if extra:
            raise UsageError(f"unexpected arguments {extra}")
        return cmd_import(args.path, args.reexport)
    cfg = resolve_config(args, extra)
    if args.command == "train":
        return cmd_train(cfg, args.dataset)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint, args.dataset, args.report)
    if args.command == "sweep":
        return cmd_sweep(cfg, args.dataset)
    return cmd_export(cfg, args.dataset)


def main(argv=None):
    try:
        run(argv)
    except (UsageError, ConfigError, GenerationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except DivergenceError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except (FormatError, UndefinedMetricError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except CollabError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
