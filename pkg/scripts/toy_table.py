"""Train every method on every toy setting and print a results table with BIS.

    python scripts/toy_table.py [--iterations N] [--out DIR] [--settings a,b]

One report per setting lands in OUT/<setting>/report.csv, plus a combined
table.csv in the method,setting,accuracy,kbpf layout read by ``bis-table``.
"""
import argparse
import csv
import os
import time

from collab_handshake.checkpoint import save_checkpoint
from collab_handshake.metrics import attach_bis, emit_report, format_bis_layout, bis_table
from collab_handshake.model import Method, Model, ModelConfig
from collab_handshake.scenario import Setting, build_split
from collab_handshake.train import TrainConfig, evaluate, train


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/toy_table")
    p.add_argument("--settings", default=",".join(s.value for s in Setting))
    p.add_argument("--methods", default=",".join(m.value for m in Method))
    args = p.parse_args()

    rows = []
    for name in args.settings.split(","):
        setting = Setting(name)
        data = build_split(setting, seed=args.seed)
        records = []
        for m in args.methods.split(","):
            cfg = TrainConfig(iterations=args.iterations, eval_every=args.iterations // 10 or 1, seed=args.seed,
                              model=ModelConfig(method=m))
            t0 = time.perf_counter()
            result = train(cfg, data["train"], data["val"])
            rec = evaluate(Model(cfg.model, result.params), data["test"], seed=args.seed)
            records.append(rec)
            save_checkpoint(result.params, cfg.model, os.path.join(args.out, setting.value, f"{m}.chsk"))
            print(f"{setting.value:<20} {rec.method:<18} acc {100 * rec.overall_acc:6.2f} "
                  f"sel {'' if rec.selection_acc is None else f'{100 * rec.selection_acc:6.2f}'} "
                  f"({time.perf_counter() - t0:.0f}s)", flush=True)
        attach_bis(records)
        emit_report(records, os.path.join(args.out, setting.value, "report.csv"))
        rows += [(r.method, setting.value, 100 * r.overall_acc, "-" if r.kbpf is None else r.kbpf) for r in records]

    path = os.path.join(args.out, "table.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "setting", "accuracy", "kbpf"])
        w.writerows(rows)
    with open(path) as fh:
        print(format_bis_layout(bis_table(fh.read())))


if __name__ == "__main__":
    main()
