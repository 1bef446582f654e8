#!/usr/bin/env python3
"""Run the ten encoder-size x pretraining-corpus x freeze configs and print
one metric table.

    tools/ablation_grid.py --cli build/tools/neurocap --out grid/ [--step-scale 0.05]
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
COLUMNS = ["bleu_1", "bleu_2", "bleu_3", "bleu_4", "meteor", "rouge_1", "rouge_l", "cider", "clip"]
HEADER = ["B@1", "B@2", "B@3", "B@4", "M", "R-1", "R-L", "CIDEr", "CLIP"]


def run_one(cli, config, out_dir, step_scale, data):
    report = out_dir / (config.stem + ".json")
    cmd = [str(cli), "ablate", "--config", str(config), "--out", str(report)]
    if step_scale != 1.0:
        cmd += ["--step-scale", repr(step_scale)]
    if data:
        cmd += ["--data", str(data)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"{config.name}: neurocap exited with {proc.returncode}")
    return json.loads(report.read_text())


def fmt(v):
    return "-" if v is None else f"{v:.3f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cli", type=Path, required=True, help="path to the neurocap binary")
    ap.add_argument("--out", type=Path, required=True, help="directory for per-config reports and table.md")
    ap.add_argument("--configs", type=Path, default=HERE / "configs" / "ablation")
    ap.add_argument("--step-scale", type=float, default=1.0, help="multiply every stage's step count")
    ap.add_argument("--data", type=Path, help="dataset directory shared by all runs")
    args = ap.parse_args()

    configs = sorted(args.configs.glob("id*.json"))
    if not configs:
        raise SystemExit(f"no id*.json configs in {args.configs}")
    args.out.mkdir(parents=True, exist_ok=True)

    rows = []
    for cfg in configs:
        print(f"running {cfg.name} ...", file=sys.stderr, flush=True)
        rep = run_one(args.cli, cfg, args.out, args.step_scale, args.data)
        rows.append((rep["label"], [rep.get(c) for c in COLUMNS]))

    lines = ["| setting | " + " | ".join(HEADER) + " |", "|---" * (len(HEADER) + 1) + "|"]
    for label, vals in rows:
        lines.append(f"| {label} | " + " | ".join(fmt(v) for v in vals) + " |")
    table = "\n".join(lines) + "\n"
    (args.out / "table.md").write_text(table)
    print(table, end="")


if __name__ == "__main__":
    main()
