"""Run the full two-regime study and write figure data, summary and diagnostics.

    python scripts/reproduce.py [--config configs/reference.json] [--out DIR] [--no-mc]
"""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

from regime_impact.config import load_config
from regime_impact.experiments import CheckFailure, run_reference_suite

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "reference.json"))
    ap.add_argument("--out", default=None)
    ap.add_argument("--no-mc", action="store_true", help="skip the Monte Carlo cross-checks")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.no_mc:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, monte_carlo=False))
    out = Path(args.out or cfg.output.directory)
    try:
        report = run_reference_suite(cfg, write=True, out_dir=out)
    except CheckFailure as exc:
        print(f"checks failed, nothing written: {exc}", file=sys.stderr)
        return 5
    for c in report.checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    print(json.dumps(report.summary, indent=2, default=float))
    print(f"written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
