"""Quantum p0 against the classical hitting-time median on welded trees.

Writes results/welded_separation.{json,csv}; the CSV has one row per n with
p0 for g = 1 and g = 0, both thresholds and the classical median.
Usage: python3 scripts/welded_separation.py [max_n] [trials]
"""
import sys
from pathlib import Path

from mdqw.cli import ScenarioConfig, run
from mdqw.spectral import report_json

if __name__ == "__main__":
    max_n = int(sys.argv[1]) if len(sys.argv) > 1 else 6
    trials = int(sys.argv[2]) if len(sys.argv) > 2 else 200
    out = Path("results")
    out.mkdir(exist_ok=True)
    cfg = ScenarioConfig("welded-baseline", n=max_n, trials=trials, csv=str(out / "welded_separation.csv"))
    code, report = run(cfg)
    (out / "welded_separation.json").write_text(report_json(report) + "\n")
    for row in report["results"][0].get("rows", []):
        q = f"p0+={row['p0_positive']:.4e}  p0-={row['p0_negative']:.4e}" if "p0_positive" in row else "(odd n: classical only)"
        print(f"n={row['n']:2d}  {q}  median hitting={row['classical_hitting_median']}")
    sys.exit(code)
