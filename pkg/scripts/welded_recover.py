"""Recover the hidden bit string of welded instances bit by bit.

Usage: python3 scripts/welded_recover.py [n] [n_seeds]
"""
import sys

from mdqw.cli import ScenarioConfig, run

if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 4
    seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 5
    code, report = run(ScenarioConfig("welded-recover", n=n, seeds=list(range(seeds))))
    for r in report["results"]:
        print(r)
    print("all recovered" if report["ok"] else "recovery failures")
    sys.exit(code)
