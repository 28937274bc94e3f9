#!/usr/bin/env python3
"""Generate the seeded synthetic dataset suite plus its manifest.

Usage: python scripts/make_synthetic_suite.py --out data/synth [--seed 7]
"""

import argparse
from pathlib import Path

from defectbench.synthetic import write_suite


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="directory for CSVs and manifest.json")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    manifest = write_suite(Path(args.out), seed=args.seed)
    print(manifest)


if __name__ == "__main__":
    main()
