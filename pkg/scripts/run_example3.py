"""Effect of the space order: alpha in {1.2, 1.4}, beta in {1.3, 1.5, 1.7}, poly2, 2% noise."""

import argparse
from pathlib import Path

from _sweep import sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", type=Path, default=Path("out/example3.csv"))
    args = p.parse_args()
    rows = [(f"alpha={a} beta={b}", {"alpha": a, "beta": b, "intensity": "exp2",
                                     "sources": ["poly2"], "delta": 0.02})
            for a in (1.2, 1.4) for b in (1.3, 1.5, 1.7)]
    sweep(rows, range(args.seeds), args.out)


if __name__ == "__main__":
    main()
