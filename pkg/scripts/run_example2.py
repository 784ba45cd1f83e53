"""Effect of the time order: alpha = beta in {1.2, 1.6, 2.0}, two intensities, poly2, 2% noise."""

import argparse
from pathlib import Path

from _sweep import sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", type=Path, default=Path("out/example2.csv"))
    args = p.parse_args()
    rows = [(f"{inten} alpha={a}", {"alpha": a, "beta": a, "intensity": inten,
                                    "sources": ["poly2"], "delta": 0.02})
            for inten in ("exp2", "sin5") for a in (1.2, 1.6, 2.0)]
    sweep(rows, range(args.seeds), args.out)


if __name__ == "__main__":
    main()
