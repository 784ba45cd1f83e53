"""Shared helper: median Tikhonov error over seeds for a list of configurations."""

import warnings

import numpy as np

from fracsource.experiment import config_from_dict, run_experiment


def median_error(fields: dict, seeds) -> float:
    errs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for seed in seeds:
            m = run_experiment(config_from_dict(dict(fields, seed=seed)))
            errs.append(m.metrics[fields["sources"][0]]["tikhonov"]["relative_l2_error"])
    return float(np.median(errs))


def sweep(rows, seeds, out=None):
    """``rows`` is a list of (label, fields); prints and optionally writes a CSV table."""
    lines = ["case,median_relative_l2_error"]
    for label, fields in rows:
        e = median_error(fields, seeds)
        print(f"{label:28s} {e:.4f}", flush=True)
        lines.append(f"{label},{e!r}")
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n")
