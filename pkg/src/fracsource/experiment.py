"""Configuration, orchestration and persistence of reconstruction runs.

A run generates data on a fine grid with the discrete solver, subsamples
the flux onto the coarse time grid, adds noise and reconstructs on the
coarse mesh.  Every artefact is written atomically.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .csvio import atomic_write_text, read_csv, write_csv
from .errors import ConfigParseError, ConfigValidationError, FracSourceError, OrderMismatch
from .forward import (
    INTENSITIES,
    SOURCES,
    ObservationTrace,
    ProblemSpec,
    SpatialMesh,
    TimeGrid,
    solve_discrete,
)
from .inverse import (
    TikhonovConfig,
    add_noise,
    build_forward_matrix,
    build_time_convolution,
    reconstruct_modes,
    tikhonov_solve,
)
from .spectral import find_eigenvalues

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "config_from_dict",
    "run_experiment",
    "persist_results",
    "emit_plot_script",
]

SCHEMA_VERSION = 1
METHODS = ("tikhonov", "spectral_modes")
SEED_ENV = "FRACSOURCE_SEED"


@dataclass(frozen=True)
class ExperimentConfig:
    """One reconstruction experiment.

    ``intensity`` is a registry name (``exp2``, ``sin5``) or the path of a
    CSV file with columns ``t, lam``.  ``sources`` lists registry names or
    CSV paths with columns ``x, f``; each is reconstructed from its own data.
    """

    alpha: float
    beta: float
    T: float = 1.0
    intensity: str = "exp2"
    sources: tuple = ("poly2",)
    h_fine: float = 1e-3
    tau_fine: float = 5e-4
    h_coarse: float = 4e-3
    tau_coarse: float = 2e-3
    grading_exponent: float = 4.0
    delta: float = 0.02
    noise_mode: str = "relative"
    seed: int = 0
    nu: float | str = "auto"
    n_modes: int = 10
    methods: tuple = ("tikhonov",)
    allow_inverse_crime: bool = False
    schema_version: int = SCHEMA_VERSION

    def problems(self) -> list:
        """Every offending field, as human-readable messages."""
        out = []
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 1.0 < v <= 2.0:
                out.append(f"{name}: must lie in (1, 2], got {v}")
        if self.T < 1.0:
            out.append(f"T: observation window must reach t = 1, got {self.T}")
        for name in ("h_fine", "h_coarse"):
            h = getattr(self, name)
            if not 0 < h <= 0.5 or abs(1 / h - round(1 / h)) > 1e-9 * (1 / h):
                out.append(f"{name}: must split [0, 1] into an integer number of cells, got {h}")
        for name in ("tau_fine", "tau_coarse"):
            tau = getattr(self, name)
            if not 0 < tau or abs(self.T / tau - round(self.T / tau)) > 1e-9 * self.T / tau \
                    or abs(1 / tau - round(1 / tau)) > 1e-9 / tau:
                out.append(f"{name}: must split [0, 1] and [0, T] into whole steps, got {tau}")
        ratio = self.tau_coarse / self.tau_fine
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            out.append("tau_coarse: must be an integer multiple of tau_fine")
        same = self.h_coarse == self.h_fine and self.tau_coarse == self.tau_fine
        if same and not self.allow_inverse_crime:
            out.append("h_coarse/tau_coarse: data and inversion grids coincide (inverse crime); "
                       "set allow_inverse_crime to permit this")
        elif not same and (self.h_coarse < self.h_fine or self.tau_coarse < self.tau_fine):
            out.append("h_coarse/tau_coarse: inversion grid must not be finer than the data grid")
        if self.grading_exponent < 1:
            out.append(f"grading_exponent: must be >= 1, got {self.grading_exponent}")
        if not self.delta >= 0:
            out.append(f"delta: must be >= 0, got {self.delta}")
        if self.noise_mode not in ("relative", "absolute"):
            out.append(f"noise_mode: relative or absolute, got {self.noise_mode!r}")
        if self.nu != "auto" and not (isinstance(self.nu, (int, float)) and self.nu > 0):
            out.append(f"nu: positive number or 'auto', got {self.nu!r}")
        if not isinstance(self.n_modes, int) or self.n_modes < 1:
            out.append(f"n_modes: positive integer, got {self.n_modes!r}")
        if not self.methods or any(m not in METHODS for m in self.methods):
            out.append(f"methods: non-empty subset of {list(METHODS)}, got {list(self.methods)}")
        if not self.sources:
            out.append("sources: at least one source is required")
        if self.intensity not in INTENSITIES and not Path(self.intensity).is_file():
            out.append(f"intensity: unknown name or missing file {self.intensity!r}")
        for s in self.sources:
            if s not in SOURCES and not Path(s).is_file():
                out.append(f"sources: unknown name or missing file {s!r}")
        if self.schema_version != SCHEMA_VERSION:
            out.append(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigValidationError(problems)
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        d = asdict(self)
        d.update(changes)
        return config_from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sources"] = list(self.sources)
        d["methods"] = list(self.methods)
        return d


_FIELDS = {f.name for f in fields(ExperimentConfig)}
_ALIASES = {"source_truth": "sources", "source": "sources"}


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build and validate a config from plain data; unknown keys are errors."""
    if not isinstance(d, dict):
        raise ConfigValidationError([f"top level: expected an object, got {type(d).__name__}"])
    d = {_ALIASES.get(k, k): v for k, v in d.items()}
    problems = [f"{k}: unknown field" for k in d if k not in _FIELDS]
    problems += [f"{k}: required" for k in ("alpha", "beta") if k not in d]
    if problems:
        raise ConfigValidationError(problems)
    d = dict(d)
    for key in ("sources", "methods"):
        if key in d:
            v = d[key]
            d[key] = (v,) if isinstance(v, str) else tuple(v)
    try:
        for key in ("alpha", "beta", "T", "h_fine", "tau_fine", "h_coarse", "tau_coarse",
                    "grading_exponent", "delta"):
            if key in d:
                d[key] = float(d[key])
        if "seed" in d:
            d["seed"] = int(d["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigValidationError([f"numeric field: {exc}"]) from None
    return ExperimentConfig(**d).validate()


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; defaults fill everything except the two orders."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    base = path.parent
    # relative file references resolve against the config's directory
    if isinstance(data, dict):
        for key in ("intensity",):
            v = data.get(key)
            if isinstance(v, str) and v not in INTENSITIES and not Path(v).is_absolute():
                data[key] = str(base / v)
        for key in ("sources", "source_truth", "source"):
            v = data.get(key)
            if v is None:
                continue
            items = [v] if isinstance(v, str) else v
            data[key] = [s if s in SOURCES or Path(s).is_absolute() else str(base / s)
                         for s in items]
    return config_from_dict(data)


def _resolve(name, registry, cols):
    if name in registry:
        return name
    table = read_csv(name)
    return (table[cols[0]], table[cols[1]])


def _label(name: str) -> str:
    return name if name in SOURCES else Path(name).stem


@dataclass
class RunManifest:
    """Outcome of :func:`run_experiment`.

    ``metrics[source][method]`` holds the relative L2 error and the
    regularisation parameter; ``failures`` records method-level errors,
    each with its exit code.  ``artifacts`` keeps the arrays for
    :func:`persist_results` and is not serialised.
    """

    config: dict
    version: str = __version__
    seed: int = 0
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict, repr=False)

    @property
    def exit_code(self) -> int:
        return self.failures[0]["exit_code"] if self.failures else 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("artifacts")
        return d


class _Clock:
    def __init__(self, store):
        self.store = store

    def __call__(self, name):
        clock = self

        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.store[name] = clock.store.get(name, 0.0) + time.perf_counter() - self.t0

        return _T()


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Data generation, noise, reconstruction and error evaluation.

    Method-level errors (for instance the modal formula with unequal
    orders) are recorded in the manifest; the other methods still run.
    """
    config.validate()
    seed = int(os.environ.get(SEED_ENV, config.seed))
    manifest = RunManifest(config.to_dict(), seed=seed)
    tick = _Clock(manifest.timings)
    intensity = _resolve(config.intensity, INTENSITIES, ("t", "lam"))

    fine_mesh = SpatialMesh.from_h(config.h_fine, config.grading_exponent)
    fine_grid = TimeGrid.over(config.T, config.tau_fine)
    mesh = SpatialMesh.from_h(config.h_coarse, config.grading_exponent)
    grid = TimeGrid.over(config.T, config.tau_coarse)
    ratio = round(config.tau_coarse / config.tau_fine)

    specs = {}
    for name in config.sources:
        specs[_label(name)] = ProblemSpec(config.alpha, config.beta, intensity,
                                          _resolve(name, SOURCES, ("x", "f")), config.T)

    with tick("forward_fine"):
        # one march for all sources
        first = next(iter(specs.values()))
        f_cols = np.column_stack([s.f(fine_mesh.interior) for s in specs.values()])
        u = solve_discrete(first, fine_mesh, fine_grid, f_nodal=f_cols).values
        x = fine_mesh.nodes
        flux = (u[:, -1] - u[:, -2]) / (x[-1] - x[-2])
    clean = {label: ObservationTrace(flux[:, i], fine_grid).subsample(ratio)
             for i, label in enumerate(specs)}

    with tick("eigensystem"):
        system = find_eigenvalues(config.beta, config.n_modes)
    manifest.artifacts["eigensystem"] = system

    fmap = None
    if "tikhonov" in config.methods:
        with tick("forward_matrix"):
            fmap = build_forward_matrix(first, mesh, grid)

    kernel = None
    if "spectral_modes" in config.methods:
        if abs(config.alpha - config.beta) > 1e-12:
            err = OrderMismatch(f"modal reconstruction needs alpha = beta "
                                f"(got {config.alpha}, {config.beta})")
            _fail(manifest, "spectral_modes", err)
            manifest.notes.append("alpha != beta: only the Tikhonov method applies")
        else:
            try:
                unit = TimeGrid(round(1.0 / config.tau_coarse), config.tau_coarse)
                kernel = build_time_convolution(first.lam, unit)
            except FracSourceError as err:
                _fail(manifest, "spectral_modes", err)

    for k, (label, spec) in enumerate(specs.items()):
        # independent noise per source, reproducible from the run seed
        noisy = add_noise(clean[label], config.delta, seed + 1000 * k, mode=config.noise_mode)
        f_true = spec.f(mesh.nodes)
        f_true[[0, -1]] = 0.0
        entry = {"trace_clean": clean[label], "trace_noisy": noisy, "x": mesh.nodes,
                 "f_true": f_true, "f_hat": {}}
        manifest.metrics[label] = {}
        if fmap is not None:
            cfg = TikhonovConfig(nu=config.nu, delta_estimate=config.delta, noise_mode=config.noise_mode)
            try:
                with tick("tikhonov"):
                    r = tikhonov_solve(fmap, noisy, cfg, f_true=f_true, mesh=mesh)
                entry["f_hat"]["tikhonov"] = r.f_hat
                manifest.metrics[label]["tikhonov"] = {
                    "relative_l2_error": r.error_vs_truth, "nu": r.nu_used,
                    "residual_norm": r.residual_norm}
            except FracSourceError as err:
                _fail(manifest, "tikhonov", err, label)
        if kernel is not None:
            try:
                with tick("spectral_modes"):
                    r = reconstruct_modes(noisy, system, kernel, config.n_modes, config.alpha,
                                          delta=config.delta, mesh=mesh, f_true=f_true)
                entry["f_hat"]["spectral"] = r.f_hat
                manifest.metrics[label]["spectral_modes"] = {
                    "relative_l2_error": r.error_vs_truth, "modes_kept": r.meta["modes_kept"],
                    "residual_norm": r.residual_norm}
            except FracSourceError as err:
                _fail(manifest, "spectral_modes", err, label)
        manifest.artifacts[label] = entry
    return manifest


def _fail(manifest, method, err, source=None):
    manifest.failures.append({
        "method": method, "source": source, "error": type(err).__name__,
        "message": str(err), "exit_code": getattr(err, "exit_code", 1)})


def _file_names(labels, label):
    suffix = "" if len(labels) == 1 else f"_{label}"
    return f"trace{suffix}.csv", f"reconstruction{suffix}.csv"


def persist_results(manifest: RunManifest, outdir) -> dict:
    """Write ``manifest.json``, trace and reconstruction CSVs and ``eigensystem.json``.

    With several sources the CSV names carry the source label as suffix.
    Returns ``{role: path}``.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    labels = [k for k in manifest.artifacts if k != "eigensystem"]
    paths = {}
    for label in labels:
        a = manifest.artifacts[label]
        tname, rname = _file_names(labels, label)
        tc, tn = a["trace_clean"], a["trace_noisy"]
        write_csv(outdir / tname, ["t", "phi_clean", "phi_noisy"], [tc.times, tc.samples, tn.samples])
        head, cols = ["x", "f_true"], [a["x"], a["f_true"]]
        for method, vec in a["f_hat"].items():
            head.append(f"f_hat_{method}")
            cols.append(vec)
        write_csv(outdir / rname, head, cols)
        paths[f"trace:{label}"] = str(outdir / tname)
        paths[f"reconstruction:{label}"] = str(outdir / rname)
    if "eigensystem" in manifest.artifacts:
        atomic_write_text(outdir / "eigensystem.json", manifest.artifacts["eigensystem"].to_json())
        paths["eigensystem"] = str(outdir / "eigensystem.json")
    paths["manifest"] = str(outdir / "manifest.json")
    manifest.outputs = paths
    atomic_write_text(outdir / "manifest.json", json.dumps(manifest.to_dict(), indent=2) + "\n")
    return paths


def emit_plot_script(manifest: RunManifest, outdir) -> Path:
    """Gnuplot script drawing ``f_true`` against each reconstruction and the flux traces.

    Refuses when a CSV named in the manifest is missing.
    """
    outdir = Path(outdir)
    labels = [k for k in manifest.artifacts if k != "eigensystem"]
    if not labels:
        raise ValueError("manifest holds no results to plot")
    lines = ["# gnuplot script; run with: gnuplot plot.gp", "set datafile separator ','",
             "set key autotitle columnhead", "set terminal pngcairo size 1200,450", ""]
    for label in labels:
        tname, rname = _file_names(labels, label)
        for name in (tname, rname):
            if not (outdir / name).is_file():
                raise FileNotFoundError(f"{outdir / name} is missing; run persist_results first")
        with open(outdir / rname) as fh:
            header = fh.readline().strip().split(",")
        lines += [f"set output 'fig_{label}.png'", "set multiplot layout 1,2",
                  f"set title 'source {label}'", "set xlabel 'x'"]
        curves = [f"'{rname}' using 1:{i + 1} with lines lw 2" if i == 1 else
                  f"'' using 1:{i + 1} with lines dt {i}" for i in range(1, len(header))]
        lines.append("plot " + ", \\\n     ".join(curves))
        lines += ["set title 'flux at x = 1'", "set xlabel 't'",
                  f"plot '{tname}' using 1:2 with lines lw 2, '' using 1:3 with points pt 7 ps 0.3",
                  "unset multiplot", ""]
    path = outdir / "plot.gp"
    atomic_write_text(path, "\n".join(lines))
    return path
