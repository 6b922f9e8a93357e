"""Batch experiment runner: ``harmstrat <stage> --config cfg.json [--out dir] [--workers N]``.

Stages run in the fixed order solve, order, strata, flatness, cover,
minkowski, report; a subcommand runs the stages it needs and writes their
artifacts.  Every artifact carries the hash of the effective configuration,
and numeric artifacts depend only on the configuration (wall-clock times go
to ``manifest.json`` alone).

Exit codes: 0 success, 2 invalid configuration, 3 a stage assertion failed
(``diagnostic.json`` is written), 4 input/output failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .covering import (CoveringAssertionError, OrderCache, initial_cover, iterate_refine,
                       minkowski_estimate, packing_measure, refine_cover)
from .fields import DomainGrid, MapField, boundary_trace, example_map
from .flatness import DiscreteMeasure, jones_integral, mean_flatness, reifenberg_hypothesis
from .frequency import frequency_profile
from .solver import solve_dirichlet
from .strata import detect_singular, quantitative_stratum, splitting_data

STAGES = ("solve", "order", "strata", "flatness", "cover", "minkowski", "report")
NEEDS = {
    "solve": ("solve",),
    "order": ("solve", "order"),
    "strata": ("solve", "strata"),
    "flatness": ("solve", "strata", "flatness"),
    "cover": ("solve", "strata", "cover"),
    "minkowski": ("solve", "strata", "minkowski"),
    "report": STAGES,
}
EXAMPLES = ("tripod", "product", "linear")
EXIT_CONFIG, EXIT_STAGE, EXIT_IO = 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    dim: int = 2
    radius: float = 1.0
    spacing: float = 1 / 128


@dataclass
class SolverConfig:
    tol: Optional[float] = None
    max_sweeps: int = 100_000


@dataclass
class AnalysisConfig:
    eta: float = 0.05
    k_list: list = field(default_factory=lambda: [0])
    order_radii: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    stratum_radius: float = 1 / 32


@dataclass
class CoveringConfig:
    k: int = 0
    rho: float = 1 / 256
    delta: float = 0.05
    sigmas: list = field(default_factory=lambda: [1 / 32, 1 / 64])
    S: float = 1 / 8
    s: float = 1 / 64
    minkowski_radii: list = field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32])


@dataclass
class FlatnessConfig:
    delta_R: float = 0.01
    C_R: float = 40.0
    radius: float = 0.5


@dataclass
class ExperimentConfig:
    """Everything a pipeline run depends on.

    ``mode`` is ``analytic`` (the example formula on the grid) or ``solved``
    (the Dirichlet problem with the example as boundary data).  A
    ``trace_file`` (a JSON-lines field) replaces the example and its grid.
    """

    example: str = "tripod"
    mode: str = "analytic"
    trace_file: Optional[str] = None
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    covering: CoveringConfig = field(default_factory=CoveringConfig)
    flatness: FlatnessConfig = field(default_factory=FlatnessConfig)

    @classmethod
    def defaults(cls, example: str = "tripod") -> "ExperimentConfig":
        cfg = cls(example=example)
        if example == "product":
            cfg.grid = GridConfig(3, 1.0, 1 / 32)
            cfg.analysis.k_list = [1]
            cfg.covering.k = 1
            cfg.covering.s = 1 / 32
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        base = cls.defaults(d.get("example", "tripod"))
        sections = {"grid": GridConfig, "solver": SolverConfig, "analysis": AnalysisConfig,
                    "covering": CoveringConfig, "flatness": FlatnessConfig}
        known = set(sections) | {"example", "mode", "trace_file"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("example", "mode", "trace_file"):
            if key in d:
                setattr(base, key, d[key])
        for name, kind in sections.items():
            if name in d:
                sub = asdict(getattr(base, name))
                extra = set(d[name]) - set(sub)
                if extra:
                    raise ConfigError(f"unknown fields in {name}: {sorted(extra)}")
                sub.update(d[name])
                setattr(base, name, kind(**sub))
        return base

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> None:
        g, a, c, fl = self.grid, self.analysis, self.covering, self.flatness
        if self.trace_file is None and self.example not in EXAMPLES:
            raise ConfigError(f"example must be one of {EXAMPLES}")
        if self.mode not in ("analytic", "solved"):
            raise ConfigError("mode must be 'analytic' or 'solved'")
        if self.trace_file is None:
            want = 3 if self.example == "product" else 2
            if g.dim != want:
                raise ConfigError(f"example {self.example} lives in dimension {want}")
        if not (g.radius > 0 and g.spacing > 0):
            raise ConfigError("grid radius and spacing must be positive")
        if g.spacing > g.radius / 8 * (1 + 1e-12):
            raise ConfigError(f"grid spacing {g.spacing} exceeds radius/8")
        if self.solver.tol is not None and not self.solver.tol > 0:
            raise ConfigError("solver tol must be positive")
        if self.solver.max_sweeps < 1:
            raise ConfigError("max_sweeps must be positive")
        if not 0 < a.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        if not a.order_radii or min(a.order_radii) <= 0:
            raise ConfigError("order radii must be positive")
        if not 0 < a.stratum_radius <= 1:
            raise ConfigError("stratum_radius must lie in (0, 1]")
        if any(int(k) != k or k < 0 for k in a.k_list):
            raise ConfigError("k_list must hold nonnegative integers")
        if not 0 < c.rho <= 1 / 256:
            raise ConfigError("rho must lie in (0, 1/256]")
        if not c.delta > 0:
            raise ConfigError("delta must be positive")
        if not 0 < c.s < c.S <= 1 / 8:
            raise ConfigError("need 0 < s < S <= 1/8")
        if not c.sigmas or any(not 0 < sg < c.S for sg in c.sigmas):
            raise ConfigError("sigmas must lie in (0, S)")
        if not 0 <= c.k < g.dim:
            raise ConfigError("covering k must lie in [0, dim)")
        if not c.minkowski_radii or min(c.minkowski_radii) < g.spacing:
            raise ConfigError("minkowski radii must be at least the grid spacing")
        if not (fl.delta_R > 0 and fl.C_R > 0 and fl.radius > 0):
            raise ConfigError("flatness parameters must be positive")


# -- artifacts ----------------------------------------------------------------

def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


class Run:
    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int = 1):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.tag = cfg.hash()
        self.artifacts = []
        self.times = {}
        self.summary = {}
        self.field: Optional[MapField] = None
        self.factor: Optional[MapField] = None
        self.strata = {}

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def write_json(self, name: str, payload) -> None:
        body = {"config_hash": self.tag, **_clean(payload)}
        self.path(name).write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")

    @property
    def header(self) -> str:
        return f"config_hash={self.tag}"


def _build_field(run: Run) -> MapField:
    cfg = run.cfg
    if cfg.trace_file:
        loaded = MapField.from_jsonl(cfg.trace_file)
        if cfg.mode == "analytic":
            return loaded
        grid, (_, trace) = loaded.grid, boundary_trace(loaded)
        target = loaded.target
    else:
        g = cfg.grid
        grid = DomainGrid(g.dim, tuple([0.0] * g.dim), g.radius, g.spacing)
        amap = example_map(cfg.example, g.dim)
        if cfg.mode == "analytic":
            return MapField.from_analytic(grid, amap)
        target = amap.target
        trace = amap.at(grid.coords[np.flatnonzero(grid.boundary)])
    f, report = solve_dirichlet(grid, target, trace, tol=cfg.solver.tol,
                                max_sweeps=cfg.solver.max_sweeps, workers=run.workers)
    run.summary["solve"] = report.to_json()
    run.write_json("solve.json", report.to_json())
    if not report.converged:
        raise AssertionError(f"solver stopped after {report.sweeps} sweeps without converging")
    return f


def _factor_field(run: Run) -> MapField:
    """Field on which strata are computed: the pod factor for the product example."""
    f = run.field
    if run.cfg.trace_file is None and run.cfg.example == "product":
        if f.is_analytic:
            return MapField.from_analytic(f.grid, example_map("product_factor"))
        from .targets import PointArray, make_target

        pod = make_target(0, f.target.ray_count)
        vals = PointArray(np.zeros((f.grid.n_nodes, 0)), f.values.ray, f.values.radial)
        return MapField(f.grid, pod, vals, "solved")
    return f


def stage_solve(run: Run) -> None:
    run.field = _build_field(run)
    run.factor = _factor_field(run)
    run.field.to_jsonl(run.path("field.jsonl"), header={"config_hash": run.tag})
    run.summary.setdefault("solve", {})["nodes"] = run.field.grid.n_nodes


def stage_order(run: Run) -> None:
    f = run.field
    center = np.asarray(f.grid.center, float)
    prof = frequency_profile(f, center, run.cfg.analysis.order_radii)
    prof.to_csv(run.path("order.csv"), header=run.header)
    run.summary["order"] = {"center": center, "radii": prof.radii, "Ord_phi": prof.Ord_phi,
                            "Ord": prof.Ord, "max_violation": prof.max_violation()}
    run.write_json("order.json", run.summary["order"])


def stage_strata(run: Run) -> None:
    f, u = run.field, run.factor
    a = run.cfg.analysis
    sing = detect_singular(f)
    with open(run.path("singular.csv"), "w") as fh:
        fh.write(f"# {run.header}\n")
        fh.write("node," + ",".join(f"x{i + 1}" for i in range(f.dim)) + "\n")
        for i in sing:
            fh.write(f"{int(i)}," + ",".join(repr(float(c)) for c in f.grid.coords[i]) + "\n")
    split = splitting_data(f, f.grid.center)
    info = {"singular_nodes": int(sing.size), "splitting": split.to_json(), "strata": {}}
    for k in sorted(set(int(k) for k in a.k_list) | {run.cfg.covering.k}):
        st = quantitative_stratum(u, k, a.eta, a.stratum_radius)
        run.strata[k] = st.nodes
        st.to_csv(u, run.path(f"stratum_k{k}.csv"), header=run.header)
        info["strata"][str(k)] = int(st.nodes.size)
    run.summary["strata"] = info
    run.write_json("strata.json", info)


def _cover_nodes(run: Run) -> np.ndarray:
    u = run.factor
    c = run.cfg.covering
    nodes = run.strata.get(c.k, np.zeros(0, dtype=np.int64))
    center = np.asarray(u.grid.center, float)
    pts = u.grid.coords[nodes]
    return nodes[np.linalg.norm(pts - center, axis=1) <= c.S * (1 + 1e-12)]


def stage_flatness(run: Run) -> None:
    u = run.factor
    c, fl = run.cfg.covering, run.cfg.flatness
    nodes = run.strata.get(c.k, np.zeros(0, dtype=np.int64))
    center = np.asarray(u.grid.center, float)
    mu = DiscreteMeasure(u.grid.coords[nodes], np.full(nodes.size, u.spacing ** c.k))
    mu.to_csv(run.path("stratum_measure.csv"), header=run.header)
    info = {"atoms": len(mu), "k": c.k}
    if len(mu):
        info["mean_flatness"] = mean_flatness(mu, center, fl.radius, c.k)
        info["jones"] = _clean(jones_integral(mu, center, fl.radius, c.k).__dict__)
        info["reifenberg"] = reifenberg_hypothesis(mu, fl.delta_R, c.k, fl.C_R).to_json()
    run.summary["flatness"] = info
    run.write_json("flatness.json", info)


def stage_cover(run: Run) -> None:
    u = run.factor
    c = run.cfg.covering
    D = _cover_nodes(run)
    center = np.asarray(u.grid.center, float)
    orders = OrderCache(u)
    info = {"D": int(D.size), "k": c.k, "initial": [], "refine": None}
    for i, sigma in enumerate(c.sigmas):
        cov = initial_cover(u, D, center, c.S, sigma, c.rho, c.delta, c.k, orders=orders)
        run.write_json(f"cover_sigma{i}.json", {"sigma": sigma, "params": cov.params,
                                                "balls": cov.to_json(), "report": cov.report})
        info["initial"].append({"sigma": sigma, "balls": len(cov),
                                "packing_ratio": cov.packing_ratio, "ok": cov.report["ok"]})
    ref = refine_cover(u, D, center, c.S, c.s, c.k, run.cfg.analysis.eta, c.delta, c.rho,
                       orders=orders)
    _, rounds, M = iterate_refine(u, D, center, c.s, c.k, c.delta, c.rho, c.S, orders)
    run.write_json("refine.json", {"params": ref.params, "balls": ref.to_json(),
                                   "report": ref.report, "rounds": rounds})
    info["refine"] = {"balls": len(ref), "packing_ratio": ref.packing_ratio,
                      "ok": ref.report["ok"], "rounds": rounds,
                      "round_bound": math.ceil(M / c.delta) if D.size else 0}
    if len(ref) and D.size:
        mu = packing_measure(ref)
        info["packing_reifenberg"] = reifenberg_hypothesis(
            mu, run.cfg.flatness.delta_R, c.k, run.cfg.flatness.C_R).to_json()
    ratios = [r["packing_ratio"] for r in info["initial"]]
    info["packing_ratio_spread"] = max(ratios) / min(ratios)
    run.summary["cover"] = info
    run.write_json("cover.json", info)


def stage_minkowski(run: Run) -> None:
    u = run.factor
    c = run.cfg.covering
    table = minkowski_estimate(u, c.k, run.cfg.analysis.eta, c.minkowski_radii,
                               stratum=run.strata.get(c.k), cover_nodes=_cover_nodes(run),
                               delta=c.delta, rho=c.rho)
    table.to_csv(run.path("minkowski.csv"), header=run.header)
    info = {"k": c.k, "n": u.dim, "slope": table.slope, "cover_slope": table.cover_slope,
            "expected": u.dim - c.k}
    run.summary["minkowski"] = info
    run.write_json("minkowski.json", info)


def stage_report(run: Run) -> None:
    run.write_json("report.json", {"config": run.cfg.to_dict(), "stages": run.summary})


RUNNERS = {"solve": stage_solve, "order": stage_order, "strata": stage_strata,
           "flatness": stage_flatness, "cover": stage_cover, "minkowski": stage_minkowski,
           "report": stage_report}


def run(cfg: ExperimentConfig, stage: str, out, workers: int = 1) -> int:
    """Run the stages ``stage`` needs; return the exit status."""
    try:
        cfg.validate()
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out)
    job = Run(cfg, out, workers)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
        for name in NEEDS[stage]:
            t0 = time.perf_counter()
            RUNNERS[name](job)
            job.times[name] = time.perf_counter() - t0
    except (AssertionError, CoveringAssertionError, ValueError, ArithmeticError) as exc:
        detail = getattr(exc, "detail", None)
        diag = {"config_hash": job.tag, "stage": name, "error": type(exc).__name__,
                "message": str(exc), "detail": _clean(detail) if detail else None}
        try:
            (out / "diagnostic.json").write_text(json.dumps(diag, sort_keys=True, indent=1))
        except OSError:
            return EXIT_IO
        print(f"stage {name} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest = {"config_hash": job.tag, "config": cfg.to_dict(), "stages": list(NEEDS[stage]),
                "seconds": job.times, "workers": workers, "artifacts": job.artifacts}
    try:
        (out / "manifest.json").write_text(json.dumps(_clean(manifest), sort_keys=True,
                                                      indent=1) + "\n")
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def load_config(path: Optional[str], example: Optional[str], overrides) -> ExperimentConfig:
    raw = {}
    if path:
        raw = json.loads(Path(path).read_text())
    if example:
        raw["example"] = example
    for item in overrides or []:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        _set_path(raw, key, value)
    return ExperimentConfig.from_dict(raw)


def _selftest() -> int:
    import pytest

    tests = Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"
    if not tests.exists():
        print("acceptance suite not found next to the package", file=sys.stderr)
        return EXIT_CONFIG
    return int(pytest.main([str(tests), "-q", "-s"]))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="harmstrat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES + ("selftest",):
        p = sub.add_parser(name)
        if name == "selftest":
            continue
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--out", default="harmstrat-out", help="artifact directory")
        p.add_argument("--workers", type=int, default=1, help="solver threads")
        p.add_argument("--example", choices=EXAMPLES, help="override the example")
        p.add_argument("--mode", choices=("analytic", "solved"), help="override the mode")
        p.add_argument("--spacing", type=float, help="override the grid spacing")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted config field with a JSON value")
    args = parser.parse_args(argv)
    if args.stage == "selftest":
        return _selftest()
    overrides = list(args.set or [])
    if args.mode:
        overrides.append(f"mode={args.mode}")
    if args.spacing is not None:
        overrides.append(f"grid.spacing={args.spacing!r}")
    if args.workers < 1:
        print("workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.example, overrides)
    except (ConfigError, TypeError, json.JSONDecodeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    return run(cfg, args.stage, args.out, args.workers)


if __name__ == "__main__":
    sys.exit(main())
