"""Experiment definition and execution.

Configs are flat ``key = value`` INI files. An experiment is: build the
simulation grid, sample or load an acquisition geometry, synthesize a target
perturbation, simulate clean data once, add band-limited noise, calibrate
the smoothing regularizer, then run one or more budgeted optimizers from
the homogeneous start model. Every run writes a manifest in the same format
as the input config (plus derived values and results) so that a finished
run directory can be re-run or audited; no timestamps or machine state go
into any output.
"""

import configparser
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import fileio
from .ledger import SolveLedger
from .optim import (Budget, LinesearchPolicy, run_gncg, run_gogn, run_lbfgs,
                    run_nlcg)
from .problem import (DataSet, FwiProblem, Geometry, make_noisy_data,
                      receiver_weights)
from .regularizer import build as build_regularizer
from .wave import (ModelGrid, SimGrid, SourceSpec, cfl_substeps,
                   forward_solve)

OPTIMIZER_NAMES = ("gogn", "nlcg", "lbfgs", "gncg")


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class GeometrySpec:
    kind: str = "uniform"       # uniform | clustered | from-file
    n_sources: int = 4
    n_receivers: int = 50
    seed: int = 1
    augment_to: int = 0         # 0 disables source augmentation
    file: str = ""


@dataclass
class TargetSpec:
    kind: str = "face"          # face | disks | from-file
    cap: float = 0.05
    file: str = ""


@dataclass
class ExperimentConfig:
    nx: int = 64
    ny: int = 64
    h: float = 8000.0
    c0: float = 3150.0
    dt: float = 1.0
    nt: int = 150
    boundary_width: int = 20
    boundary_strength: float = 0.25
    frequency: float = 0.1
    amplitude: float = 1.0
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    target: TargetSpec = field(default_factory=TargetSpec)
    lam: str = "auto"           # "auto" or a float literal
    nu: str = "auto"
    sigma: float = 0.1
    noise_seed: int = 11
    optimizers: tuple = OPTIMIZER_NAMES
    budget: int = 100
    threads: int = 1
    ls_max_iters: int = 10
    ls_quad_interp_phase: int = 5
    ls_armijo_c1: float = 0.0
    ls_step_cap: float = 0.05

    def validate(self):
        if self.geometry.kind not in ("uniform", "clustered", "from-file"):
            raise ConfigError(f"unknown geometry kind {self.geometry.kind!r}")
        if self.geometry.kind == "from-file" and not self.geometry.file:
            raise ConfigError("geometry kind from-file needs a file")
        if self.geometry.n_sources < 1:
            raise ConfigError("need at least one source")
        if self.geometry.n_receivers < 1:
            raise ConfigError("need at least one receiver")
        if self.target.kind not in ("face", "disks", "from-file"):
            raise ConfigError(f"unknown target kind {self.target.kind!r}")
        if self.target.kind == "from-file" and not self.target.file:
            raise ConfigError("target kind from-file needs a file")
        if not 0.0 < self.target.cap < 1.0:
            raise ConfigError("target cap must lie in (0, 1)")
        if self.sigma < 0:
            raise ConfigError("noise level must be non-negative")
        if self.budget < 1:
            raise ConfigError("budget must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        unknown = [n for n in self.optimizers if n not in OPTIMIZER_NAMES]
        if unknown or not self.optimizers:
            raise ConfigError(f"unknown optimizers {unknown}")
        for name in ("lam", "nu"):
            raw = getattr(self, name)
            if raw != "auto":
                try:
                    if float(raw) <= 0:
                        raise ConfigError(f"{name} must be positive")
                except ValueError:
                    raise ConfigError(f"{name} must be 'auto' or a number") from None
        return self


_SCHEMA = {
    "grid": {"nx": int, "ny": int, "h": float, "c0": float, "dt": float,
             "nt": int, "boundary_width": int, "boundary_strength": float},
    "source": {"frequency": float, "amplitude": float},
    "geometry": {"kind": str, "n_sources": int, "n_receivers": int,
                 "seed": int, "augment_to": int, "file": str},
    "target": {"kind": str, "cap": float, "file": str},
    "regularizer": {"lam": str, "nu": str},
    "data": {"sigma": float, "seed": int},
    "run": {"optimizers": str, "budget": int, "threads": int},
    "linesearch": {"max_iters": int, "quad_interp_phase": int,
                   "armijo_c1": float, "step_cap": float},
}

_FIELD_OF = {
    ("grid", "nx"): "nx", ("grid", "ny"): "ny", ("grid", "h"): "h",
    ("grid", "c0"): "c0", ("grid", "dt"): "dt", ("grid", "nt"): "nt",
    ("grid", "boundary_width"): "boundary_width",
    ("grid", "boundary_strength"): "boundary_strength",
    ("source", "frequency"): "frequency", ("source", "amplitude"): "amplitude",
    ("regularizer", "lam"): "lam", ("regularizer", "nu"): "nu",
    ("data", "sigma"): "sigma", ("data", "seed"): "noise_seed",
    ("run", "budget"): "budget", ("run", "threads"): "threads",
    ("linesearch", "max_iters"): "ls_max_iters",
    ("linesearch", "quad_interp_phase"): "ls_quad_interp_phase",
    ("linesearch", "armijo_c1"): "ls_armijo_c1",
    ("linesearch", "step_cap"): "ls_step_cap",
}


def load_config(path) -> ExperimentConfig:
    """Parse a config (or manifest) file; unknown keys are errors, the
    derived/results sections written into manifests are ignored."""
    parser = configparser.RawConfigParser(inline_comment_prefixes=("#",))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    cfg = ExperimentConfig()
    geo, tgt = {}, {}
    for section in parser.sections():
        if section in ("derived", "results"):
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            conv = _SCHEMA[section][key]
            try:
                value = conv(raw)
            except ValueError:
                raise ConfigError(
                    f"{path}: bad value {raw!r} for {section}.{key}") from None
            if section == "geometry":
                geo[key] = value
            elif section == "target":
                tgt[key] = value
            elif (section, key) == ("run", "optimizers"):
                names = tuple(t.strip() for t in raw.split(",") if t.strip())
                cfg = replace(cfg, optimizers=names)
            else:
                cfg = replace(cfg, **{_FIELD_OF[(section, key)]: value})
    if geo:
        cfg = replace(cfg, geometry=replace(cfg.geometry, **geo))
    if tgt:
        cfg = replace(cfg, target=replace(cfg.target, **tgt))
    return cfg.validate()


def config_lines(cfg: ExperimentConfig) -> list:
    """Canonical config serialization (manifest front half)."""
    g, t = cfg.geometry, cfg.target
    return [
        "[grid]",
        f"nx = {cfg.nx}", f"ny = {cfg.ny}", f"h = {cfg.h!r}",
        f"c0 = {cfg.c0!r}", f"dt = {cfg.dt!r}", f"nt = {cfg.nt}",
        f"boundary_width = {cfg.boundary_width}",
        f"boundary_strength = {cfg.boundary_strength!r}",
        "",
        "[source]",
        f"frequency = {cfg.frequency!r}", f"amplitude = {cfg.amplitude!r}",
        "",
        "[geometry]",
        f"kind = {g.kind}", f"n_sources = {g.n_sources}",
        f"n_receivers = {g.n_receivers}", f"seed = {g.seed}",
        f"augment_to = {g.augment_to}", f"file = {g.file}",
        "",
        "[target]",
        f"kind = {t.kind}", f"cap = {t.cap!r}", f"file = {t.file}",
        "",
        "[regularizer]",
        f"lam = {cfg.lam}", f"nu = {cfg.nu}",
        "",
        "[data]",
        f"sigma = {cfg.sigma!r}", f"seed = {cfg.noise_seed}",
        "",
        "[run]",
        f"optimizers = {','.join(cfg.optimizers)}",
        f"budget = {cfg.budget}", f"threads = {cfg.threads}",
        "",
        "[linesearch]",
        f"max_iters = {cfg.ls_max_iters}",
        f"quad_interp_phase = {cfg.ls_quad_interp_phase}",
        f"armijo_c1 = {cfg.ls_armijo_c1!r}",
        f"step_cap = {cfg.ls_step_cap!r}",
    ]


def _parse_layout(text, origin):
    sources, receivers = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"{origin}:{lineno}: expected 'kind x y'")
        kind, xs, ys = parts
        try:
            x, y = float(xs), float(ys)
        except ValueError:
            raise ConfigError(f"{origin}:{lineno}: bad coordinates") from None
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ConfigError(f"{origin}:{lineno}: coordinates must be in [0, 1]")
        if kind == "source":
            sources.append((x, y))
        elif kind == "receiver":
            receivers.append((x, y))
        else:
            raise ConfigError(f"{origin}:{lineno}: unknown kind {kind!r}")
    return np.array(sources), np.array(receivers)


def _bundled_layout():
    text = resources.files("gowave").joinpath("data/clustered_layout.txt").read_text()
    return _parse_layout(text, "clustered_layout.txt")


def gen_geometry(spec: GeometrySpec, seed: int, extent: tuple,
                 frequency: float, amplitude: float = 1.0) -> Geometry:
    """Sample or load an acquisition geometry.

    uniform: sources then receivers i.i.d. over the inner square spanning
    [0.2, 0.8] of each domain side. clustered / from-file: take the first
    n_sources and n_receivers positions from the (bundled) layout file.
    If augment_to exceeds n_sources, extra sources are spawned by Gaussian
    jitter (std 5% of domain width) of the existing ones, cycling through
    them; jittered positions falling outside the domain are re-drawn.
    """
    rng = np.random.default_rng(seed)
    lx, ly = extent
    if spec.kind == "uniform":
        src = np.column_stack([rng.uniform(0.2 * lx, 0.8 * lx, spec.n_sources),
                               rng.uniform(0.2 * ly, 0.8 * ly, spec.n_sources)])
        rec = np.column_stack([rng.uniform(0.2 * lx, 0.8 * lx, spec.n_receivers),
                               rng.uniform(0.2 * ly, 0.8 * ly, spec.n_receivers)])
    else:
        if spec.kind == "clustered":
            src_n, rec_n = _bundled_layout()
        else:
            src_n, rec_n = _parse_layout(Path(spec.file).read_text(), spec.file)
        if len(src_n) < spec.n_sources:
            raise ConfigError(f"layout has {len(src_n)} sources, "
                              f"{spec.n_sources} requested")
        if len(rec_n) < spec.n_receivers:
            raise ConfigError(f"layout has {len(rec_n)} receivers, "
                              f"{spec.n_receivers} requested")
        src = src_n[:spec.n_sources] * np.array([lx, ly])
        rec = rec_n[:spec.n_receivers] * np.array([lx, ly])
    if spec.augment_to > len(src):
        std = 0.05 * lx
        extra = []
        for i in range(spec.augment_to - len(src)):
            parent = src[i % len(src)]
            for attempt in range(100):
                cand = parent + rng.normal(0.0, std, 2)
                if 0.0 <= cand[0] <= lx and 0.0 <= cand[1] <= ly:
                    extra.append(cand)
                    break
            else:
                raise RuntimeError("could not place a jittered source inside "
                                   "the domain after 100 attempts")
        src = np.vstack([src, extra])
    sources = [SourceSpec(position=(float(p[0]), float(p[1])),
                          frequency=frequency, amplitude=amplitude)
               for p in src]
    return Geometry(sources=sources, receivers=rec)


@dataclass
class TargetModel:
    """True perturbation with a hard amplitude cap."""

    model: ModelGrid
    cap: float

    def __post_init__(self):
        if not 0.0 < self.cap < 1.0:
            raise ValueError("cap must lie in (0, 1)")
        v = self.model.values
        if v.min() < -self.cap * (1 + 1e-12) or v.max() > 0.0:
            raise ValueError("target values must lie in [-cap, 0]")


def _soft_mask(excess, taper=2.0):
    """1 inside a feature, Gaussian falloff outside, hard 0 far away."""
    s = np.exp(-np.maximum(0.0, excess) ** 2 / (2.0 * taper ** 2))
    s[s < 1e-12] = 0.0
    return s


def gen_target(spec: TargetSpec, nx: int, ny: int) -> TargetModel:
    """Synthesize the true perturbation: low-velocity features of amplitude
    -cap on a zero background with a 2-cell Gaussian edge taper."""
    if spec.kind == "from-file":
        model = fileio.read_model(spec.file)
        if (model.nx, model.ny) != (nx, ny):
            raise ConfigError(f"target file is {model.nx}x{model.ny}, "
                              f"grid is {nx}x{ny}")
        return TargetModel(model=model, cap=spec.cap)
    if min(nx, ny) < 16:
        raise ConfigError("synthetic targets need a grid of at least 16x16")
    x = np.arange(nx, dtype=np.float64)[:, None]
    y = np.arange(ny, dtype=np.float64)[None, :]
    cx = (nx - 1) / 2.0
    # |x - cx| makes every feature bitwise mirror-symmetric in x
    ax = np.abs(x - cx)
    scale = min(nx - 1, ny - 1)
    if spec.kind == "face":
        eye_dx, eye_y, eye_r = 0.16 * scale, 0.32 * (ny - 1), 0.07 * scale
        eyes = _soft_mask(np.hypot(ax - eye_dx, y - eye_y) - eye_r)
        my, mr, mw = 0.45 * (ny - 1), 0.28 * scale, 0.045 * scale
        ring = np.abs(np.hypot(ax, y - my) - mr) - mw
        mouth = _soft_mask(ring) * _soft_mask(0.62 * (ny - 1) - y)
        shape = np.maximum(eyes, mouth)
    else:  # disks
        centers = ((0.30, 0.30, 0.09), (0.68, 0.42, 0.11), (0.45, 0.74, 0.07))
        disks = [_soft_mask(np.hypot(x - fx * (nx - 1), y - fy * (ny - 1))
                            - fr * scale)
                 for fx, fy, fr in centers]
        shape = np.maximum.reduce(disks)
    values = -spec.cap * shape
    values += 0.0  # normalize -0.0 so untouched background is exactly +0.0
    return TargetModel(model=ModelGrid(values.ravel(), nx, ny), cap=spec.cap)


@dataclass
class Experiment:
    """Everything shared by the optimizer runs of one comparison."""

    cfg: ExperimentConfig
    grid: SimGrid
    geom: Geometry
    target: TargetModel
    data: DataSet
    h0_diag: np.ndarray
    lam: float
    nu: float
    setup_solves: int

    def regularizer(self):
        p = self.grid.nx * self.grid.ny
        return build_regularizer(self.grid.nx, self.grid.ny, self.grid.h,
                                 self.lam, self.nu, np.zeros(p))

    def problem(self) -> FwiProblem:
        """Fresh problem instance with its own ledger."""
        return FwiProblem(self.grid, self.geom, self.data,
                          ledger=SolveLedger(), m_true=self.target.model)


def prepare_experiment(cfg: ExperimentConfig) -> Experiment:
    """Build grid, geometry, target, and data; calibrate the regularizer.

    Shared setup work (clean-data simulation and the diagonal curvature
    probe) runs on its own ledger and is not charged to any optimizer's
    budget; its cost is reported in the manifest.
    """
    cfg.validate()
    try:
        grid = SimGrid(cfg.nx, cfg.ny, cfg.h, cfg.c0, cfg.dt, cfg.nt,
                       cfg.boundary_width, cfg.boundary_strength)
        geom = gen_geometry(cfg.geometry, cfg.geometry.seed, grid.extent,
                            cfg.frequency, cfg.amplitude)
        target = gen_target(cfg.target, cfg.nx, cfg.ny)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    setup_ledger = SolveLedger()
    clean = [forward_solve(target.model, src, geom.receivers, grid,
                           setup_ledger)[0]
             for src in geom.sources]
    weights = receiver_weights(geom, clean)
    data = make_noisy_data(clean, cfg.sigma, cfg.noise_seed, weights)

    setup_problem = FwiProblem(grid, geom, data, ledger=setup_ledger)
    m0 = ModelGrid(np.zeros(cfg.nx * cfg.ny), cfg.nx, cfg.ny)
    h0_diag = setup_problem.diag_gn_estimate(m0)

    nu = 1.0 / (5.0 * cfg.h) ** 2 if cfg.nu == "auto" else float(cfg.nu)
    if cfg.lam == "auto":
        # 0.3 balances smoothing against the peak misfit curvature so that
        # desk-scale budgets run out mid-descent, not at an over-smoothed
        # stationary point.
        lam = 0.3 * np.sqrt(np.max(h0_diag)) / (nu + 8.0 / cfg.h**2)
    else:
        lam = float(cfg.lam)
    return Experiment(cfg=cfg, grid=grid, geom=geom, target=target, data=data,
                      h0_diag=h0_diag, lam=lam, nu=nu,
                      setup_solves=setup_ledger.total)


def _policy(cfg: ExperimentConfig, optimizer: str) -> LinesearchPolicy:
    rule = "unit" if optimizer == "gncg" else "cap"
    return LinesearchPolicy(max_iters=cfg.ls_max_iters,
                            quad_interp_phase=cfg.ls_quad_interp_phase,
                            armijo_c1=cfg.ls_armijo_c1,
                            initial_step_rule=rule, step_cap=cfg.ls_step_cap)


def run_one(exp: Experiment, name: str):
    """Run a single optimizer on a fresh problem; returns (result, ledger)."""
    if name not in OPTIMIZER_NAMES:
        raise ConfigError(f"unknown optimizer {name!r}")
    problem = exp.problem()
    reg = exp.regularizer()
    budget = Budget(problem.ledger, exp.cfg.budget)
    policy = _policy(exp.cfg, name)
    if name == "gogn":
        result = run_gogn(problem, reg, budget, policy=policy)
        _check_gradient_only_accounting(result, problem.n_sources)
    elif name == "nlcg":
        result = run_nlcg(problem, reg, exp.h0_diag, budget, policy=policy)
    elif name == "lbfgs":
        result = run_lbfgs(problem, reg, exp.h0_diag, budget, policy=policy)
    else:
        result = run_gncg(problem, reg, exp.h0_diag, budget, policy=policy)
    return result, problem.ledger


def _check_gradient_only_accounting(result, n: int):
    """The gradient-only method must spend exactly 2N solves per gradient
    and nothing on step construction; checked on every harness run."""
    recs = result.records
    if recs and recs[0].solves != 2 * n:
        raise RuntimeError("gradient-only accounting violated at startup: "
                           f"{recs[0].solves} != {2 * n}")
    for a, b in zip(recs, recs[1:]):
        expected = 2 * n + b.ls_evals * n
        if b.solves - a.solves != expected:
            raise RuntimeError(
                f"gradient-only accounting violated at iteration {b.iter}: "
                f"{b.solves - a.solves} != {expected}")


def _geometry_lines(geom: Geometry, extent: tuple) -> list:
    lx, ly = extent
    lines = ["# acquisition geometry (normalized coordinates)",
             "# columns: kind x y"]
    for src in geom.sources:
        lines.append(f"source {src.position[0] / lx:.9f} "
                     f"{src.position[1] / ly:.9f}")
    for pos in np.asarray(geom.receivers):
        lines.append(f"receiver {pos[0] / lx:.9f} {pos[1] / ly:.9f}")
    return lines


def _derived_lines(exp: Experiment) -> list:
    return [
        "[derived]",
        f"extent_x = {exp.grid.extent[0]!r}",
        f"extent_y = {exp.grid.extent[1]!r}",
        f"substeps = {cfl_substeps(exp.target.model, exp.grid)}",
        f"lam = {exp.lam!r}",
        f"nu = {exp.nu!r}",
        f"h0_inf_norm = {float(np.max(exp.h0_diag))!r}",
        f"m_true_norm = {float(np.linalg.norm(exp.target.model.values))!r}",
        f"setup_solves = {exp.setup_solves}",
    ]


def write_data_dir(cfg: ExperimentConfig, out_dir) -> Experiment:
    """Persist target, geometry, and observed data for external use."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = prepare_experiment(cfg)
    fileio.write_model(out / "target.modl", exp.target.model)
    fileio.write_pgm(out / "target.pgm", exp.target.model.as_2d(),
                     exp.target.cap)
    (out / "geometry.txt").write_text(
        "\n".join(_geometry_lines(exp.geom, exp.grid.extent)) + "\n")
    for i, traces in enumerate(exp.data.observed):
        fileio.write_traces(out / f"obs_src{i:03d}.seis", traces)
    lines = config_lines(cfg) + [""] + _derived_lines(exp)
    (out / "manifest.cfg").write_text("\n".join(lines) + "\n")
    return exp


def run_comparison(cfg: ExperimentConfig, out_dir):
    """Generate data once, run every configured optimizer on it, and write
    traces, reconstructions, renders, and a re-runnable manifest.

    A failing optimizer is recorded in the manifest and does not stop the
    others. Returns {optimizer: RunResult | None}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = prepare_experiment(cfg)

    def attempt(name):
        try:
            return run_one(exp, name), None
        except (RuntimeError, ValueError, FloatingPointError,
                np.linalg.LinAlgError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    names = list(cfg.optimizers)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(attempt, names))
    else:
        outcomes = [attempt(n) for n in names]

    results = {}
    result_lines = ["[results]"]
    for name, (outcome, error) in zip(names, outcomes):
        if outcome is None:
            results[name] = None
            result_lines.append(f"{name}_status = failed ({error})")
            continue
        result, ledger = outcome
        results[name] = result
        fileio.write_trace_csv(out / f"{name}_trace.csv", result.records)
        final = ModelGrid(result.m_final, cfg.nx, cfg.ny)
        fileio.write_model(out / f"{name}_final.modl", final)
        fileio.write_pgm(out / f"{name}_final.pgm", final.as_2d(),
                         exp.target.cap)
        last = result.records[-1]
        result_lines += [
            f"{name}_status = {result.status}",
            f"{name}_solves = {ledger.total}",
            f"{name}_iterations = {last.iter}",
            f"{name}_objective = {last.objective!r}",
            f"{name}_model_error = {last.model_error!r}",
        ]

    fileio.write_model(out / "target.modl", exp.target.model)
    fileio.write_pgm(out / "target.pgm", exp.target.model.as_2d(),
                     exp.target.cap)
    (out / "geometry.txt").write_text(
        "\n".join(_geometry_lines(exp.geom, exp.grid.extent)) + "\n")
    lines = (config_lines(cfg) + [""] + _derived_lines(exp) + [""]
             + result_lines)
    (out / "manifest.cfg").write_text("\n".join(lines) + "\n")
    return results


def render_file(grid_path, out_path, vrange: float) -> None:
    """Render a stored model grid to PGM."""
    model = fileio.read_model(grid_path)
    fileio.write_pgm(out_path, model.as_2d(), vrange)
