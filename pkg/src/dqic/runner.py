"""Run configuration, single anneals, sweeps and their on-disk records."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import boundaries, build_column, extract_rdm, measurement_steps, run_trajectory
from .errors import ConfigError, ConvergenceError, DqicError
from .influence import (build_uniform_influence, cache_key, load_influence, save_influence,
                        trivial_uniform_influence)
from .model import AnnealingSchedule, BathSpec, build_time_grid
from .theory import excess_energy, find_T_star, fit_power_law

log = logging.getLogger("dqic")

SWEEP_AXES = ("t_a", "eta", "alpha")
ORACLES = ("dephasing", "ed", "tfic", "classical", "path_sum")


@dataclass
class RunConfig:
    alpha: float = 1.0
    eta: float = 0.18
    omega_c: float = 5.0
    T_B: float = 1.0
    t_a: float = 200.0
    dt: float = 0.05
    tau_c: float = 10.0
    chi_t: int = 64
    chi_s: int = 64
    svd_tol: float = 1e-12
    conv_tol: float = 1e-8
    measure_points: int = 100
    outputs: str = "runs"
    mode: str = "anneal"
    schedule_sampling: str = "midpoint"
    rdm_sites: int = 8
    kl_T_min: float = 0.5
    kl_T_max: float = 20.0
    C: float = 1.0
    influence_cache: str = ""
    sweep_axis: str = "t_a"
    sweep_values: tuple = ()
    fit_t_min: float = 100.0
    fit_t_max: float = math.inf
    oracle: str = "dephasing"
    oracle_t: tuple = ()
    ed_sites: int = 12

    def validate(self) -> "RunConfig":
        pos = ["alpha", "omega_c", "t_a", "dt", "tau_c", "conv_tol", "kl_T_min", "kl_T_max", "C"]
        for k in pos:
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        for k in ("eta", "T_B", "svd_tol"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")
        for k in ("chi_t", "chi_s", "measure_points", "ed_sites"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if not 1 <= self.rdm_sites <= 8:
            raise ConfigError("rdm_sites must be in 1..8")
        if self.mode not in ("anneal", "sweep", "oracle", "theory", "fit"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.schedule_sampling not in ("midpoint", "endpoint"):
            raise ConfigError("schedule_sampling must be midpoint or endpoint")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}")
        if self.oracle not in ORACLES:
            raise ConfigError(f"oracle must be one of {ORACLES}")
        if self.kl_T_min >= self.kl_T_max:
            raise ConfigError("kl_T_min must be below kl_T_max")
        build_time_grid(self.t_a, self.dt, self.tau_c)  # commensurability
        return self

    def snapshot(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in out:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        out[k] = _coerce(k, v)
    return out


def load_config(path=None, overrides=(), **extra) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        values.update(parse_config_text(text))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        values[k.strip()] = _coerce(k.strip(), v)
    values.update(extra)
    return RunConfig(**values).validate()


def estimate_memory_bytes(cfg: RunConfig) -> int:
    d = 4 * cfg.chi_t
    state = 2 * cfg.chi_s ** 2 * d
    qr = cfg.chi_s * d * 4 * cfg.chi_s * 2
    rdm = 4 ** cfg.rdm_sites * cfg.chi_s * 2
    influence = cfg.chi_t ** 2 * 5 * 3
    return 16 * (state + qr + rdm + influence)


# ----------------------------------------------------------------- records

@dataclass
class RunRecord:
    config: dict
    trajectory: list = field(default_factory=list)  # (s, energy, sx, zz)
    diagnostics: list = field(default_factory=list)  # per point: step, norm, gap, residual, bond
    eps_pos: float | None = None
    hermiticity_error: float | None = None
    clipped_mass: float | None = None
    E_exc: float | None = None
    T_star: float | None = None
    T_star_boundary: bool | None = None
    s_star_empirical: float | None = None
    kl_curve: list = field(default_factory=list)
    influence_bond: int | None = None
    influence_loss: float | None = None
    max_chi_s: int | None = None
    discarded_weight: float | None = None
    iterations: int | None = None
    wall_time: float = 0.0
    version: str = __version__
    status: str = "ok"
    failed_stage: str | None = None
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    raise TypeError(type(x).__name__)


def _influence(cfg: RunConfig, bath: BathSpec):
    if cfg.eta == 0:
        return trivial_uniform_influence()
    key = cache_key(bath, cfg.dt, cfg.tau_c, cfg.chi_t, cfg.svd_tol)
    if cfg.influence_cache:
        path = Path(cfg.influence_cache) / f"uniform_{key}.bin"
        if path.exists():
            return load_influence(path, key)
    infl = build_uniform_influence(cfg.dt, cfg.tau_c, bath, cfg.chi_t, cfg.svd_tol)
    if cfg.influence_cache:
        Path(cfg.influence_cache).mkdir(parents=True, exist_ok=True)
        save_influence(path, infl, key)
    return infl


def run_anneal(cfg: RunConfig, out_dir: str | os.PathLike | None = None) -> RunRecord:
    """Kernel -> influence tensor -> column evolution -> observables -> record.

    A failing stage is recorded with its name and the partial trajectory is
    kept; the exception propagates after the record is written.
    """
    t0 = time.perf_counter()
    rec = RunRecord(config=dataclasses.asdict(cfg))
    stage = "config"
    error = None
    try:
        cfg.validate()
        grid = build_time_grid(cfg.t_a, cfg.dt, cfg.tau_c)
        sched = AnnealingSchedule(cfg.alpha)
        bath = BathSpec(cfg.eta, cfg.omega_c, cfg.T_B)
        stage = "influence"
        infl = _influence(cfg, bath)
        rec.influence_bond = infl.bond
        rec.influence_loss = infl.truncation_loss
        stage = "evolution"
        col = build_column(infl, grid, sched, sampling=cfg.schedule_sampling)
        steps = measurement_steps(grid.M, cfg.measure_points)

        def keep(meas, state):
            rec.trajectory.append((meas.s, meas.energy, meas.sx, meas.zz))
            rec.diagnostics.append((meas.step, meas.norm, meas.gap_ratio, meas.residual, meas.bond_dim))
            if len(rec.trajectory) % max(1, cfg.measure_points // 10) == 0:
                log.info("s=%.3f E=%.6f chi_s=%d", meas.s, meas.energy, meas.bond_dim)

        _, state, _ = run_trajectory(col, cfg.chi_s, steps, cfg.svd_tol, cfg.conv_tol, keep)
        rec.max_chi_s = state.max_chi
        rec.discarded_weight = state.discarded
        rec.iterations = state.step
        stage = "rdm"
        bnd = boundaries(state, col.closure(state.step), cfg.conv_tol)
        rho = extract_rdm(state, bnd, cfg.rdm_sites)
        rec.eps_pos = rho.eps_pos
        rec.hermiticity_error = rho.hermiticity_error
        stage = "analysis"
        if cfg.T_B > 0:
            rec.E_exc = excess_energy(rec.trajectory[-1][1], cfg.T_B)
        curve = find_T_star(rho, (cfg.kl_T_min, cfg.kl_T_max))
        rec.kl_curve = curve.samples
        rec.clipped_mass = curve.clipped_mass
        rec.T_star = curve.T_star
        rec.T_star_boundary = curve.boundary
        if cfg.T_B > 0:
            rec.s_star_empirical = cfg.T_B / curve.T_star
    except Exception as e:  # noqa: BLE001 - recorded, then re-raised
        error = e
        rec.status = "failed"
        rec.failed_stage = stage
        rec.error = f"{type(e).__name__}: {e}"
        log.debug("stage %s failed\n%s", stage, traceback.format_exc())
    rec.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        write_run(rec, cfg, out_dir)
    if error is not None:
        raise error
    return rec


def write_run(rec: RunRecord, cfg: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.snapshot(), encoding="utf-8")
    (out / "record.json").write_text(rec.to_json(), encoding="utf-8")
    write_csv(out / "trajectory.csv", ["s", "energy", "sx", "zz"], rec.trajectory)
    if rec.kl_curve:
        write_csv(out / "kl_curve.csv", ["T", "D_KL"], rec.kl_curve)


def write_csv(path, header, rows, footer=()):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
            for line in footer:
                fh.write(line + "\n")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e


def _fmt(x):
    if x is None:
        return "nan"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def read_csv(path):
    """Rows as dicts of floats, plus the comment lines found after the data."""
    rows, comments = [], []
    with open(path, encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line)
                continue
            if not line:
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
                continue
            rows.append({k: float(v) for k, v in zip(header, cells)})
    return rows, comments


# ------------------------------------------------------------------ sweeps

@dataclass
class SweepResult:
    records: list
    rows: list
    fit: object | None
    failures: list

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _sweep_worker(args):
    cfg, out_dir = args
    logging.getLogger("dqic").setLevel(logging.WARNING)
    try:
        return run_anneal(cfg, out_dir), None
    except Exception as e:  # noqa: BLE001 - a failed run must not abort the sweep
        return None, f"{type(e).__name__}: {e}"


def _axis_name(value: float) -> str:
    return repr(float(value)).replace(".", "p")


def run_sweep(cfg_base: RunConfig, axis: str | None = None, values=None, out_dir=None,
              jobs: int = 1) -> SweepResult:
    axis = cfg_base.sweep_axis if axis is None else axis
    values = cfg_base.sweep_values if values is None else values
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    cfgs = [dataclasses.replace(cfg_base, **{axis: float(v)}).validate() for v in values]
    dirs = [None if out_dir is None else Path(out_dir) / f"{axis}_{_axis_name(v)}" for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_worker, zip(cfgs, dirs)))
    else:
        results = [_sweep_worker(a) for a in zip(cfgs, dirs)]
    records, failures = [], []
    for v, (rec, err) in zip(values, results):
        records.append(rec)
        if rec is None or rec.status != "ok":
            failures.append((v, err or (rec.error if rec else "unknown")))
    fit = None
    if axis == "t_a":
        pts = [(float(v), r.E_exc) for v, r in zip(values, records) if r is not None and r.E_exc is not None]
        try:
            fit = fit_power_law(pts, (cfg_base.fit_t_min, cfg_base.fit_t_max))
        except DqicError as e:
            log.warning("power-law fit skipped: %s", e)
    rows = []
    for v, r in zip(values, records):
        rows.append((float(v), r.E_exc if r else None, r.T_star if r else None,
                     fit.b if fit else None, fit.stderr_b if fit else None))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_csv(Path(out_dir) / "sweep.csv", ["axis", "E_exc", "T_star", "b_fit", "stderr_b"], rows,
                  sweep_footer(axis, fit, failures))
    return SweepResult(records, rows, fit, failures)


def format_fit(fit) -> str:
    return (f"# fit: a={fit.a!r} b={fit.b!r} stderr_b={fit.stderr_b!r} "
            f"t_min={float(fit.window[0])!r} t_max={float(fit.window[1])!r} n_points={fit.n_points}")


def parse_fit_footer(line: str) -> dict:
    body = line.split(":", 1)[1].split()
    out = {}
    for item in body:
        k, v = item.split("=", 1)
        out[k] = int(v) if k == "n_points" else float(v)
    return out


def sweep_footer(axis, fit, failures) -> list:
    lines = [f"# failed: {axis}={v!r} {err}" for v, err in failures]
    if fit is not None:
        lines.append(format_fit(fit))
    else:
        lines.append("# fit: none")
    return lines


def environment_tag() -> str:
    return f"dqic {__version__} python {platform.python_version()} numpy {np.__version__}"
