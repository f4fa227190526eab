"""
Monte-Carlo BER harness with paired trials and operation counting.

Every trial draws one instance from a stream keyed by (seed, snr index,
trial index); all detectors see that same instance, and any detector
randomness comes from its own stream keyed additionally by the detector
name. Results therefore do not depend on how trials are split across
workers.
"""
from __future__ import annotations

import configparser
import csv
import enum
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import box_relax_detect, exhaustive_ml, zf_detect
from .errors import ConfigError
from .model import ChannelKind, ChannelSpec, DetectionInstance, Mode, sign, synthesize_instance
from .numerics import OpCounter
from .objective import build_context, lipschitz_bound
from .solver import Schedule, SolverConfig, gemm_solve, homotopy_solve
from .unfolded import NetworkParams, TrainConfig, forward

log = logging.getLogger(__name__)

CSV_HEADER = ["detector", "M", "N", "snr_db", "errors", "bits", "ber", "flops", "phi_calls", "time_s"]


class DetectorKind(str, enum.Enum):
    ZF = "zf"
    BOX = "box"
    ML = "ml"
    HOTML = "hotml"
    DEEP = "deephotml"
    FIXED = "fixed"   # single GEMM run at lambda = L_f bound from a random start


@dataclass(frozen=True)
class Detector:
    kind: DetectorKind
    params: NetworkParams | None = field(default=None, compare=False)
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.kind.value

    @property
    def stream_id(self) -> int:
        return zlib.crc32(self.name.encode()) & 0x7FFFFFFF


@dataclass
class ExperimentConfig:
    channel: ChannelSpec
    mode: Mode
    snr_grid_db: list[float]
    trials: int
    detectors: list[Detector]
    solver_cfg: SolverConfig
    seed: int = 0
    out: str | None = None
    workers: int = 1

    def validate(self) -> None:
        self.channel.validate()
        self.solver_cfg.validate()
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ConfigError("snr grid must be non-empty")
        if not self.detectors:
            raise ConfigError("no detectors selected")
        for d in self.detectors:
            if d.kind == DetectorKind.DEEP:
                if d.params is None:
                    raise ConfigError("deephotml detector needs a parameter file")
                if d.params.mode != self.mode or (d.params.M, d.params.N) != (self.channel.M, self.channel.N):
                    raise ConfigError(f"network is {d.params.mode.value} ({d.params.M}, {d.params.N}), experiment "
                                      f"is {self.mode.value} ({self.channel.M}, {self.channel.N})")
            if d.kind == DetectorKind.ML and self.channel.N > 24:
                raise ConfigError("exhaustive ML limited to N <= 24 real dimensions")


@dataclass
class BenchmarkRow:
    detector: str
    M: int
    N: int
    snr_db: float
    errors: int
    bits: int
    ber: float
    flops: float
    phi_calls: float
    time_s: float


def trial_rng(seed: int, snr_index: int, trial: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(snr_index, trial, stream)))


def detect(det: Detector, inst: DetectionInstance, cfg: SolverConfig, rng: np.random.Generator,
           counter: OpCounter, cache: dict) -> np.ndarray:
    """Run one detector on one instance; contexts are shared through ``cache``."""
    def ctx(sigma0):
        key = ("ctx", sigma0)
        if key not in cache:
            cache[key] = build_context(inst, sigma0)
        return cache[key]

    kind = det.kind
    if kind == DetectorKind.ZF:
        return zf_detect(inst, counter)
    if kind == DetectorKind.ML:
        return exhaustive_ml(ctx(0.0), counter)[0]
    if kind == DetectorKind.BOX:
        return box_relax_detect(ctx(cfg.sigma0), cfg, counter)
    if kind == DetectorKind.HOTML:
        return homotopy_solve(ctx(cfg.sigma0), cfg, rng=rng, counter=counter).x_hat
    if kind == DetectorKind.FIXED:
        c = ctx(cfg.sigma0)
        x0 = rng.uniform(-1.0, 1.0, size=c.N)
        return sign(gemm_solve(c, lipschitz_bound(c), x0, cfg, counter).x)
    if kind == DetectorKind.DEEP:
        x, _ = forward(det.params, inst, ctx(cfg.sigma0), counter)
        return sign(x)
    raise ValueError(f"unknown detector {kind}")


def _run_block(cfg: ExperimentConfig, snr_index: int, start: int, stop: int) -> np.ndarray:
    """Per-detector sums over trials [start, stop): errors, flops, phi calls, seconds."""
    snr = cfg.snr_grid_db[snr_index]
    acc = np.zeros((len(cfg.detectors), 4))
    for i in range(start, stop):
        inst = synthesize_instance(cfg.channel, snr, cfg.mode, trial_rng(cfg.seed, snr_index, i))
        cache: dict = {}
        for d, det in enumerate(cfg.detectors):
            counter = OpCounter()
            rng = trial_rng(cfg.seed, snr_index, i, 1 + det.stream_id)
            t0 = time.perf_counter()
            try:
                x_hat = detect(det, inst, cfg.solver_cfg, rng, counter, cache)
                errors = int(np.count_nonzero(x_hat != inst.x_true))
            except Exception as exc:  # noqa: BLE001 - a failed trial counts as all bits wrong
                log.warning("%s failed on snr %s trial %d: %s", det.name, snr, i, exc)
                errors = inst.N
            acc[d] += (errors, counter.flops, counter.phi_calls, time.perf_counter() - t0)
    return acc


def _blocks(trials: int, workers: int) -> list[tuple[int, int]]:
    n = max(1, min(trials, 4 * workers))
    edges = np.linspace(0, trials, n + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_experiment(cfg: ExperimentConfig) -> list[BenchmarkRow]:
    cfg.validate()
    jobs = [(s, a, b) for s in range(len(cfg.snr_grid_db)) for a, b in _blocks(cfg.trials, cfg.workers)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_block, [cfg] * len(jobs), *zip(*jobs)))
    else:
        parts = [_run_block(cfg, *job) for job in jobs]
    totals = np.zeros((len(cfg.snr_grid_db), len(cfg.detectors), 4))
    for (s, _, _), part in zip(jobs, parts):
        totals[s] += part
    rows = []
    bits = cfg.trials * cfg.channel.N
    for s, snr in enumerate(cfg.snr_grid_db):
        for d, det in enumerate(cfg.detectors):
            errors, flops, phis, secs = totals[s, d]
            rows.append(BenchmarkRow(det.name, cfg.channel.M, cfg.channel.N, float(snr), int(errors), bits,
                                     errors / bits, flops / cfg.trials, phis / cfg.trials, secs / cfg.trials))
    return rows


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_csv(rows: list[BenchmarkRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.detector] + [_fmt(getattr(r, k)) for k in CSV_HEADER[1:]])


def emit_csv(rows: list[BenchmarkRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        write_csv(rows, fh)


def read_csv(path: str | Path) -> list[BenchmarkRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [BenchmarkRow(r["detector"], int(r["M"]), int(r["N"]), float(r["snr_db"]), int(r["errors"]),
                             int(r["bits"]), float(r["ber"]), float(r["flops"]), float(r["phi_calls"]),
                             float(r["time_s"])) for r in reader]


# ---------------------------------------------------------------- config files

def _floats(text: str) -> list[float]:
    """Comma list of numbers; ``a:b:step`` expands to an inclusive range."""
    out: list[float] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ":" in part:
            a, b, step = (float(p) for p in part.split(":"))
            out.extend(np.round(np.arange(a, b + step / 2, step), 10).tolist())
        else:
            out.append(float(part))
    return out


def _typed(cls, section: configparser.SectionProxy, base):
    """Apply a config section onto dataclass ``base``, converting by declared field type."""
    types = {f.name: str(f.type) for f in fields(cls)}
    updates = {}
    for key, raw in section.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        t = types[key]
        try:
            if t.startswith("bool"):
                updates[key] = section.getboolean(key)
            elif t == "int":
                updates[key] = int(raw)
            elif t == "Schedule":
                updates[key] = Schedule(raw.strip())
            else:
                updates[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return replace(base, **updates)


@dataclass
class RunConfig:
    """Everything a CLI run needs, parsed from one config file."""

    experiment: ExperimentConfig
    detector_names: list[str]
    layers: int = 20
    train: TrainConfig = TrainConfig()
    params_path: str | None = None
    plot: bool = False
    duality: dict = field(default_factory=lambda: {"resolution": 81, "lambda_points": 200, "lambda_max_factor": 2.0,
                                                   "tolerance": 1e-2, "sigma0": 0.0})


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    first = next((ln.strip() for ln in text.splitlines() if ln.strip() and ln.strip()[0] not in "#;"), "")
    body = text if first.startswith("[") else "[experiment]\n" + text
    try:
        cp.read_string(body)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"experiment", "solver", "train", "duality"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"unknown section [{s}]")
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    allowed = {"mode", "channel", "r", "m_c", "n_c", "snr_db", "trials", "detectors", "seed", "workers", "out",
               "layers", "params", "plot"}
    for k in ex:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in [experiment]")
    try:
        mode = Mode(ex.get("mode", "onebit").strip())
        kind = ChannelKind(ex.get("channel", "rayleigh").strip())
        spec = ChannelSpec(int(ex["m_c"]), int(ex["n_c"]), kind, complex(ex.get("r", "0").replace(" ", "")),
                           int(ex.get("seed", "0")))
        snr = _floats(ex.get("snr_db", "10"))
        names = [n.strip().lower() for n in ex.get("detectors", "hotml").split(",") if n.strip()]
        dets = [Detector(DetectorKind(n)) for n in names]
        trials = int(ex.get("trials", "1000"))
        workers = int(ex.get("workers", "1"))
        layers = int(ex.get("layers", "20"))
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if spec.r.imag == 0:
        spec = replace(spec, r=spec.r.real)
    solver = SolverConfig.for_mode(mode)
    if cp.has_section("solver"):
        solver = _typed(SolverConfig, cp["solver"], solver)
    train_cfg = TrainConfig()
    if cp.has_section("train"):
        train_cfg = _typed(TrainConfig, cp["train"], train_cfg)
    exp = ExperimentConfig(spec, mode, snr, trials, dets, solver, spec.seed, ex.get("out"), workers)
    try:
        plot = cp.getboolean("experiment", "plot", fallback=False) if cp.has_section("experiment") else False
    except ValueError as exc:
        raise ConfigError(f"bad value for plot: {exc}") from exc
    run = RunConfig(exp, names, layers, train_cfg, ex.get("params"), plot)
    if cp.has_section("duality"):
        for k, v in cp["duality"].items():
            if k not in run.duality:
                raise ConfigError(f"unknown key {k!r} in [duality]")
            try:
                run.duality[k] = type(run.duality[k])(v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
    return run


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text())
