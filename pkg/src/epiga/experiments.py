"""Configuration-driven experiment runners with CSV and JSON records.

A config is a JSON object::

    {"problem": "bumpy", "seeds": [1, 2],
     "ga": {"n_individuals": 128, "r_mut": 0.1},
     "deepigen": {"d_k": 32, "n_heads": 1},
     "bias": {"target": [0.031, 1.441], "steps": 200},
     "constraint": false, "rho": 0.1, "output_dir": "runs"}

Every key except ``problem`` and ``seeds`` is optional.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TextIO

import numpy as np

from .benchmarks import PROBLEMS, BenchmarkProblem, Peak, make_constrained_stalagmite
from .deepigen import DeepiGenConfig, init_model
from .ga import GaConfig, GenerationRecord, Population, biased_init, init_population, run_epigeal
from .rng import Streams, substream

log = logging.getLogger(__name__)

CSV_HEADER = ["generation", "best_fitness", "best_x", "best_y", "mean_fitness", "diffusion_flag"]
HEAD_CSV_HEADER = ["generation", "head", "x", "y", "fitness"]
BUMPY_LOCAL_PEAK = (0.031, 1.441)
DEFAULT_BIAS_STEPS = 200
PEAK_RADIUS = 0.25
THRESHOLDS = {"bumpy": 0.67, "stalagmite": 0.995, "constrained_stalagmite": 0.80}


class ConfigError(ValueError):
    """Bad experiment configuration; the message starts with the key path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# --------------------------------------------------------------------------
# config


@dataclass
class BiasConfig:
    target: tuple[float, float] = BUMPY_LOCAL_PEAK
    steps: int = DEFAULT_BIAS_STEPS


@dataclass
class ExperimentConfig:
    problem: str
    seeds: list[int]
    ga: GaConfig = field(default_factory=GaConfig)
    deepigen: DeepiGenConfig = field(default_factory=DeepiGenConfig)
    bias: BiasConfig | None = None
    constraint: bool = False
    rho: float = 0.1
    output_dir: str = "runs"
    success_threshold: float | None = None

    def make_problem(self) -> BenchmarkProblem:
        if self.constraint:
            return make_constrained_stalagmite(self.rho)
        return PROBLEMS[self.problem]()

    @property
    def threshold(self) -> float:
        if self.success_threshold is not None:
            return self.success_threshold
        return THRESHOLDS["constrained_stalagmite" if self.constraint else self.problem]


# (type, low, high) per key; None means unbounded on that side
_GA_KEYS = {
    "n_individuals": (int, 1, None),
    "p": (int, 1, None),
    "r_mut": (float, 0.0, 1.0),
    "r_c": (float, 0.0, 1.0),
    "nb_iter": (int, 1, None),
    "target_fitness": (float, None, None),
}
_DEEPIGEN_KEYS = {
    "d_k": (int, 1, None),
    "embed": (bool, None, None),
    "d_v": (int, 1, None),
    "n_heads": (int, 1, None),
    "r_diff": (float, 0.0, 1.0),
    "epochs_per_generation": (int, 0, None),
    "learning_rate": (float, 0.0, None),
    "lambda_diff": (float, 0.0, None),
    "gain": (float, 0.0, None),
    "decoder_hidden": (int, 1, None),
    "head_hidden": (int, 1, None),
    "value_hidden": (int, 1, None),
}
_TOP_KEYS = {"problem", "seeds", "ga", "deepigen", "bias", "constraint", "rho", "output_dir", "success_threshold"}


def _check(path: str, value, spec, nullable: bool = False):
    kind, lo, hi = spec
    if value is None and nullable:
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(path, "must be finite")
    if lo is not None and value < lo or hi is not None and value > hi:
        bounds = f"[{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}]"
        raise ConfigError(path, f"{value!r} is outside {bounds}")
    return value


def _section(raw, path: str, table: dict, nullable: Iterable[str] = ()) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    out = {}
    for key, value in raw.items():
        if key not in table:
            raise ConfigError(f"{path}.{key}", "unknown key")
        out[key] = _check(f"{path}.{key}", value, table[key], nullable=key in nullable)
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    problem = raw.get("problem")
    if problem not in PROBLEMS:
        raise ConfigError("problem", f"unknown problem {problem!r}; known: {sorted(PROBLEMS)}")
    seeds = raw.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "expected a non-empty list of integers")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"seeds[{i}]", f"expected a non-negative integer, got {s!r}")
    ga = GaConfig(**_section(raw.get("ga", {}), "ga", _GA_KEYS, nullable=("target_fitness",)))
    dg = DeepiGenConfig(**_section(raw.get("deepigen", {}), "deepigen", _DEEPIGEN_KEYS, nullable=("d_v",)))
    bias = None
    if raw.get("bias") is not None:
        b = raw["bias"]
        if not isinstance(b, dict):
            raise ConfigError("bias", "expected an object")
        for key in b:
            if key not in ("target", "steps"):
                raise ConfigError(f"bias.{key}", "unknown key")
        target = b.get("target", list(BUMPY_LOCAL_PEAK))
        if not (isinstance(target, list) and len(target) == 2):
            raise ConfigError("bias.target", "expected a point [x, y]")
        target = tuple(_check(f"bias.target[{i}]", t, (float, None, None)) for i, t in enumerate(target))
        steps = _check("bias.steps", b.get("steps", DEFAULT_BIAS_STEPS), (int, 0, None))
        bias = BiasConfig(target, steps)
    constraint = _check("constraint", raw.get("constraint", False), (bool, None, None))
    if constraint and problem != "stalagmite":
        raise ConfigError("constraint", "the exclusion constraint applies to stalagmite only")
    rho = _check("rho", raw.get("rho", 0.1), (float, 0.0, None))
    output_dir = raw.get("output_dir", "runs")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir", "expected a string")
    threshold = _check("success_threshold", raw.get("success_threshold"), (float, None, None), nullable=True)
    cfg = ExperimentConfig(problem, list(seeds), ga, dg, bias, constraint, rho, output_dir, threshold)
    if bias is not None and not np.all(cfg.make_problem().contains(bias.target)):
        raise ConfigError("bias.target", f"{list(bias.target)} lies outside the domain box")
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    ga = asdict(cfg.ga)
    ga.pop("seed")
    return {
        "problem": cfg.problem,
        "seeds": list(cfg.seeds),
        "ga": ga,
        "deepigen": asdict(cfg.deepigen),
        "bias": None if cfg.bias is None else {"target": list(cfg.bias.target), "steps": cfg.bias.steps},
        "constraint": cfg.constraint,
        "rho": cfg.rho,
        "output_dir": cfg.output_dir,
        "success_threshold": cfg.success_threshold,
    }


def loads_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("", f"malformed JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return config_from_dict(raw)


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} does not exist") from None
    return loads_config(text)


# --------------------------------------------------------------------------
# single runs


@dataclass
class RunResult:
    seed: int
    records: list[GenerationRecord]
    chromosome: np.ndarray | None
    point: np.ndarray
    fitness: float
    success: bool
    duration: float
    generations_to_success: int | None = None

    def summary(self, cfg: ExperimentConfig) -> dict:
        return {
            "config": config_to_dict(cfg),
            "seed": self.seed,
            "success": self.success,
            "best_fitness": self.fitness,
            "generations_to_success": self.generations_to_success,
        }


def _first_success(records: Sequence[GenerationRecord], threshold: float) -> int | None:
    for r in records:
        if r.best_fitness >= threshold:
            return r.generation
    return None


def run_seed(cfg: ExperimentConfig, seed: int, keep_points: bool = False) -> RunResult:
    """One EpiGeAl run, pretrained toward ``cfg.bias`` when set."""
    start = time.perf_counter()
    problem = cfg.make_problem()
    ga = GaConfig(**{**asdict(cfg.ga), "seed": seed})
    streams = Streams(seed)
    population = init_population(ga, streams["init"])
    model = init_model(cfg.deepigen, ga.p, problem.dim, streams["network"])
    if cfg.bias is not None:
        biased_init(model, population, cfg.bias.target, cfg.bias.steps, problem)
    out = run_epigeal(ga, cfg.deepigen, problem, streams, model=model, population=population, keep_points=keep_points)
    hit = _first_success(out.records, cfg.threshold)
    return RunResult(
        seed=seed,
        records=out.records,
        chromosome=out.best.chromosome.copy(),
        point=np.asarray(out.point),
        fitness=float(out.score),
        success=hit is not None,
        duration=time.perf_counter() - start,
        generations_to_success=hit,
    )


def worker_count(jobs: int) -> int:
    cap = os.environ.get("EPIGA_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError("EPIGA_THREADS", f"expected a positive integer, got {cap!r}") from None
    return max(1, min(limit, jobs))


def _parallel_map(fn: Callable, items: Sequence) -> list:
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _SeedJob:
    # picklable callable for the process pool
    def __init__(self, cfg: ExperimentConfig, keep_points: bool):
        self.cfg, self.keep_points = cfg, keep_points

    def __call__(self, seed: int) -> RunResult:
        try:
            return run_seed(self.cfg, seed, self.keep_points)
        except Exception as err:
            raise RuntimeError(f"seed {seed}: {err}") from err


# --------------------------------------------------------------------------
# output


def _num(x: float) -> str:
    return repr(float(x))


def write_records_csv(records: Sequence[GenerationRecord], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(
            [r.generation, _num(r.best_fitness), _num(r.best_point[0]), _num(r.best_point[1]),
             _num(r.mean_fitness), int(r.diffusion)]
        )


def read_records_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        return [
            {"generation": int(row["generation"]), **{k: float(row[k]) for k in CSV_HEADER[1:5]},
             "diffusion_flag": int(row["diffusion_flag"])}
            for row in reader
        ]


def write_head_csv(records: Sequence[GenerationRecord], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEAD_CSV_HEADER)
    for r in records:
        for h, (pt, fit) in enumerate(zip(r.head_points, r.head_fitness)):
            writer.writerow([r.generation, h, _num(pt[0]), _num(pt[1]), _num(fit)])


def nearest_peak(point, peaks: Sequence[Peak], radius: float = PEAK_RADIUS) -> Peak | None:
    """Closest registered peak in L-inf distance, if within ``radius``."""
    point = np.asarray(point, dtype=np.float64)
    best, best_d = None, np.inf
    for peak in peaks:
        d = float(np.max(np.abs(point - np.asarray(peak.position))))
        if d <= radius and d < best_d:
            best, best_d = peak, d
    return best


def covered_peaks(head_points, peaks: Sequence[Peak], radius: float = PEAK_RADIUS) -> set[tuple[float, float]]:
    found = (nearest_peak(pt, peaks, radius) for pt in head_points)
    return {p.position for p in found if p is not None}


def peak_report(record: GenerationRecord, peaks: Sequence[Peak]) -> list[dict]:
    rows = []
    for h, (pt, fit) in enumerate(zip(record.head_points, record.head_fitness)):
        peak = nearest_peak(pt, peaks)
        rows.append(
            {
                "head": h,
                "point": [float(pt[0]), float(pt[1])],
                "fitness": float(fit),
                "peak": None if peak is None else {"position": list(peak.position), "height": peak.height},
            }
        )
    return rows


def _write_run(out_dir: Path, stem: str, cfg: ExperimentConfig, result: RunResult) -> None:
    with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
        write_records_csv(result.records, fh)
    (out_dir / f"{stem}.json").write_text(json.dumps(result.summary(cfg), indent=2, sort_keys=True) + "\n")


def _write_curve(out_dir: Path, name: str, results: Sequence[RunResult]) -> None:
    # best-so-far per generation for every seed, long format
    with open(out_dir / name, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "generation", "best_fitness"])
        for res in results:
            for r in res.records:
                writer.writerow([res.seed, r.generation, _num(r.best_fitness)])


# --------------------------------------------------------------------------
# experiments


def run_experiment1(cfg: ExperimentConfig, out_dir=None) -> list[RunResult]:
    """Single head, population pretrained toward the BUMPY local peak."""
    if cfg.deepigen.n_heads != 1:
        raise ConfigError("deepigen.n_heads", "experiment 1 uses exactly one head")
    if cfg.bias is None:
        cfg = replace(cfg, bias=BiasConfig())
    results = _parallel_map(_SeedJob(cfg, False), list(cfg.seeds))
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for res in results:
        _write_run(out, f"exp1_seed{res.seed}", cfg, res)
    _write_curve(out, "exp1_curve.csv", results)
    return results


def run_experiment2(cfg: ExperimentConfig, out_dir=None) -> list[RunResult]:
    """Several heads with diffusion; records every head of each generation's best."""
    if cfg.deepigen.n_heads < 2:
        raise ConfigError("deepigen.n_heads", "experiment 2 needs at least two heads")
    results = _parallel_map(_SeedJob(cfg, False), list(cfg.seeds))
    peaks = cfg.make_problem().peaks
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for res in results:
        stem = f"exp2_seed{res.seed}"
        _write_run(out, stem, cfg, res)
        with open(out / f"{stem}_heads.csv", "w", newline="") as fh:
            write_head_csv(res.records, fh)
        final = res.records[-1]
        report = {
            "seed": res.seed,
            "generation": final.generation,
            "heads": peak_report(final, peaks),
            "max_peaks_covered": max(len(covered_peaks(r.head_points, peaks)) for r in res.records),
        }
        (out / f"{stem}_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_curve(out, "exp2_curve.csv", results)
    return results


# --------------------------------------------------------------------------
# sweep

SWEEP_GRID: dict[str, list] = {
    "n_individuals": [32, 64, 128, 256, 512, 1024],
    "p": [8, 16, 32],
    "r_mut": [round(0.05 + 0.01 * i, 2) for i in range(26)],
    "r_c": [0.7, 0.8, 0.9],
    "embed": [False, True],
    "d_k": [16, 32, 64],
    "d_v": [8, 16, 32, 64],
    "n_heads": [1, 8, 16],
    "r_diff": [round(0.05 * i, 2) for i in range(1, 7)],
}
_GA_SWEEP = ("n_individuals", "p", "r_mut", "r_c")


def validate_grid(grid: dict) -> dict[str, list]:
    """Restrict the full grid to the given value lists; each must be a subset."""
    if not isinstance(grid, dict):
        raise ConfigError("grid", "expected an object")
    out = {k: list(v) for k, v in SWEEP_GRID.items()}
    for key, values in grid.items():
        if key not in SWEEP_GRID:
            raise ConfigError(f"grid.{key}", "unknown key")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}", "expected a non-empty list")
        for v in values:
            allowed = SWEEP_GRID[key]
            if isinstance(v, bool) != isinstance(allowed[0], bool) or not any(
                v == a if isinstance(a, bool) else math.isclose(v, a, abs_tol=1e-9) for a in allowed
            ):
                raise ConfigError(f"grid.{key}", f"{v!r} is not in the allowed set {allowed}")
        out[key] = list(values)
    return out


def sample_configs(grid: dict[str, list], budget: int, rng: np.random.Generator) -> list[dict]:
    """Uniform draws from the grid; d_v is dropped when embed is off and r_diff for one head."""
    picks = []
    for _ in range(budget):
        choice = {k: values[int(rng.integers(len(values)))] for k, values in grid.items()}
        if not choice["embed"]:
            choice["d_v"] = None
        if choice["n_heads"] == 1:
            choice["r_diff"] = None
        picks.append(choice)
    return picks


@dataclass
class SweepRow:
    index: int
    params: dict
    success: bool
    best_fitness: float | None
    generations: int
    error: str | None = None


class _SweepJob:
    def __init__(self, problem: str, seed: int, nb_iter: int):
        self.problem, self.seed, self.nb_iter = problem, seed, nb_iter

    def __call__(self, item: tuple[int, dict]) -> SweepRow:
        index, params = item
        threshold = THRESHOLDS[self.problem]
        try:
            ga = {k: params[k] for k in _GA_SWEEP}
            dg = {k: params[k] for k in ("embed", "d_k", "d_v", "n_heads") if params[k] is not None}
            if params["r_diff"] is not None:
                dg["r_diff"] = params["r_diff"]
            cfg = ExperimentConfig(
                self.problem,
                [self.seed],
                GaConfig(**ga, nb_iter=self.nb_iter, target_fitness=threshold + 1e-3),
                DeepiGenConfig(**dg),
            )
            res = run_seed(cfg, self.seed + index)
            return SweepRow(index, params, res.success, res.fitness, len(res.records))
        except Exception as err:  # one broken config must not stop the sweep
            log.warning("sweep config %d failed: %s", index, err)
            return SweepRow(index, params, False, None, 0, f"{type(err).__name__}: {err}")


def run_sweep(
    grid: dict,
    budget: int,
    problem: str = "bumpy",
    seed: int = 0,
    nb_iter: int = 100,
    out_dir=None,
) -> tuple[list[SweepRow], dict]:
    """Sample ``budget`` configurations and run each once; returns rows and a summary."""
    if problem not in THRESHOLDS or problem == "constrained_stalagmite":
        raise ConfigError("problem", f"sweep supports bumpy and stalagmite, got {problem!r}")
    if budget < 1:
        raise ConfigError("budget", "must be >= 1")
    full = validate_grid(grid)
    configs = sample_configs(full, budget, substream(seed, "sweep"))
    rows = _parallel_map(_SweepJob(problem, seed, nb_iter), list(enumerate(configs)))
    summary = {
        "problem": problem,
        "budget": budget,
        "seed": seed,
        "threshold": THRESHOLDS[problem],
        "successes": sum(r.success for r in rows),
        "success_rate": sum(r.success for r in rows) / budget,
        "errors": sum(r.error is not None for r in rows),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            keys = list(SWEEP_GRID)
            writer.writerow(["index", *keys, "success", "best_fitness", "generations", "error"])
            for r in rows:
                writer.writerow(
                    [r.index, *("" if r.params[k] is None else r.params[k] for k in keys), int(r.success),
                     "" if r.best_fitness is None else _num(r.best_fitness), r.generations, r.error or ""]
                )
        (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rows, summary
