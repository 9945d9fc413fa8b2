"""Binary genetic algorithm and the epigenetic main loop.

Operators work on populations stored as ``(N_i, p)`` int8 arrays. Every
stochastic step draws from its own named stream (see :mod:`epiga.rng`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError
from .benchmarks import BenchmarkProblem
from .deepigen import (
    BestResult,
    DeepiGenConfig,
    DeepiGenModel,
    ModelSnapshot,
    evaluate_population,
    find_best,
    fit,
    init_model,
    pretrain_toward,
    transcribe,
)
from .rng import Streams

log = logging.getLogger(__name__)

TARGET_TOLERANCE = 1e-3


@dataclass
class GaConfig:
    n_individuals: int = 128
    p: int = 16
    r_mut: float = 0.1
    r_c: float = 0.7
    nb_iter: int = 100
    seed: int = 0
    target_fitness: float | None = None

    def __post_init__(self):
        if self.n_individuals < 1 or self.p < 1:
            raise ValueError("n_individuals and p must be positive")
        for name in ("r_mut", "r_c"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.nb_iter < 1:
            raise ValueError("nb_iter must be >= 1")


@dataclass
class Population:
    members: np.ndarray
    generation: int = 0

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float  # best so far
    best_point: np.ndarray
    mean_fitness: float
    diffusion: bool = False
    snapshot: ModelSnapshot | None = None
    generation_best: float = 0.0
    head_points: np.ndarray | None = None  # per-head points of this generation's best chromosome
    head_fitness: np.ndarray | None = None
    points: np.ndarray | None = None  # (N, N_i, dim) decoded population


# --------------------------------------------------------------------------
# operators


def init_population(cfg: GaConfig, rng: np.random.Generator) -> Population:
    return Population(rng.integers(0, 2, size=(cfg.n_individuals, cfg.p), dtype=np.int8), 0)


def select(population, scores, rng: np.random.Generator) -> np.ndarray:
    """Elite first, then N_i - 1 roulette draws with replacement."""
    members = population.members if isinstance(population, Population) else np.asarray(population)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(members),):
        raise ValueError("scores must align with population members")
    if np.any(scores < 0):
        raise ValueError("roulette selection needs non-negative scores")
    n = len(members)
    elite = int(np.argmax(scores))
    total = scores.sum()
    probs = scores / total if total > 0 else np.full(n, 1.0 / n)
    picks = rng.choice(n, size=n - 1, replace=True, p=probs)
    return np.concatenate([members[elite : elite + 1], members[picks]]).astype(np.int8)


def crossover(parents, r_c: float, rng: np.random.Generator) -> np.ndarray:
    """Single-point crossover of consecutive pairs with probability r_c."""
    parents = np.asarray(parents, dtype=np.int8)
    n, p = parents.shape
    if n % 2:
        parents = np.concatenate([parents, parents[:1]])
    children = parents.copy()
    if p < 2:
        return children[:n]
    for i in range(0, len(parents), 2):
        if rng.random() < r_c:
            cut = int(rng.integers(1, p))
            children[i, cut:] = parents[i + 1, cut:]
            children[i + 1, cut:] = parents[i, cut:]
    return children[:n]


def crossover_pair(a, b, cut: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    return np.concatenate([a[:cut], b[cut:]]), np.concatenate([b[:cut], a[cut:]])


def mutate(children, r_mut: float, rng: np.random.Generator) -> np.ndarray:
    children = np.asarray(children, dtype=np.int8)
    flips = rng.random(children.shape) < r_mut
    return np.where(flips, 1 - children, children).astype(np.int8)


def update_population(children, survivors, generation: int = 0) -> Population:
    """Children form the next generation, with the elite survivor at index 0."""
    nxt = np.array(children, dtype=np.int8, copy=True)
    nxt[0] = np.asarray(survivors)[0]
    return Population(nxt, generation)


def biased_init(
    model: DeepiGenModel, population, target, steps: int, problem: BenchmarkProblem
) -> DeepiGenModel:
    """Pretrain so the initial population decodes near ``target``."""
    members = population.members if isinstance(population, Population) else population
    return pretrain_toward(model, members, problem, target, steps)


# --------------------------------------------------------------------------
# main loops


@dataclass
class RunOutcome:
    best: BestResult | None
    point: np.ndarray
    score: float
    snapshot: ModelSnapshot | None
    records: list[GenerationRecord] = field(default_factory=list)
    model: DeepiGenModel | None = None


def _reached(cfg: GaConfig, best: float) -> bool:
    return cfg.target_fitness is not None and best >= cfg.target_fitness - TARGET_TOLERANCE


def run_epigeal(
    cfg: GaConfig,
    dcfg: DeepiGenConfig,
    problem: BenchmarkProblem,
    streams: Streams | None = None,
    model: DeepiGenModel | None = None,
    population: Population | None = None,
    keep_points: bool = True,
) -> RunOutcome:
    """Fit, evaluate, keep the best, then select/cross/mutate, once per generation."""
    streams = streams if streams is not None else Streams(cfg.seed)
    if population is None:
        population = init_population(cfg, streams["init"])
    if model is None:
        model = init_model(dcfg, cfg.p, problem.dim, streams["network"])
    best: BestResult | None = None
    records: list[GenerationRecord] = []
    for t in range(cfg.nb_iter):
        diffusion = model.n_heads > 1 and streams["diffusion"].random() < dcfg.r_diff
        try:
            fit(model, population.members, problem, diffusion=diffusion)
            trans = evaluate_population(model, population.members, problem)
        except NumericError as err:
            raise NumericError(err.primitive, f"generation {t}: {err}") from err
        current = find_best(model, population.members, problem, trans)
        if best is None or current.fitness > best.fitness:
            best = current
        scores = np.array([tr.pooled for tr in trans])
        records.append(
            GenerationRecord(
                generation=t,
                best_fitness=best.fitness,
                best_point=best.point.copy(),
                mean_fitness=float(scores.mean()),
                diffusion=diffusion,
                snapshot=best.snapshot,
                generation_best=current.fitness,
                head_points=current.transcription.points.copy(),
                head_fitness=current.transcription.fitness.copy(),
                points=np.stack([tr.points for tr in trans], axis=1) if keep_points else None,
            )
        )
        log.debug("generation %d best %.4f mean %.4f", t, best.fitness, scores.mean())
        if _reached(cfg, best.fitness):
            break
        survivors = select(population, scores, streams["selection"])
        children = crossover(survivors, cfg.r_c, streams["crossover"])
        children = mutate(children, cfg.r_mut, streams["mutation"])
        population = update_population(children, survivors, t + 1)
    return RunOutcome(best, best.point, best.fitness, best.snapshot, records, model)


def plain_decode(members, problem: BenchmarkProblem) -> np.ndarray:
    """Split each chromosome into per-dimension halves read as unsigned ints (MSB first)."""
    members = np.atleast_2d(np.asarray(members, dtype=np.int64))
    n, p = members.shape
    dim = problem.dim
    if p % dim:
        raise ValueError(f"chromosome length {p} is not divisible by {dim}")
    bits = p // dim
    weights = 2 ** np.arange(bits - 1, -1, -1)
    ints = members.reshape(n, dim, bits) @ weights
    return problem.lower + (problem.upper - problem.lower) * ints / (2**bits - 1)


def run_plain_ga(cfg: GaConfig, problem: BenchmarkProblem, streams: Streams | None = None, population=None) -> RunOutcome:
    """Same GA loop with a fixed binary-to-real decoding and no learning."""
    streams = streams if streams is not None else Streams(cfg.seed)
    pick = lambda name: streams[f"plain_ga.{name}"]
    if population is None:
        population = init_population(cfg, pick("init"))
    elif not isinstance(population, Population):
        population = Population(np.asarray(population, dtype=np.int8))
    best_fit, best_pt = -np.inf, None
    records: list[GenerationRecord] = []
    for t in range(cfg.nb_iter):
        pts = plain_decode(population.members, problem)
        scores = problem.evaluate(pts)
        i = int(np.argmax(scores))
        if scores[i] > best_fit:
            best_fit, best_pt = float(scores[i]), pts[i].copy()
        records.append(
            GenerationRecord(t, best_fit, best_pt.copy(), float(scores.mean()), generation_best=float(scores[i]), points=pts[None])
        )
        if _reached(cfg, best_fit):
            break
        survivors = select(population, scores, pick("selection"))
        children = mutate(crossover(survivors, cfg.r_c, pick("crossover")), cfg.r_mut, pick("mutation"))
        population = update_population(children, survivors, t + 1)
    return RunOutcome(None, best_pt, best_fit, None, records)


def decoded_points(model: DeepiGenModel, members, problem: BenchmarkProblem) -> np.ndarray:
    """All head transcriptions for a population, shape (N, B, dim)."""
    points, _ = transcribe(model, members, problem)
    return points.value
