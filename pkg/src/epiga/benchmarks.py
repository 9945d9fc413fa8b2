"""Two-dimensional multi-peak test functions and a brute-force peak finder.

The formulas are written once against :mod:`epiga.autodiff` primitives, so
the same code gives plain numbers for evaluation and tape gradients for
training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from . import autodiff as ad

BUMPY_LOWER = 1e-6
STALAGMITE_CENTRE = 0.0667
SUPPRESSION_TAU = 1e-3


class DomainError(ValueError):
    """A point lies outside the problem's domain box."""


@dataclass(frozen=True)
class Peak:
    position: tuple[float, float]
    height: float


@dataclass
class BenchmarkProblem:
    name: str
    lower: np.ndarray
    upper: np.ndarray
    # (x, y) -> fitness, built from autodiff primitives; used for reporting
    fitness: Callable
    peaks: list[Peak] = field(default_factory=list)
    # smooth surrogate used on the training path; defaults to ``fitness``
    train_fitness: Callable | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def evaluate(self, points) -> np.ndarray:
        """Fitness of points with shape (..., 2), as a plain array."""
        pts = np.asarray(points, dtype=np.float64)
        return self.fitness(pts[..., 0], pts[..., 1]).value

    def evaluate_tensor(self, points: ad.Tensor, train: bool = False) -> ad.Tensor:
        f = self.train_fitness if (train and self.train_fitness is not None) else self.fitness
        return f(ad.take(points, (..., 0)), ad.take(points, (..., 1)))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)


# --------------------------------------------------------------------------
# formulas


def bumpy_expr(x, y) -> ad.Tensor:
    num = ad.mul(ad.square(ad.sin(ad.sub(x, y))), ad.square(ad.sin(ad.add(x, y))))
    return ad.div(num, ad.sqrt(ad.add(ad.square(x), ad.scale(ad.square(y), 2.0))))


def _stalagmite_factor(u) -> ad.Tensor:
    ripple = ad.power(ad.sin(ad.add(ad.scale(u, 5.1 * math.pi), 0.5)), 6)
    envelope = ad.exp(ad.scale(ad.square(ad.sub(u, STALAGMITE_CENTRE)), -4.0 * math.log(2.0) / 0.64))
    return ad.mul(ripple, envelope)


def stalagmite_expr(x, y) -> ad.Tensor:
    return ad.mul(_stalagmite_factor(x), _stalagmite_factor(y))


def _linf_to_centre(x, y) -> ad.Tensor:
    return ad.maximum(ad.abs(ad.sub(x, STALAGMITE_CENTRE)), ad.abs(ad.sub(y, STALAGMITE_CENTRE)))


def constrained_stalagmite_expr(x, y, rho: float = 0.1) -> ad.Tensor:
    """Hard exclusion: zero on the L-inf ball of radius rho around the global peak."""
    inside = _linf_to_centre(x, y).value <= rho
    return ad.mul(stalagmite_expr(x, y), np.where(inside, 0.0, 1.0))


def suppressed_stalagmite_expr(x, y, rho: float = 0.1, tau: float = SUPPRESSION_TAU) -> ad.Tensor:
    """Smooth exclusion for training: fitness * exp(-max(0, rho - d)^2 / tau)."""
    depth = ad.maximum(ad.sub(rho, _linf_to_centre(x, y)), 0.0)
    return ad.mul(stalagmite_expr(x, y), ad.exp(ad.scale(ad.square(depth), -1.0 / tau)))


# --------------------------------------------------------------------------
# scalar entry points


def _as_float(value: ad.Tensor) -> float:
    return float(value.value)


def bumpy(x: float, y: float) -> float:
    if not (0.0 < x <= 10.0 and 0.0 < y <= 10.0):
        raise DomainError(f"bumpy is defined on (0, 10]^2, got ({x}, {y})")
    return _as_float(bumpy_expr(x, y))


def _check_unit_box(name: str, x: float, y: float) -> None:
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise DomainError(f"{name} is defined on [0, 1]^2, got ({x}, {y})")


def stalagmite(x: float, y: float) -> float:
    _check_unit_box("stalagmite", x, y)
    return _as_float(stalagmite_expr(x, y))


def constrained_stalagmite(x: float, y: float, rho: float = 0.1) -> float:
    _check_unit_box("constrained_stalagmite", x, y)
    return _as_float(constrained_stalagmite_expr(x, y, rho))


# --------------------------------------------------------------------------
# registry

BUMPY_PEAKS = [
    Peak((1.393, 0.006), 0.675),
    Peak((0.031, 1.441), 0.47),
    Peak((1.593, 0.471), 0.365),
    Peak((0.475, 1.578), 0.274),
]

# positions from the grid oracle at step 1e-3; the single-axis factor peaks
# at u = 0.06683 and u = 0.26181
STALAGMITE_PEAKS = [
    Peak((0.067, 0.067), 1.0),
    Peak((0.262, 0.067), 0.845),
    Peak((0.067, 0.262), 0.845),
]


def make_bumpy() -> BenchmarkProblem:
    return BenchmarkProblem("bumpy", [BUMPY_LOWER] * 2, [10.0, 10.0], bumpy_expr, list(BUMPY_PEAKS))


def make_stalagmite() -> BenchmarkProblem:
    return BenchmarkProblem("stalagmite", [0.0, 0.0], [1.0, 1.0], stalagmite_expr, list(STALAGMITE_PEAKS))


def make_constrained_stalagmite(rho: float = 0.1) -> BenchmarkProblem:
    peaks = [p for p in STALAGMITE_PEAKS if max(abs(c - STALAGMITE_CENTRE) for c in p.position) > rho]
    return BenchmarkProblem(
        "constrained_stalagmite",
        [0.0, 0.0],
        [1.0, 1.0],
        lambda x, y: constrained_stalagmite_expr(x, y, rho),
        peaks,
        train_fitness=lambda x, y: suppressed_stalagmite_expr(x, y, rho),
    )


PROBLEMS = {
    "bumpy": make_bumpy,
    "stalagmite": make_stalagmite,
    "constrained_stalagmite": make_constrained_stalagmite,
}


def get_problem(name: str, **kwargs) -> BenchmarkProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**kwargs)


# --------------------------------------------------------------------------
# brute-force oracle


def grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    start = math.ceil(lo / step - 1e-9) * step
    n = int(math.floor((hi - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _padded_axis(lo: float, hi: float, dom_lo: float, dom_hi: float, step: float) -> np.ndarray:
    # one extra in-domain sample on each cut side so sub-box edges are not mistaken for peaks
    axis = grid_axis(max(lo, dom_lo), min(hi, dom_hi), step)
    if axis[0] - step >= dom_lo:
        axis = np.concatenate([[axis[0] - step], axis])
    if axis[-1] + step <= dom_hi:
        axis = np.concatenate([axis, [axis[-1] + step]])
    return axis


def grid_oracle(
    problem: BenchmarkProblem,
    step: float,
    box: Sequence[Sequence[float]] | None = None,
    block_points: int = 4_000_000,
) -> list[Peak]:
    """Local maxima of ``problem.fitness`` on a regular grid, tallest first.

    A grid point is a peak when it is strictly greater than each of its (up
    to eight) neighbours; neighbours outside the grid do not count, so peaks
    on the domain edge are reported. ``box`` restricts the search to a
    sub-rectangle ((xlo, xhi), (ylo, yhi)).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    (xlo, xhi), (ylo, yhi) = box if box is not None else zip(problem.lower, problem.upper)
    xs = _padded_axis(xlo, xhi, problem.lower[0], problem.upper[0], step)
    ys = _padded_axis(ylo, yhi, problem.lower[1], problem.upper[1], step)
    rows = max(1, block_points // max(len(ys), 1))
    found: list[Peak] = []
    for start in range(0, len(xs), rows):
        end = min(start + rows, len(xs))
        lo, hi = max(start - 1, 0), min(end + 1, len(xs))
        X, Y = np.meshgrid(xs[lo:hi], ys, indexing="ij")
        F = problem.fitness(X, Y).value
        edge = np.full((1, len(ys)), -np.inf)
        if start == 0:
            F = np.vstack([edge, F])
        if end == len(xs):
            F = np.vstack([F, edge])
        P = np.pad(F, ((0, 0), (1, 1)), constant_values=-np.inf)
        centre = P[1:-1, 1:-1]
        nr, nc = centre.shape
        mask = np.ones(centre.shape, dtype=bool)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx or dy:
                    mask &= centre > P[1 + dx : 1 + dx + nr, 1 + dy : 1 + dy + nc]
        for i, j in np.argwhere(mask):
            x, y = xs[start + i], ys[j]
            if not (xlo <= x <= xhi and ylo <= y <= yhi):
                continue
            found.append(Peak((float(x), float(y)), float(centre[i, j])))
    found.sort(key=lambda p: (-p.height, p.position))
    return found


def write_peaks_csv(problem: BenchmarkProblem, out: TextIO, peaks: Sequence[Peak] | None = None) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["name", "x", "y", "height"])
    for p in problem.peaks if peaks is None else peaks:
        writer.writerow([problem.name, repr(p.position[0]), repr(p.position[1]), repr(p.height)])
