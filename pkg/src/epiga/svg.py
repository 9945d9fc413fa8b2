"""Standalone SVG of population migration over a fitness heatmap.

The heatmap is rasterised once into a PNG (written with ``zlib`` and
``struct``) and embedded as a data URI; decoded points are SVG circles.
"""

from __future__ import annotations

import base64
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from .benchmarks import BenchmarkProblem, grid_axis
from .ga import GenerationRecord

PANEL = 240
MARGIN = 28
HEAT_STEP = 0.01
BANDS = 12
MAX_PANELS = 4

# dark blue -> teal -> yellow
_STOPS = np.array([[0.0, 68, 1, 84], [0.35, 49, 104, 142], [0.65, 53, 183, 121], [1.0, 253, 231, 37]])


def _png(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[i].tobytes() for i in range(h))

    def chunk(kind: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def _colour(level: np.ndarray) -> np.ndarray:
    out = np.empty(level.shape + (3,), dtype=np.uint8)
    for c in range(3):
        out[..., c] = np.round(np.interp(level, _STOPS[:, 0], _STOPS[:, c + 1])).astype(np.uint8)
    return out


def heatmap_png(problem: BenchmarkProblem, step: float = HEAT_STEP, bands: int = BANDS) -> bytes:
    """Banded fitness image; row 0 is the top of the box (largest y)."""
    xs = grid_axis(problem.lower[0], problem.upper[0], step)
    ys = grid_axis(problem.lower[1], problem.upper[1], step)
    X, Y = np.meshgrid(xs, ys[::-1])
    F = problem.evaluate(np.stack([X, Y], axis=-1))
    top = F.max() if F.max() > 0 else 1.0
    level = np.floor(np.clip(F / top, 0.0, 1.0) * (bands - 1e-9)) / (bands - 1)
    return _png(_colour(level))


def _panel_generations(records: Sequence[GenerationRecord], panels: int) -> list[int]:
    n = len(records)
    if n <= panels:
        return list(range(n))
    return sorted({round(i * (n - 1) / (panels - 1)) for i in range(panels)})


def _points(record: GenerationRecord) -> np.ndarray:
    if record.points is not None:
        return np.asarray(record.points).reshape(-1, 2)
    return np.asarray(record.best_point).reshape(-1, 2)


def render_population_svg(
    records: Sequence[GenerationRecord],
    problem: BenchmarkProblem,
    path,
    panels: int = MAX_PANELS,
    step: float = HEAT_STEP,
) -> Path:
    """One panel per selected generation with every decoded point drawn.

    Records that carry no population (``points is None``) contribute their
    best point only.
    """
    if not records:
        raise ValueError("no generation records to draw")
    chosen = _panel_generations(records, panels)
    lo, hi = problem.lower, problem.upper
    span = hi - lo
    width = MARGIN + len(chosen) * (PANEL + MARGIN)
    height = PANEL + 2 * MARGIN
    png = base64.b64encode(heatmap_png(problem, step)).decode("ascii")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{problem.name} population migration</title>",
        "<defs>",
        f'<image id="heat" width="{PANEL}" height="{PANEL}" preserveAspectRatio="none" '
        f'xlink:href="data:image/png;base64,{png}"/>',
        "</defs>",
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for k, idx in enumerate(chosen):
        rec = records[idx]
        pts = _points(rec)
        ox = MARGIN + k * (PANEL + MARGIN)
        parts.append(f'<g class="panel" data-generation="{rec.generation}" transform="translate({ox},{MARGIN})">')
        parts.append('<use xlink:href="#heat"/>')
        parts.append(f'<rect width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>')
        for x, y in pts:
            cx = (x - lo[0]) / span[0] * PANEL
            cy = PANEL - (y - lo[1]) / span[1] * PANEL
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.8" fill="red" fill-opacity="0.7"/>')
        parts.append(
            f'<text x="{PANEL / 2:.0f}" y="-8" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12">generation {rec.generation}</text>'
        )
        parts.append("</g>")
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
