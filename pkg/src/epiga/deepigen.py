"""DeepiGen: the learnable epigenetic layer between chromosomes and phenotypes.

A chromosome is embedded into a value vector (or used as-is), every attention
head re-weights that vector into its own epi-chromosome, and a shared decoder
maps each epi-chromosome into the problem's domain box. A chromosome's score
is the best fitness among its head transcriptions.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import AttentionHead, attention_weights, init_head
from .autodiff import NumericError, ShapeError, Tape, Tensor
from .benchmarks import BenchmarkProblem
from .neural import (
    SNAPSHOT_HEADER,
    AdamState,
    Mlp,
    adam_step,
    init_mlp,
    mlp_forward,
    read_layers,
    write_layers,
)

SCORE_EPS = 1e-8


@dataclass
class DeepiGenConfig:
    d_k: int = 32
    embed: bool = False
    d_v: int | None = None  # forced to p when embed is False
    n_heads: int = 1
    r_diff: float = 0.3
    epochs_per_generation: int = 20
    learning_rate: float = 1e-2
    lambda_diff: float = 1.0
    gain: float = 2.0
    decoder_hidden: int = 32
    head_hidden: int = 32
    value_hidden: int = 32

    def __post_init__(self):
        for name in ("d_k", "n_heads", "decoder_hidden", "head_hidden", "value_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.d_v is not None and self.d_v < 1:
            raise ValueError("d_v must be a positive integer")
        if not 0.0 <= self.r_diff <= 1.0:
            raise ValueError("r_diff must lie in [0, 1]")
        if self.epochs_per_generation < 0:
            raise ValueError("epochs_per_generation must be >= 0")
        if self.learning_rate < 0 or self.lambda_diff < 0 or self.gain <= 0:
            raise ValueError("learning_rate and lambda_diff must be >= 0, gain > 0")

    def value_dim(self, p: int) -> int:
        if not self.embed:
            return p
        return self.d_v if self.d_v is not None else 16


@dataclass
class DeepiGenModel:
    config: DeepiGenConfig
    p: int
    out_dim: int
    value_net: Mlp | None
    heads: list[AttentionHead]
    decoder: Mlp
    adam: AdamState = field(default_factory=AdamState)
    last_losses: list[float] = field(default_factory=list)
    last_diffusion: bool = False

    def __post_init__(self):
        d_v = self.d_v
        if self.decoder.in_dim != d_v or self.decoder.out_dim != self.out_dim:
            raise ShapeError(f"decoder must map {d_v} -> {self.out_dim}")
        if any(h.d_v != d_v or h.in_dim != self.p for h in self.heads):
            raise ShapeError("attention heads disagree with the model dimensions")
        if self.value_net is not None and (self.value_net.in_dim != self.p or self.value_net.out_dim != d_v):
            raise ShapeError("value network must map p -> d_v")

    @property
    def d_v(self) -> int:
        return self.config.value_dim(self.p)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def networks(self) -> list[Mlp]:
        nets = [] if self.value_net is None else [self.value_net]
        for h in self.heads:
            nets += [h.net_q, h.net_k]
        return nets + [self.decoder]

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for net in self.networks():
            params.update(net.parameters())
        return params


def init_model(config: DeepiGenConfig, p: int, out_dim: int, rng: np.random.Generator) -> DeepiGenModel:
    d_v = config.value_dim(p)
    value_net = None
    if config.embed:
        value_net = init_mlp(p, [config.value_hidden], d_v, "tanh", "identity", rng, name="value")
    heads = [
        init_head(p, d_v, config.d_k, config.head_hidden, config.gain, rng, name=f"head{h}")
        for h in range(config.n_heads)
    ]
    decoder = init_mlp(d_v, [config.decoder_hidden], out_dim, "tanh", "identity", rng, name="decoder")
    return DeepiGenModel(config, p, out_dim, value_net, heads, decoder, AdamState(lr=config.learning_rate))


# --------------------------------------------------------------------------
# forward path


def _as_bits(population) -> np.ndarray:
    X = np.asarray(population, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


def _values(model: DeepiGenModel, X, params) -> Tensor:
    if model.value_net is None:
        return ad.const(X)
    return mlp_forward(model.value_net, X, params)


def _epi_stack(model: DeepiGenModel, X, params=None) -> Tensor:
    """Epi-chromosomes for a batch, shape (N, B, d_v)."""
    if X.shape[-1] != model.p:
        raise ShapeError(f"chromosomes have length {X.shape[-1]}, model expects p={model.p}")
    v = _values(model, X, params)
    return ad.stack([ad.mul(attention_weights(h, X, params), v) for h in model.heads], axis=0)


def _decode_stack(model: DeepiGenModel, epi: Tensor, problem: BenchmarkProblem, params=None) -> Tensor:
    lead = epi.shape[:-1]
    flat = ad.reshape(epi, (-1, model.d_v))
    unit = ad.sigmoid(mlp_forward(model.decoder, flat, params))
    pts = ad.add(problem.lower, ad.mul(unit, problem.upper - problem.lower))
    return ad.reshape(pts, (*lead, model.out_dim))


def transcribe(model: DeepiGenModel, population, problem: BenchmarkProblem, params=None, train: bool = False):
    """Decoded points (N, B, dim) and their fitness (N, B) for a population."""
    X = _as_bits(population)
    if problem.dim != model.out_dim:
        raise ShapeError(f"problem has {problem.dim} dimensions, decoder emits {model.out_dim}")
    points = _decode_stack(model, _epi_stack(model, X, params), problem, params)
    return points, problem.evaluate_tensor(points, train=train)


@dataclass
class EpiChromosome:
    head: int
    vector: np.ndarray


@dataclass
class TranscriptionSet:
    points: np.ndarray  # (N, dim)
    fitness: np.ndarray  # (N,)

    @property
    def head(self) -> int:
        """0-based index of the best head (first on ties)."""
        return int(np.argmax(self.fitness))

    @property
    def pooled(self) -> float:
        return float(self.fitness[self.head])


def encode(model: DeepiGenModel, x) -> list[EpiChromosome]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("encode takes a single chromosome")
    epi = _epi_stack(model, x[None, :]).value[:, 0, :]
    return [EpiChromosome(h, epi[h]) for h in range(model.n_heads)]


def decode(model: DeepiGenModel, epi, problem: BenchmarkProblem) -> np.ndarray:
    vec = epi.vector if isinstance(epi, EpiChromosome) else np.asarray(epi, dtype=np.float64)
    if vec.shape != (model.d_v,):
        raise ShapeError(f"epi-chromosome must have dimension {model.d_v}, got {vec.shape}")
    try:
        return _decode_stack(model, ad.const(vec[None, :]), problem).value[0]
    except NumericError as err:
        raise NumericError("decode", str(err)) from err


def evaluate_population(model: DeepiGenModel, population, problem: BenchmarkProblem) -> list[TranscriptionSet]:
    X = _as_bits(population)
    try:
        points, fit = transcribe(model, X, problem)
    except NumericError:
        for i, row in enumerate(X):
            try:
                transcribe(model, row[None, :], problem)
            except NumericError as err:
                raise NumericError(err.primitive, f"chromosome {i}: {err}") from err
        raise
    pts, f = points.value, fit.value
    return [TranscriptionSet(pts[:, i, :].copy(), f[:, i].copy()) for i in range(X.shape[0])]


# --------------------------------------------------------------------------
# objectives


def training_loss(scores) -> Tensor:
    """Sum of inverse scores, guarded against zero."""
    return ad.sum(ad.div(1.0, ad.add(scores, SCORE_EPS)))


def diffusion_penalty(transcriptions) -> Tensor:
    """Negated inter-head variance of decoded points, summed over chromosomes and axes.

    Accepts a tensor/array of decoded points shaped (N, B, dim) or a list of
    TranscriptionSet.
    """
    if isinstance(transcriptions, (list, tuple)):
        if not transcriptions:
            raise ShapeError("no transcriptions")
        pts = np.stack([t.points for t in transcriptions], axis=1)
    else:
        pts = transcriptions
    pts = ad.const(pts)
    if pts.value.ndim != 3 or pts.shape[0] < 2:
        raise ShapeError("diffusion needs decoded points shaped (N, B, dim) with N > 1 heads")
    return ad.neg(ad.sum(ad.variance(pts, axis=0)))


def _train_step(model: DeepiGenModel, X: np.ndarray, problem: BenchmarkProblem, diffusion: bool) -> float:
    with Tape() as tape:
        params = {name: tape.variable(arr, name) for name, arr in model.parameters().items()}
        points, fit = transcribe(model, X, problem, params, train=True)
        loss = training_loss(ad.max(fit, axis=0))
        if diffusion:
            loss = ad.add(loss, ad.scale(diffusion_penalty(points), model.config.lambda_diff))
    grads = ad.backward(tape, loss)
    adam_step(model.parameters(), grads, model.adam)
    return float(loss.value)


def fit(
    model: DeepiGenModel,
    population,
    problem: BenchmarkProblem,
    rng: np.random.Generator | None = None,
    diffusion: bool | None = None,
) -> DeepiGenModel:
    """Train on the current population for ``epochs_per_generation`` steps.

    With several heads, a generation adds the diffusion term with probability
    ``r_diff``; the draw comes from ``rng`` unless ``diffusion`` is given.
    """
    X = _as_bits(population)
    cfg = model.config
    if diffusion is None:
        diffusion = model.n_heads > 1 and rng is not None and rng.random() < cfg.r_diff
    diffusion = bool(diffusion) and model.n_heads > 1
    model.adam.lr = cfg.learning_rate
    model.last_diffusion = diffusion
    model.last_losses = []
    for epoch in range(cfg.epochs_per_generation):
        try:
            loss = _train_step(model, X, problem, diffusion)
        except NumericError as err:
            raise NumericError(err.primitive, f"epoch {epoch}: {err}") from err
        if not np.isfinite(loss):
            raise NumericError("training_loss", f"epoch {epoch}: non-finite loss")
        model.last_losses.append(loss)
    return model


def pretrain_toward(
    model: DeepiGenModel,
    population,
    problem: BenchmarkProblem,
    target,
    steps: int,
    decoder_only: bool = True,
) -> DeepiGenModel:
    """Pull every decoded point toward ``target`` by minimising mean squared distance.

    Only the decoder moves unless ``decoder_only`` is false; the encoder keeps
    its random initialisation.
    """
    target = np.asarray(target, dtype=np.float64)
    if not np.all(problem.contains(target)):
        raise ValueError(f"target {target} lies outside the domain box")
    X = _as_bits(population)
    state = AdamState(lr=model.config.learning_rate)
    live = model.parameters()
    if decoder_only:
        live = {name: arr for name, arr in live.items() if name.startswith(f"{model.decoder.name}.")}
    for _ in range(steps):
        with Tape() as tape:
            params = {name: tape.variable(arr, name) for name, arr in live.items()}
            points, _ = transcribe(model, X, problem, params)
            loss = ad.mean(ad.sum(ad.square(ad.sub(points, target)), axis=-1))
        adam_step(live, ad.backward(tape, loss), state)
    return model


# --------------------------------------------------------------------------
# snapshots


@dataclass
class ModelSnapshot:
    """Frozen copy of a model's parameters and configuration."""

    config: DeepiGenConfig
    p: int
    out_dim: int
    arrays: dict[str, np.ndarray]

    def restore(self) -> DeepiGenModel:
        model = init_model(self.config, self.p, self.out_dim, np.random.default_rng(0))
        for name, arr in model.parameters().items():
            arr[...] = self.arrays[name]
        return model

    def to_text(self) -> str:
        return dumps_model(self.restore())

    @classmethod
    def from_text(cls, text: str) -> "ModelSnapshot":
        return snapshot(loads_model(text))


def snapshot(model: DeepiGenModel) -> ModelSnapshot:
    arrays = {name: arr.copy() for name, arr in model.parameters().items()}
    return ModelSnapshot(DeepiGenConfig(**vars(model.config)), model.p, model.out_dim, arrays)


def _config_line(model: DeepiGenModel) -> str:
    c = model.config
    parts = [f"d_k={c.d_k}", f"d_v={model.d_v}", f"N={model.n_heads}", f"embed={str(c.embed).lower()}", f"gain={c.gain!r}"]
    parts += [f"p={model.p}", f"out_dim={model.out_dim}"]
    for f_ in fields(c):
        if f_.name not in ("d_k", "d_v", "n_heads", "embed", "gain"):
            parts.append(f"{f_.name}={getattr(c, f_.name)!r}")
    return "config " + " ".join(parts)


def dumps_model(model: DeepiGenModel) -> str:
    buf = io.StringIO()
    buf.write(_config_line(model) + "\n")
    buf.write(SNAPSHOT_HEADER + "\n")
    for net in model.networks():
        buf.write(f"net {net.name}\n")
        write_layers(net, buf)
    return buf.getvalue()


def _parse_value(raw: str):
    if raw in ("true", "false", "True", "False"):
        return raw.lower() == "true"
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def loads_model(text: str) -> DeepiGenModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2 or not lines[0].startswith("config ") or lines[1] != SNAPSHOT_HEADER:
        raise ValueError("not a DeepiGen snapshot")
    values = dict(item.split("=", 1) for item in lines[0].split()[1:])
    values = {k: _parse_value(v) for k, v in values.items()}
    p, out_dim = values.pop("p"), values.pop("out_dim")
    values["n_heads"] = values.pop("N")
    config = DeepiGenConfig(**values)
    nets: dict[str, Mlp] = {}
    pos = 2
    while pos < len(lines):
        if not lines[pos].startswith("net "):
            raise ValueError(f"expected a net record at line {pos + 1}")
        name = lines[pos].split(maxsplit=1)[1]
        layers, pos = read_layers(lines, pos + 1)
        nets[name] = Mlp(layers, name)
    heads = [
        AttentionHead(nets[f"head{h}.query"], nets[f"head{h}.key"], config.value_dim(p), config.d_k, config.gain)
        for h in range(config.n_heads)
    ]
    return DeepiGenModel(config, p, out_dim, nets.get("value"), heads, nets["decoder"], AdamState(lr=config.learning_rate))


# --------------------------------------------------------------------------
# best member


@dataclass
class BestResult:
    index: int
    chromosome: np.ndarray
    point: np.ndarray
    fitness: float
    head: int
    snapshot: ModelSnapshot
    transcription: TranscriptionSet


def find_best(
    model: DeepiGenModel,
    population,
    problem: BenchmarkProblem,
    transcriptions: Sequence[TranscriptionSet] | None = None,
) -> BestResult:
    X = _as_bits(population)
    if X.shape[0] == 0:
        raise ShapeError("empty population")
    if transcriptions is None:
        transcriptions = evaluate_population(model, X, problem)
    pooled = np.array([t.pooled for t in transcriptions])
    i = int(np.argmax(pooled))
    t = transcriptions[i]
    return BestResult(i, X[i].astype(np.int8), t.points[t.head].copy(), t.pooled, t.head, snapshot(model), t)
