"""Wasserstein GAN over feeder graphs.

The generator maps per-node Gaussian noise to a soft adjacency matrix and
attribute matrices; the critic embeds categorical attributes, runs two
graph convolutions with a residual concatenation and max-pools a per-node
score into one unbounded critic value.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .graph import LEVEL_CAP, PHASES
from .ingest import FeatureScales, GraphTensors
from .nn import (GCN, Embedding, LayerNorm, Linear, Module, Tensor, concat_cols, gram, max_all,
                 no_grad, relu, softmax_cols, softmax_rows, sub, tanh)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    clip: float = 0.1
    n: int = 20
    n0: int = 500
    n1: int = 1000
    n2: int = 5
    noise_dim: int = 20
    hidden1: int = 128
    hidden2: int = 64
    adj_latent: int = 64
    emb_level: int = 8
    emb_phase: int = 8
    level_cap: int = LEVEL_CAP
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    seed: int = 0
    max_iterations: int = 5000
    checkpoint_every: int = 500
    monitor_every: int = 50
    monitor_window: int = 500
    monitor_samples: int = 8
    phase_collapse_threshold: float = 0.9
    topology_collapse_threshold: float = 0.02
    early_stop: bool = False
    early_stop_min: int = 3000
    early_stop_max: int = 4000

    def __post_init__(self):
        if self.lr <= 0 or self.clip <= 0:
            raise ValueError("lr and clip must be positive")
        if min(self.n1, self.n2, self.n0) < 1 or self.n < 0:
            raise ValueError("schedule constants must be positive")

    @property
    def d_level(self) -> int:
        return self.level_cap + 1

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse ``key=value`` lines; ``#`` comments and blank lines are skipped."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                log.warning("config line %d: unknown key %r ignored", lineno, key)
                continue
            values[key] = _coerce(types[key], val)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


def _coerce(type_name, text: str):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    if t == "bool":
        return text.lower() in ("1", "true", "yes", "on")
    if t == "int":
        return int(text)
    return float(text)


def schedule_iterations(i: int, cfg: TrainConfig) -> int:
    """Critic updates to run before generator update ``i``."""
    if i < 0:
        raise ValueError("iteration counter must be >= 0")
    return cfg.n1 if i < cfg.n or i % cfg.n0 == 0 else cfg.n2


def wasserstein_distance(real_score: float, fake_score: float) -> float:
    return real_score - fake_score


@dataclass
class GeneratedGraph:
    a: Tensor
    x_num: Tensor
    x_cat_level: Tensor
    x_cat_phase: Tensor

    def arrays(self):
        return self.a.data, self.x_num.data, self.x_cat_level.data, self.x_cat_phase.data


def _finite(t: Tensor, layer: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"non-finite values after generator layer {layer}")
    return t


class Generator(Module):
    def __init__(self, cfg: TrainConfig, rng):
        self.fc1 = Linear(cfg.noise_dim, cfg.hidden1, rng)
        self.fc2 = Linear(cfg.hidden1, 4, rng)
        self.fc3 = Linear(cfg.hidden1, cfg.hidden2, rng)
        self.fc4_1 = Linear(cfg.hidden2, cfg.d_level, rng)
        self.fc4_2 = Linear(cfg.hidden2, len(PHASES), rng)
        self.norm = LayerNorm(4 + cfg.d_level + len(PHASES))
        self.fc5 = Linear(4 + cfg.d_level + len(PHASES), cfg.adj_latent, rng)

    def __call__(self, z) -> GeneratedGraph:
        z = nn.as_tensor(z)
        if z.shape[0] < 2:
            raise ValueError("generator needs at least 2 nodes")
        latent = _finite(relu(self.fc1(z)), "FC1")
        num_pre = _finite(self.fc2(latent), "FC2")
        v = _finite(relu(self.fc3(latent)), "FC3")
        lvl_pre = _finite(self.fc4_1(v), "FC4-1")
        ph_pre = _finite(self.fc4_2(v), "FC4-2")
        mixed = _finite(self.norm(concat_cols(num_pre, lvl_pre, ph_pre)), "norm")
        m_lat = _finite(self.fc5(mixed), "FC5")
        a = _finite(softmax_cols(gram(m_lat)), "adjacency")
        return GeneratedGraph(a, tanh(num_pre), softmax_rows(lvl_pre), softmax_rows(ph_pre))


def generator_forward(z, net: Generator) -> GeneratedGraph:
    return net(z)


class Discriminator(Module):
    def __init__(self, cfg: TrainConfig, rng):
        width = cfg.emb_level + cfg.emb_phase + 4
        self.emb1 = Embedding(cfg.d_level, cfg.emb_level, rng)
        self.emb2 = Embedding(len(PHASES), cfg.emb_phase, rng)
        self.norm = LayerNorm(width)
        self.gcn1 = GCN(width, cfg.hidden1, rng)
        self.gcn2 = GCN(cfg.hidden1, cfg.hidden2, rng)
        self.fc6 = Linear(width + cfg.hidden1 + cfg.hidden2, 1, rng)

    def __call__(self, a, x_num, x_cat_level, x_cat_phase) -> Tensor:
        a, x_num = nn.as_tensor(a), nn.as_tensor(x_num)
        x_cat_level, x_cat_phase = nn.as_tensor(x_cat_level), nn.as_tensor(x_cat_phase)
        m = a.shape[0]
        if a.shape != (m, m) or any(t.shape[0] != m for t in (x_num, x_cat_level, x_cat_phase)):
            raise ValueError("adjacency and attribute matrices disagree on node count")
        p = concat_cols(self.emb1(x_cat_level), self.emb2(x_cat_phase))
        r = self.norm(concat_cols(p, x_num))
        h = self.gcn1(a, r)
        i = self.gcn2(a, h)
        o = self.fc6(concat_cols(r, h, i))
        return max_all(o)

    def score(self, graph) -> Tensor:
        if isinstance(graph, GeneratedGraph):
            return self(graph.a, graph.x_num, graph.x_cat_level, graph.x_cat_phase)
        if isinstance(graph, GraphTensors):
            return self(graph.a_norm, graph.x_num, graph.x_cat_level, graph.x_cat_phase)
        return self(*graph)


def discriminator_forward(tensors, net: Discriminator) -> float:
    with no_grad():
        return net.score(tensors).item()


class GanModel:
    """Generator, critic, their optimizers and the training position."""

    def __init__(self, cfg: TrainConfig, scales=None):
        self.cfg = cfg
        self.scales = scales
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.generator = Generator(cfg, np.random.default_rng(seeds[0]))
        self.discriminator = Discriminator(cfg, np.random.default_rng(seeds[1]))
        self.rng = np.random.default_rng(seeds[2])
        self.opt_g = _optimizer(self.generator, cfg)
        self.opt_d = _optimizer(self.discriminator, cfg)
        self.iteration = 0

    def generate(self, m: int, rng=None) -> GeneratedGraph:
        rng = self.rng if rng is None else rng
        z = rng.standard_normal((m, self.cfg.noise_dim))
        with no_grad():
            return self.generator(z)

    def expected_shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._arrays().items()}

    def _arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, mod, opt in (("G", self.generator, self.opt_g), ("D", self.discriminator, self.opt_d)):
            for k, p in mod.parameters().items():
                out[f"{prefix}.{k}"] = p.data
                out[f"{prefix}.rms.{k}"] = opt.acc[k]
        return out

    def save(self, path) -> None:
        meta = {"config": dataclasses.asdict(self.cfg), "iteration": self.iteration,
                "rng_state": self.rng.bit_generator.state,
                "scales": None if self.scales is None else self.scales.to_json()}
        nn.save_arrays(path, self._arrays(), meta)

    @classmethod
    def load(cls, path) -> "GanModel":
        _, meta = nn.load_arrays(path)
        scales = FeatureScales.from_json(meta["scales"]) if meta.get("scales") else None
        model = cls(TrainConfig(**meta["config"]), scales)
        arrays, _ = nn.load_arrays(path, model.expected_shapes())
        for name, target in model._arrays().items():
            target[...] = arrays[name]
        model.iteration = int(meta["iteration"])
        model.rng.bit_generator.state = meta["rng_state"]
        return model


def _optimizer(module: Module, cfg: TrainConfig) -> nn.RMSProp:
    return nn.RMSProp(module.parameters(), cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps)


@dataclass
class LogRecord:
    iteration: int
    real_score: float
    fake_score: float
    distance: float
    critic_steps: int


@dataclass
class TrainingLog:
    records: list[LogRecord] = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    stopped_early: bool = False
    stop_reason: str = ""

    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.records])

    def header(self, cfg: TrainConfig) -> str:
        lines = ["# " + line for line in cfg.to_text().splitlines()]
        lines.append("iteration\treal_score\tfake_score\tdistance\tcritic_steps")
        return "\n".join(lines) + "\n"

    @staticmethod
    def format_record(r: LogRecord) -> str:
        return f"{r.iteration}\t{r.real_score!r}\t{r.fake_score!r}\t{r.distance!r}\t{r.critic_steps}\n"

    @classmethod
    def read(cls, path) -> tuple["TrainingLog", TrainConfig]:
        cfg_lines, records = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#"):
                cfg_lines.append(line[1:].strip())
            elif line and not line.startswith("iteration"):
                it, rs, fs, d, k = line.split("\t")
                records.append(LogRecord(int(it), float(rs), float(fs), float(d), int(k)))
        return cls(records), TrainConfig.from_text("\n".join(cfg_lines))


class TrainingDiverged(RuntimeError):
    pass


def _params_finite(module: Module) -> bool:
    return all(np.isfinite(p.grad).all() for p in module.parameters().values())


def max_abs_weight(module: Module) -> float:
    return max(float(np.abs(p.data).max()) for p in module.parameters().values())


def train(dataset, cfg: TrainConfig | None = None, model: GanModel | None = None,
          log_path=None, checkpoint_path=None,
          on_critic_step: Callable[[GanModel], None] | None = None,
          monitor_fn: Callable | None = None) -> tuple[GanModel, TrainingLog]:
    """Run the staged critic/generator schedule until ``cfg.max_iterations``.

    ``dataset`` is a sequence of :class:`GraphTensors` (or anything with a
    ``tensors`` attribute holding one). Passing ``model`` resumes from its
    stored iteration, parameters, optimizer state and random stream.
    """
    samples = list(getattr(dataset, "tensors", dataset))
    if not samples:
        raise ValueError("dataset is empty")
    if model is None:
        model = GanModel(cfg or TrainConfig(), getattr(dataset, "scales", None))
    cfg = model.cfg if cfg is None else cfg
    gen, crit, rng = model.generator, model.discriminator, model.rng
    real = [(Tensor(t.a_norm), Tensor(t.x_num), Tensor(t.x_cat_level), Tensor(t.x_cat_phase))
            for t in samples]
    if real[0][2].shape[1] != cfg.d_level:
        raise ValueError(f"dataset level one-hot width {real[0][2].shape[1]} != model's {cfg.d_level}")
    tlog = TrainingLog()
    log_fh = None
    if log_path is not None:
        mode = "a" if model.iteration > 0 and Path(log_path).exists() else "w"
        log_fh = open(log_path, mode, encoding="utf-8")
        if mode == "w":
            log_fh.write(tlog.header(cfg))

    if monitor_fn is None and cfg.monitor_every:
        from .pipeline import snapshot as monitor_fn

    t0 = time.time()
    try:
        while model.iteration < cfg.max_iterations:
            i = model.iteration
            steps = schedule_iterations(i, cfg)
            gen.set_requires_grad(False)
            crit.set_requires_grad(True)
            for _ in range(steps):
                sample = real[int(rng.integers(len(real)))]
                z = rng.standard_normal((sample[0].shape[0], cfg.noise_dim))
                with no_grad():
                    fake = gen(z)
                crit.zero_grad()
                loss = sub(crit(*sample), crit.score(fake))
                loss.backward()
                if not (np.isfinite(loss.data).all() and _params_finite(crit)):
                    raise TrainingDiverged(f"non-finite critic loss at generator iteration {i}")
                model.opt_d.step(ascend=True)
                nn.clip_weights(model.opt_d.params, cfg.clip)
                if on_critic_step is not None:
                    on_critic_step(model)

            crit.set_requires_grad(False)
            gen.set_requires_grad(True)
            sample = real[int(rng.integers(len(real)))]
            z = rng.standard_normal((sample[0].shape[0], cfg.noise_dim))
            gen.zero_grad()
            fake_score = crit.score(gen(z))
            nn.scale(fake_score, -1.0).backward()
            if not (np.isfinite(fake_score.data).all() and _params_finite(gen)):
                raise TrainingDiverged(f"non-finite generator loss at iteration {i}")
            model.opt_g.step(ascend=False)
            with no_grad():
                real_score = crit(*sample).item()
            rec = LogRecord(i, real_score, fake_score.item(),
                            wasserstein_distance(real_score, fake_score.item()), steps)
            tlog.records.append(rec)
            if log_fh is not None:
                log_fh.write(tlog.format_record(rec))
            model.iteration += 1

            if checkpoint_path is not None and cfg.checkpoint_every and model.iteration % cfg.checkpoint_every == 0:
                model.save(checkpoint_path)
            if cfg.monitor_every and model.iteration % cfg.monitor_every == 0:
                snap = monitor_fn(model, samples, cfg)
                tlog.snapshots.append(snap)
                if cfg.early_stop and cfg.early_stop_min <= model.iteration <= cfg.early_stop_max \
                        and (snap.phase_collapse or snap.topology_collapse):
                    tlog.stopped_early = True
                    tlog.stop_reason = f"mode collapse flagged at iteration {model.iteration}"
                    break
            if cfg.early_stop and model.iteration >= cfg.early_stop_max:
                tlog.stopped_early = True
                tlog.stop_reason = f"reached early-stop band end {cfg.early_stop_max}"
                break
            if i % 100 == 0:
                log.info("iter %d  critic steps %d  W %.5f  (%.0fs)", i, steps, rec.distance, time.time() - t0)
    finally:
        gen.set_requires_grad(True)
        crit.set_requires_grad(True)
        if log_fh is not None:
            log_fh.close()
        if checkpoint_path is not None:
            model.save(checkpoint_path)
    return model, tlog


# --- monitoring -----------------------------------------------------------------

@dataclass
class Snapshot:
    iteration: int
    connected_rate: float
    success_rate: float
    perfect_rate: float
    phase_fractions: dict
    bifurcation_fraction: float
    phase_collapse: bool
    topology_collapse: bool


def phase_collapse(phases, threshold: float = 0.9) -> bool:
    """True when one phase category exceeds ``threshold`` of all generated nodes."""
    phases = list(phases)
    if not phases:
        return False
    counts = {p: 0 for p in PHASES}
    for p in phases:
        counts[p] += 1
    return max(counts.values()) / len(phases) > threshold


def bifurcation_fraction(out_degrees) -> float:
    out_degrees = list(out_degrees)
    if not out_degrees:
        return 0.0
    return sum(1 for d in out_degrees if d >= 2) / len(out_degrees)


def topology_collapse(out_degrees, threshold: float = 0.02) -> bool:
    """True when branching nodes make up less than ``threshold`` of all nodes."""
    return bifurcation_fraction(out_degrees) < threshold


def collapse_flags(graphs, phase_threshold: float = 0.9, topology_threshold: float = 0.02):
    """Mode-collapse flags over a batch of generated :class:`FeederGraph`."""
    graphs = list(graphs)
    phases = [n.phase for g in graphs for n in g.nodes]
    degrees = [g.out_degree(v) for g in graphs for v in range(g.m)]
    return {"phase_collapse": phase_collapse(phases, phase_threshold),
            "topology_collapse": topology_collapse(degrees, topology_threshold)}


def window_rates(snapshots, window: int = 500) -> list[dict]:
    """Average snapshot rates over consecutive ``window``-iteration blocks."""
    blocks: dict[int, list[Snapshot]] = {}
    for s in snapshots:
        blocks.setdefault((s.iteration - 1) // window, []).append(s)
    out = []
    for b in sorted(blocks):
        group = blocks[b]
        out.append({
            "start": b * window, "end": (b + 1) * window, "snapshots": len(group),
            "connected_rate": float(np.mean([s.connected_rate for s in group])),
            "success_rate": float(np.mean([s.success_rate for s in group])),
            "perfect_rate": float(np.mean([s.perfect_rate for s in group])),
            "phase_collapse": any(s.phase_collapse for s in group),
            "topology_collapse": any(s.topology_collapse for s in group),
        })
    return out


def monitor(tlog: TrainingLog, window: int = 500, band=(3000, 4000)) -> dict:
    """Summarize a training log: windowed rates, distance trend, stop advice."""
    windows = window_rates(tlog.snapshots, window)
    d = tlog.distances()
    wd = [float(d[k:k + window].mean()) for k in range(0, len(d), window)] if len(d) else []
    first_flag = next((s.iteration for s in tlog.snapshots if s.phase_collapse or s.topology_collapse), None)
    advice = None
    if first_flag is not None:
        advice = int(min(max(first_flag, band[0]), band[1]))
    return {"windows": windows, "window_mean_distance": wd, "first_flag_iteration": first_flag,
            "recommended_stop": advice}
