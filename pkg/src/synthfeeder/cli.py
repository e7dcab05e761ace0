"""Command-line driver: ingest, sample, train, generate, validate, baseline, plot, stats.

Settings come from an optional ``key=value`` config file (``--config``) and
are overridden by flags. Progress goes to stderr; artifacts are written under
the output directory, which also receives a ``manifest.json``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .augment import Dataset, SamplingError, build_dataset
from .gan import GanModel, TrainConfig, TrainingDiverged, TrainingLog, monitor, train
from .graph import PHASES, FeederGraph, validate_radial
from .ingest import FeatureScales, FeederFormatError, TopologyError, load_feeder
from .layout import compute_pseudo_coordinates, emit_svg, export_feeder_model, export_opendss
from .pipeline import default_scales, generate_feeders, model_rates
from .reconstruct import NORMAMPS_TABLE, node_to_edge
from .validate import (DEGREE_KEYS, EmpiricalStats, Rates, check_perfect, check_success,
                       empirical_screen, outdegree_fractions, phase_fractions, random_baseline,
                       stats_from_corpus)

log = logging.getLogger("synthfeeder")

TABLE_ROWS = ("Connected rate", "Success rate", "Perfect rate")
TABLE_COLUMNS = ("Random Matrix", "GAN")


class CliError(Exception):
    """A user-facing failure; printed without a traceback."""


@dataclass
class PipelineConfig:
    corpus_dir: str | None = None
    out_dir: str = "out"
    dataset_dir: str | None = None
    checkpoint: str | None = None
    stats_file: str | None = None
    length_max: float = 800.0
    normamps_table: tuple = NORMAMPS_TABLE
    length_tv_threshold: float | None = None
    seed: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        """Pipeline keys are read here; everything else is handed to :class:`TrainConfig`."""
        own = {f.name for f in dataclasses.fields(cls)} - {"train"}
        values, rest = {}, []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"config line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in own:
                values[key] = val
            else:
                rest.append(f"{key}={val}")
        cfg = cls(train=TrainConfig.from_text("\n".join(rest)))
        for key, val in values.items():
            cfg.set(key, val)
        return cfg

    def set(self, key: str, val) -> None:
        if key == "normamps_table":
            val = tuple(float(x) for x in str(val).split(",")) if isinstance(val, str) else tuple(val)
        elif key in ("length_max", "length_tv_threshold"):
            val = float(val)
        elif key == "seed":
            val = int(val)
        setattr(self, key, val)
        if key == "seed":
            self.train = dataclasses.replace(self.train, seed=val)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "train" or v is None:
                continue
            if f.name == "normamps_table":
                v = ",".join(repr(float(x)) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n" + self.train.to_text()


# --- helpers ----------------------------------------------------------------------

def _require(path, what: str) -> Path:
    if path is None:
        raise CliError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} {p} does not exist")
    return p


def _require_seed(cfg: PipelineConfig) -> int:
    if cfg.seed is None:
        raise CliError("a seed is required for this command (--seed or seed= in the config)")
    return cfg.seed


def _feeder_paths(items) -> list[Path]:
    out = []
    for item in items:
        p = _require(item, "input")
        out += sorted(p.glob("*.feeder")) if p.is_dir() else [p]
    if not out:
        raise CliError("no feeder files found")
    return out


def _load_all(paths, level_cap) -> list[FeederGraph]:
    graphs = []
    for p in paths:
        try:
            graphs.append(load_feeder(p, level_cap))
        except FeederFormatError as exc:
            raise CliError(str(exc)) from exc
        except TopologyError as exc:
            raise CliError(f"{p}: {exc}") from exc
    return graphs


class Manifest:
    """Collects written artifacts and records them with their hashes."""

    def __init__(self, out_dir: Path, command: str, cfg: PipelineConfig):
        self.out_dir = out_dir
        self.command = command
        self.cfg = cfg
        self.files: list[Path] = []

    def write(self, path: Path, text: str) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return self.add(path)

    def add(self, path: Path) -> Path:
        self.files.append(Path(path))
        return path

    def close(self) -> None:
        mpath = self.out_dir / "manifest.json"
        entries = []
        if mpath.exists():
            entries = json.loads(mpath.read_text(encoding="utf-8")).get("runs", [])
        files = []
        for f in self.files:
            if f.is_file():
                files.append({"path": str(f.relative_to(self.out_dir) if f.is_relative_to(self.out_dir) else f),
                              "sha256": hashlib.sha256(f.read_bytes()).hexdigest()})
        entries.append({"command": self.command, "version": __version__, "seed": self.cfg.seed,
                        "files": files})
        mpath.write_text(json.dumps({"runs": entries}, indent=2) + "\n", encoding="utf-8")


def _summary_text(graphs) -> str:
    """Pooled corpus fractions (each group sums to one)."""
    nodes = sum(g.m for g in graphs)
    edges = sum(len(g.edges) for g in graphs)
    lines = [f"graphs={len(graphs)}", f"nodes={nodes}", f"edges={edges}"]
    for p in PHASES:
        k = sum(1 for g in graphs for n in g.nodes if n.phase is p)
        lines.append(f"phase.{p.value}={k / nodes!r}")
    deg = {k: 0 for k in DEGREE_KEYS}
    for g in graphs:
        for k, frac in outdegree_fractions(g).items():
            deg[k] += round(frac * g.m)
    lines += [f"outdegree.{k}={v / nodes!r}" for k, v in deg.items()]
    lines.append(f"max_level={max(n.level for g in graphs for n in g.nodes)}")
    return "\n".join(lines) + "\n"


def _m_values(args) -> list[int]:
    if args.m_range:
        lo, hi = (int(x) for x in args.m_range.split(":"))
        if lo < 2 or hi < lo:
            raise CliError("--m-range must be LO:HI with 2 <= LO <= HI")
        return list(range(lo, hi + 1))
    if args.m < 2:
        raise CliError("--m must be at least 2")
    return [args.m]


def _rates_row(r: Rates) -> tuple[float, float, float]:
    return r.connected, r.success, r.perfect


def format_rate_table(columns: dict[str, Rates]) -> str:
    names = list(columns)
    width = max(len(s) for s in TABLE_ROWS) + 2
    out = ["".ljust(width) + "".join(n.rjust(16) for n in names)]
    for k, row in enumerate(TABLE_ROWS):
        out.append(row.ljust(width) + "".join(f"{100 * _rates_row(columns[n])[k]:15.1f}%" for n in names))
    return "\n".join(out) + "\n"


# --- commands ---------------------------------------------------------------------

def cmd_ingest(args, cfg: PipelineConfig, man: Manifest) -> int:
    paths = _feeder_paths(args.files)
    graphs = _load_all(paths, cfg.train.level_cap)
    scales = FeatureScales.from_graphs(graphs, cfg.length_max, cfg.train.level_cap)
    ds = build_dataset(graphs, len(graphs), seed=0, scales=scales)
    ds_dir = man.out_dir / "dataset"
    ds.save(ds_dir)
    for f in sorted(ds_dir.iterdir()):
        man.add(f)
    stats = stats_from_corpus(graphs, length_max=cfg.length_max)
    if cfg.length_tv_threshold is not None:
        stats.length_tv_threshold = cfg.length_tv_threshold
    man.write(man.out_dir / "stats.txt", stats.to_text())
    man.write(man.out_dir / "corpus_summary.txt", _summary_text(graphs))
    nodes = sum(g.m for g in graphs)
    edges = sum(len(g.edges) for g in graphs)
    print(f"ingested {len(graphs)} graphs: {nodes} nodes, {edges} edges")
    return 0


def cmd_sample(args, cfg: PipelineConfig, man: Manifest) -> int:
    seed = _require_seed(cfg)
    src = _require(args.dataset or cfg.dataset_dir, "dataset directory")
    base = Dataset.load(src)
    try:
        ds = build_dataset(base.graphs, args.count, seed, args.min_nodes, args.max_fraction, base.scales)
    except (SamplingError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    out = man.out_dir / "sampled"
    ds.save(out)
    for f in sorted(out.iterdir()):
        man.add(f)
    print(f"dataset of {len(ds)} graphs written to {out}")
    return 0


def cmd_train(args, cfg: PipelineConfig, man: Manifest) -> int:
    _require_seed(cfg)
    ds = Dataset.load(_require(args.dataset or cfg.dataset_dir, "dataset directory"))
    if len(ds) == 0:
        raise CliError("dataset is empty")
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else man.out_dir / "checkpoint.npz"
    log_path = man.out_dir / "train_log.tsv"
    model = None
    tcfg = cfg.train
    if args.resume:
        model = GanModel.load(_require(args.resume, "checkpoint"))
        tcfg = dataclasses.replace(model.cfg, max_iterations=tcfg.max_iterations)
        model.cfg = tcfg
        log.info("resuming at iteration %d", model.iteration)
    try:
        model, tlog = train(ds, tcfg, model, log_path, ckpt)
    except TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}") from exc
    man.add(log_path)
    man.add(ckpt)
    if tlog.snapshots:
        man.write(man.out_dir / "monitor.json", json.dumps(monitor(tlog, tcfg.monitor_window), indent=2) + "\n")
    note = f" ({tlog.stop_reason})" if tlog.stopped_early else ""
    print(f"trained to iteration {model.iteration}{note}; checkpoint {ckpt}")
    return 0


def _load_model(path) -> GanModel:
    try:
        return GanModel.load(_require(path, "checkpoint"))
    except (ValueError, KeyError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_generate(args, cfg: PipelineConfig, man: Manifest) -> int:
    seed = _require_seed(cfg)
    model = _load_model(args.checkpoint or cfg.checkpoint)
    stats = EmpiricalStats.load(_require(cfg.stats_file, "stats file")) if cfg.stats_file else None
    scales = model.scales or default_scales(cfg.length_max)
    results = generate_feeders(model, args.count, _m_values(args), seed, scales, cfg.normamps_table,
                               stats, screen=not args.no_screen, regenerate=not args.no_regenerate)
    rows = ["sample\tm\tconnected\tsuccess\tperfect\tguided_success\tguided_perfect\taccepted\t"
            "lengths_redrawn\tfile\treasons"]
    gen_dir = man.out_dir / "generated"
    for r in results:
        fname = ""
        if r.accepted:
            fname = f"feeder_{r.index:04d}.feeder"
            man.write(gen_dir / fname, export_feeder_model(r.feeder))
            man.write(gen_dir / f"feeder_{r.index:04d}.svg", emit_svg(r.feeder, title=fname))
            if args.opendss:
                man.write(gen_dir / f"feeder_{r.index:04d}.dss",
                          export_opendss(r.feeder, circuit=f"feeder_{r.index:04d}"))
        reasons = "; ".join(r.screen.reasons) if r.screen else "no candidate topology"
        rows.append(f"{r.index}\t{r.m}\t{r.rates.connected!r}\t{r.rates.success!r}\t{r.rates.perfect!r}\t"
                    f"{r.guided_rates.success!r}\t{r.guided_rates.perfect!r}\t{int(r.accepted)}\t"
                    f"{int(r.lengths_regenerated)}\t{fname}\t{reasons}")
    man.write(man.out_dir / "generate_report.tsv", "\n".join(rows) + "\n")
    kept = sum(r.accepted for r in results)
    print(f"{kept} of {len(results)} samples accepted")
    return 0


def cmd_validate(args, cfg: PipelineConfig, man: Manifest) -> int:
    stats = EmpiricalStats.load(_require(cfg.stats_file, "stats file")) if cfg.stats_file else None
    rows = ["file\tradial\tsuccess\tperfect\tscreen\treasons"]
    failed = 0
    for p in _feeder_paths(args.files):
        g = _load_all([p], cfg.train.level_cap)[0]
        viol = validate_radial(g)
        res = empirical_screen(g, stats)
        ok = (not viol, check_success(g), check_perfect(g), res.passed)
        failed += not all(ok)
        reasons = [v.message for v in viol] + res.reasons
        rows.append(f"{p}\t" + "\t".join(str(int(x)) for x in ok) + "\t" + "; ".join(reasons))
    man.write(man.out_dir / "validate_report.tsv", "\n".join(rows) + "\n")
    print(f"{len(rows) - 1 - failed} of {len(rows) - 1} feeders pass every check")
    return 1 if failed and args.strict else 0


def cmd_baseline(args, cfg: PipelineConfig, man: Manifest) -> int:
    seed = _require_seed(cfg)
    scales = default_scales(cfg.length_max)
    columns = {TABLE_COLUMNS[0]: random_baseline(args.m, args.trials, seed, scales, cfg.normamps_table,
                                                 args.guided)}
    ckpt = args.checkpoint or cfg.checkpoint
    if ckpt:
        model = _load_model(ckpt)
        columns[TABLE_COLUMNS[1]] = model_rates(model, args.m, args.trials, seed, model.scales or scales,
                                                cfg.normamps_table, args.guided)
    table = format_rate_table(columns)
    man.write(man.out_dir / "baseline.txt", table)
    sys.stdout.write(table)
    return 0


def _distance_svg(tlog: TrainingLog, window: int = 20) -> str:
    d = tlog.distances()
    if len(d) == 0:
        raise CliError("training log has no records")
    k = max(1, min(window, len(d)))
    smooth = np.convolve(d, np.ones(k) / k, mode="valid")
    w, h, pad = 600.0, 300.0, 30.0
    lo, hi = float(smooth.min()), float(smooth.max())
    span = hi - lo or 1.0
    xs = pad + (w - 2 * pad) * np.arange(len(smooth)) / max(len(smooth) - 1, 1)
    ys = h - pad - (h - 2 * pad) * (smooth - lo) / span
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return ('<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}">'
            f'<title>Wasserstein distance, {k}-iteration moving average</title>'
            f'<rect width="{w:.0f}" height="{h:.0f}" fill="white"/>'
            f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>'
            f'<text x="{pad}" y="{pad - 8}" font-size="11">max {hi:.3f}</text>'
            f'<text x="{pad}" y="{h - 8}" font-size="11">min {lo:.3f}</text></svg>\n')


def cmd_plot(args, cfg: PipelineConfig, man: Manifest) -> int:
    if not args.log and not args.files:
        raise CliError("nothing to plot: give feeder files or --log")
    written = 0
    if args.log:
        tlog, _ = TrainingLog.read(_require(args.log, "training log"))
        man.write(man.out_dir / "distance.svg", _distance_svg(tlog))
        written += 1
    for p in _feeder_paths(args.files) if args.files else []:
        raw = node_to_edge(_load_all([p], cfg.train.level_cap)[0])
        man.write(man.out_dir / "plots" / (p.stem + ".svg"),
                  emit_svg(raw, compute_pseudo_coordinates(raw), title=p.stem))
        written += 1
    print(f"wrote {written} plot(s)")
    return 0


def cmd_stats(args, cfg: PipelineConfig, man: Manifest) -> int:
    paths = _feeder_paths(args.files)
    graphs = _load_all(paths, cfg.train.level_cap)
    head = ["file", "nodes", "max_level"] + [f"phase_{p.value}" for p in PHASES] + \
           [f"outdeg_{k}" for k in DEGREE_KEYS]
    rows = ["\t".join(head)]
    for p, g in zip(paths, graphs):
        pf, of = phase_fractions(g), outdegree_fractions(g)
        rows.append("\t".join([p.name, str(g.m), str(max(n.level for n in g.nodes))]
                              + [f"{pf[q]:.4f}" for q in PHASES] + [f"{of[k]:.4f}" for k in DEGREE_KEYS]))
    man.write(man.out_dir / "feeder_stats.tsv", "\n".join(rows) + "\n")
    man.write(man.out_dir / "corpus_summary.txt", _summary_text(graphs))
    stats = stats_from_corpus(graphs, length_max=cfg.length_max)
    man.write(man.out_dir / "stats.txt", stats.to_text())
    sys.stdout.write(_summary_text(graphs))
    return 0


COMMANDS = {"ingest": cmd_ingest, "sample": cmd_sample, "train": cmd_train, "generate": cmd_generate,
            "validate": cmd_validate, "baseline": cmd_baseline, "plot": cmd_plot, "stats": cmd_stats}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--out", dest="out_dir", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--checkpoint")
    common.add_argument("--stats", dest="stats_file", help="empirical statistics file")
    common.add_argument("--length-max", type=float)
    common.add_argument("--normamps-table", help="comma-separated conductor ratings")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="synthfeeder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse feeder files into a dataset")
    p.add_argument("files", nargs="+", help="feeder files or directories")

    p = sub.add_parser("sample", parents=[common], help="top up a dataset with sub-feeders")
    p.add_argument("--dataset", dest="dataset", help="dataset directory written by ingest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--min-nodes", type=int, default=100)
    p.add_argument("--max-fraction", type=float, default=0.5)

    p = sub.add_parser("train", parents=[common], help="train the GAN")
    p.add_argument("--dataset", dest="dataset")
    p.add_argument("--iterations", type=int, help="total generator iterations")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--monitor-every", type=int)
    p.add_argument("--early-stop", action="store_true", default=None)

    p = sub.add_parser("generate", parents=[common], help="generate and screen feeders")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--m", type=int, default=40, help="nodes per sample")
    p.add_argument("--m-range", help="LO:HI, node count drawn per sample")
    p.add_argument("--no-screen", action="store_true", help="accept the first guided candidate")
    p.add_argument("--no-regenerate", action="store_true",
                   help="discard length-only screen failures instead of redrawing lengths")
    p.add_argument("--opendss", action="store_true", help="also write an OpenDSS script per feeder")

    p = sub.add_parser("validate", parents=[common], help="check feeder files")
    p.add_argument("files", nargs="+")
    p.add_argument("--strict", action="store_true", help="exit 1 if any feeder fails")

    p = sub.add_parser("baseline", parents=[common], help="random-matrix versus model rate table")
    p.add_argument("--m", type=int, default=40)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--guided", action="store_true", help="score guided phases instead of raw ones")

    p = sub.add_parser("plot", parents=[common], help="SVG drawings of feeders or a training log")
    p.add_argument("files", nargs="*")
    p.add_argument("--log", help="training log to plot")

    p = sub.add_parser("stats", parents=[common], help="per-feeder and pooled statistics")
    p.add_argument("files", nargs="+")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_text(_require(args.config, "config").read_text(encoding="utf-8")) \
        if args.config else PipelineConfig()
    for key in ("out_dir", "seed", "checkpoint", "stats_file", "length_max", "normamps_table"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.set(key, val)
    overrides = {}
    if getattr(args, "iterations", None) is not None:
        overrides["max_iterations"] = args.iterations
    if getattr(args, "monitor_every", None) is not None:
        overrides["monitor_every"] = args.monitor_every
    if getattr(args, "early_stop", None):
        overrides["early_stop"] = True
    if overrides:
        cfg.train = dataclasses.replace(cfg.train, **overrides)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        man = Manifest(out, args.command, cfg)
        man.write(out / f"{args.command}_config.txt", cfg.to_text())
        code = COMMANDS[args.command](args, cfg, man)
        man.close()
        return code
    except (CliError, ValueError) as exc:
        print(f"synthfeeder {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
