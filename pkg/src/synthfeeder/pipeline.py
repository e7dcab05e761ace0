"""End-to-end generation: soft graph -> adjacency -> heads -> attributes -> checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gan import GanModel, Snapshot, TrainConfig, bifurcation_fraction, phase_collapse, topology_collapse
from .graph import PHASES, FeederGraph
from .ingest import FeatureScales, compute_topological_features
from .reconstruct import (NORMAMPS_TABLE, CandidateTopology, SoftGraph, assign_phases_guided,
                          attribute_nodes, canonical, head_candidates, permute_feeder_head,
                          reconstruct_adjacency, reconstruct_attributes)
from .validate import (EmpiricalStats, Rates, ScreenResult, ValidationReport, check_connected,
                       check_perfect, check_success, compute_rates, empirical_screen, regenerate_lengths,
                       trial_seeds)


def default_scales(length_max: float = 800.0) -> FeatureScales:
    lo = {"length": 0.0, "norm_amps": min(NORMAMPS_TABLE), "distance": 0.0, "pseudo_load": 0.0}
    hi = {"length": length_max, "norm_amps": max(NORMAMPS_TABLE), "distance": 20 * length_max,
          "pseudo_load": 5000.0}
    return FeatureScales(lo, hi)


@dataclass
class Evaluation:
    soft: SoftGraph
    a_tilde: np.ndarray
    candidates: list[CandidateTopology]
    guided: list[FeederGraph]
    report: ValidationReport


def evaluate_soft(soft: SoftGraph, scales: FeatureScales | None = None, normamps_table=None,
                  level_cap: int | None = None) -> Evaluation:
    """Reconstruct every admissible head and score raw and guided phases."""
    scales = scales or default_scales()
    table = NORMAMPS_TABLE if normamps_table is None else normamps_table
    a_tilde = reconstruct_adjacency(soft.a_soft)
    attrs = reconstruct_attributes(soft.x_num, soft.x_cat_level, soft.x_cat_phase, scales, table)
    nodes = attribute_nodes(attrs)
    cands = permute_feeder_head(a_tilde, nodes, soft)
    heads = head_candidates(a_tilde)
    connected = [check_connected(a_tilde, h) for h in heads]
    by_head = {c.head: c.graph for c in cands}
    success = [h in by_head and check_success(by_head[h]) for h in heads]
    perfect = [h in by_head and check_perfect(by_head[h]) for h in heads]
    guided = []
    for c in cands:
        g = assign_phases_guided(c.graph, soft.x_cat_phase)
        kwargs = {} if level_cap is None else {"level_cap": level_cap}
        guided.append(compute_topological_features(g, **kwargs))
    report = ValidationReport(heads, connected, success, perfect, compute_rates(a_tilde, cands),
                              compute_rates(a_tilde, guided))
    return Evaluation(soft, a_tilde, cands, guided, report)


def model_rates(model: GanModel, m: int, trials: int, seed, scales=None, normamps_table=None,
                guided: bool = False) -> Rates:
    """Average rates of generator samples, one per trial seed (same seeds as the baseline)."""
    out = []
    for ss in trial_seeds(seed, trials):
        soft = SoftGraph.from_generated(model.generate(m, np.random.default_rng(ss)))
        ev = evaluate_soft(soft, scales, normamps_table)
        out.append(ev.report.guided_rates if guided else ev.report.rates)
    return Rates.mean(out)


def snapshot(model: GanModel, samples, cfg: TrainConfig, scales=None) -> Snapshot:
    """Generate a few graphs from the current generator and measure them."""
    rng = np.random.default_rng([cfg.seed, model.iteration])
    rates, phases, degrees = [], [], []
    for _ in range(cfg.monitor_samples):
        m = samples[int(rng.integers(len(samples)))].m
        soft = SoftGraph.from_generated(model.generate(m, rng))
        ev = evaluate_soft(soft, scales)
        rates.append(ev.report.rates)
        phases += [PHASES[k] for k in np.argmax(soft.x_cat_phase, axis=1)]
        degrees += [int(d) for d in ev.a_tilde.sum(axis=1)]
    r = Rates.mean(rates)
    counts = {p.value: 0 for p in PHASES}
    for p in phases:
        counts[p.value] += 1
    return Snapshot(
        iteration=model.iteration, connected_rate=r.connected, success_rate=r.success,
        perfect_rate=r.perfect,
        phase_fractions={k: v / max(len(phases), 1) for k, v in counts.items()},
        bifurcation_fraction=bifurcation_fraction(degrees),
        phase_collapse=phase_collapse(phases, cfg.phase_collapse_threshold),
        topology_collapse=topology_collapse(degrees, cfg.topology_collapse_threshold),
    )


@dataclass
class GeneratedFeeder:
    index: int
    m: int
    rates: Rates
    guided_rates: Rates
    feeder: FeederGraph | None
    screen: ScreenResult | None
    accepted: bool
    lengths_regenerated: bool = False


def _length_only(res: ScreenResult) -> bool:
    return bool(res.reasons) and all(r.startswith("length") for r in res.reasons)


def generate_feeders(model: GanModel, count: int, m_values, seed, scales=None, normamps_table=None,
                     stats: EmpiricalStats | None = None, screen: bool = True,
                     regenerate: bool = True) -> list[GeneratedFeeder]:
    """Sample ``count`` soft graphs and keep one screened feeder per sample.

    For each sample the first guided candidate passing the empirical screen
    (or the first guided candidate when ``screen`` is off) is kept. With
    ``regenerate``, a candidate failing only the length check gets its
    lengths redrawn from the reference histogram and is screened again.
    """
    m_values = list(m_values)
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        m = int(m_values[int(rng.integers(len(m_values)))])
        soft = SoftGraph.from_generated(model.generate(m, rng))
        ev = evaluate_soft(soft, scales, normamps_table)
        chosen, verdict, redrawn = None, None, False
        for g in ev.guided:
            g = canonical(g)
            g = g.update_nodes(name=[f"L{i}" for i in range(g.m)])
            res = empirical_screen(g, stats) if screen else ScreenResult(True, [])
            if regenerate and _length_only(res) and stats is not None and stats.length_edges is not None:
                g = regenerate_lengths(g, stats, rng)
                res, redrawn = empirical_screen(g, stats), True
            if verdict is None:
                verdict = res
            if res.passed:
                chosen, verdict = g, res
                break
            redrawn = False
        out.append(GeneratedFeeder(k, m, ev.report.rates, ev.report.guided_rates, chosen, verdict,
                                   chosen is not None, redrawn))
    return out
