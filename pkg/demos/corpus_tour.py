"""Load the bundled corpus, look at one feeder, lay it out and write it back.

Run:  python demos/corpus_tour.py [out_dir]
"""
import sys
from pathlib import Path

from synthfeeder.corpus import load_corpus
from synthfeeder.layout import compute_pseudo_coordinates, emit_svg, export_feeder_model
from synthfeeder.reconstruct import node_to_edge
from synthfeeder.validate import outdegree_fractions, phase_fractions

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

corpus = load_corpus()
sizes = [g.m for g in corpus]
print(f"{len(corpus)} feeders, {min(sizes)} to {max(sizes)} devices each")

g = max(corpus, key=lambda g: g.m)
print(f"largest feeder: {g.m} devices, deepest level {max(n.level for n in g.nodes)}")
for p, f in phase_fractions(g).items():
    print(f"  phase {p.value:>3}: {f:.2f}")
print("  out-degree:", {k: round(v, 2) for k, v in outdegree_fractions(g).items()})

# each device becomes a node; the far end of the longest path is the largest distance
far = max(g.nodes, key=lambda n: n.distance)
print(f"furthest device {far.name} sits {far.distance:.0f} m from the substation")

raw = node_to_edge(g)
layout = compute_pseudo_coordinates(raw)
(out / "largest.svg").write_text(emit_svg(raw, layout, title="largest corpus feeder"))
(out / "largest.feeder").write_text(export_feeder_model(g))
print(f"wrote {out / 'largest.svg'} and {out / 'largest.feeder'}")
