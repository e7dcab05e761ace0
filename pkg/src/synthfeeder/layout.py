"""Pseudo-coordinate layout, SVG drawing and feeder-file export."""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass

from .graph import FeederGraph, Phase
from .ingest import RawFeederModel
from .reconstruct import node_to_edge

PX_PER_METER = 0.5
PHASE_STYLE = {3: ("#c0392b", 3.0), 2: ("#2471a3", 2.0), 1: ("#229954", 1.2)}


def branch_angles(k: int) -> list[float]:
    """Direction offsets for the ``k`` children of a bifurcation, best-ranked first.

    0, then +-pi/2, then pi/4, 3pi/4, -pi/4, -3pi/4, then the odd multiples
    of pi/8 (positive side first), and so on.
    """
    out = [0.0, math.pi / 2, -math.pi / 2]
    denom = 4
    while len(out) < k:
        odd = [j * math.pi / denom for j in range(1, denom, 2)]
        out += odd + [-a for a in odd]
        denom *= 2
    return out[:k]


@dataclass
class LayoutResult:
    coords: dict[str, tuple[float, float]]
    theta: dict[str, float]


def _tree(raw: RawFeederModel):
    starting: dict[str, list[int]] = {}
    fed = set()
    for i, d in enumerate(raw.devices):
        starting.setdefault(d.bus_from, []).append(i)
        if d.bus_to in fed or d.bus_to == raw.source_bus:
            raise ValueError(f"bus {d.bus_to!r} is fed more than once; topology is not radial")
        fed.add(d.bus_to)
    return starting


def compute_pseudo_coordinates(raw: RawFeederModel) -> LayoutResult:
    """Greedy straight-line layout from the source bus at the origin.

    At a bifurcation children are ranked by how many devices hang below
    them (more first, ties by device order); the first keeps the parent
    direction and the rest turn by :func:`branch_angles`.
    """
    starting = _tree(raw)
    devices = raw.devices

    below: dict[int, int] = {}
    order = []
    queue = deque(starting.get(raw.source_bus, []))
    seen = set()
    while queue:
        i = queue.popleft()
        if i in seen:
            raise ValueError("topology contains a loop")
        seen.add(i)
        order.append(i)
        queue.extend(starting.get(devices[i].bus_to, []))
    if len(order) != len(devices):
        raise ValueError(f"{len(devices) - len(order)} devices are not reachable from the source")
    for i in reversed(order):
        below[i] = sum(1 + below[j] for j in starting.get(devices[i].bus_to, []))

    coords = {raw.source_bus: (0.0, 0.0)}
    theta: dict[str, float] = {}
    heading = {raw.source_bus: 0.0}
    queue = deque([raw.source_bus])
    while queue:
        bus = queue.popleft()
        kids = sorted(starting.get(bus, []), key=lambda i: (-below[i], i))
        x, y = coords[bus]
        for i, delta in zip(kids, branch_angles(len(kids))):
            d = devices[i]
            ang = heading[bus] + delta
            theta[d.name] = ang
            coords[d.bus_to] = (x + d.length * math.cos(ang), y + d.length * math.sin(ang))
            heading[d.bus_to] = ang
            queue.append(d.bus_to)
    return LayoutResult(coords, theta)


def _as_raw(topology) -> RawFeederModel:
    return node_to_edge(topology) if isinstance(topology, FeederGraph) else topology


def emit_svg(topology, layout: LayoutResult | None = None, title: str = "") -> str:
    """Standalone SVG: one ``<line>`` per device styled by phase count, head bus circled."""
    raw = _as_raw(topology)
    layout = layout or compute_pseudo_coordinates(raw)
    for d in raw.devices:
        for bus in (d.bus_from, d.bus_to):
            if bus not in layout.coords:
                raise ValueError(f"layout has no coordinates for bus {bus!r}")
    xs = [x for x, _ in layout.coords.values()]
    ys = [-y for _, y in layout.coords.values()]
    pad = 20.0
    x0, y0 = min(xs) * PX_PER_METER - pad, min(ys) * PX_PER_METER - pad
    w = (max(xs) - min(xs)) * PX_PER_METER + 2 * pad
    h = (max(ys) - min(ys)) * PX_PER_METER + 2 * pad

    svg = ET.Element("svg", {"xmlns": "http://www.w3.org/2000/svg", "version": "1.1",
                             "width": f"{w:.1f}", "height": f"{h:.1f}",
                             "viewBox": f"{x0:.2f} {y0:.2f} {w:.2f} {h:.2f}"})
    if title:
        ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "rect", {"x": f"{x0:.2f}", "y": f"{y0:.2f}", "width": f"{w:.2f}",
                                "height": f"{h:.2f}", "fill": "white"})
    group = ET.SubElement(svg, "g", {"id": "devices", "stroke-linecap": "round"})
    for d in raw.devices:
        (xa, ya), (xb, yb) = layout.coords[d.bus_from], layout.coords[d.bus_to]
        colour, width = PHASE_STYLE[Phase(d.phase).count]
        ET.SubElement(group, "line", {
            "id": d.name, "class": f"phase-{Phase(d.phase).value}",
            "x1": f"{xa * PX_PER_METER:.3f}", "y1": f"{-ya * PX_PER_METER:.3f}",
            "x2": f"{xb * PX_PER_METER:.3f}", "y2": f"{-yb * PX_PER_METER:.3f}",
            "stroke": colour, "stroke-width": f"{width}"})
    ET.SubElement(svg, "circle", {"id": "head", "cx": "0", "cy": "0", "r": "5",
                                  "fill": "black"})
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def export_feeder_model(topology) -> str:
    """Feeder-file text for a graph or bus-edge model, head device first."""
    if isinstance(topology, FeederGraph):
        missing = []
        for n in topology.nodes:
            for f in ("length", "norm_amps"):
                v = getattr(n, f)
                if v is None or not math.isfinite(v):
                    missing.append(f"{n.name}.{f}")
            if n.phase is None:
                missing.append(f"{n.name}.phase")
        if missing:
            raise ValueError(f"incomplete attributes: {', '.join(missing)}")
    raw = _as_raw(topology)
    lines = [f"source {raw.source_bus}"]
    for d in raw.devices:
        line = (f"device {d.name} from={d.bus_from} to={d.bus_to} phase={Phase(d.phase).value} "
                f"length_m={_num(d.length)} normamps={_num(d.norm_amps)}")
        if d.xfmr_kva:
            line += f" xfmr_kva={_num(d.xfmr_kva)}"
        lines.append(line)
    return "\n".join(lines) + "\n"


_DSS_NODES = {"a": "1", "b": "2", "c": "3"}


def export_opendss(topology, circuit: str = "synthetic", base_kv: float = 12.47) -> str:
    """OpenDSS-flavoured script: one Line per device, one single-winding-pair
    Transformer per device carrying customer kVA."""
    raw = _as_raw(topology)
    out = ["Clear", f"New Circuit.{circuit} bus1={raw.source_bus} basekv={_num(base_kv)} phases=3"]
    for d in raw.devices:
        ph = Phase(d.phase).value
        nodes = ".".join(_DSS_NODES[c] for c in ph)
        out.append(f"New Line.{d.name} Bus1={d.bus_from}.{nodes} Bus2={d.bus_to}.{nodes} "
                   f"phases={len(ph)} Length={_num(d.length)} units=m normamps={_num(d.norm_amps)}")
        if d.xfmr_kva:
            out.append(f"New Transformer.T_{d.name} phases={len(ph)} windings=2 "
                       f"buses=[{d.bus_to}.{nodes} {d.bus_to}_lv.{nodes}] kvas=[{_num(d.xfmr_kva)} "
                       f"{_num(d.xfmr_kva)}]")
    out += [f"Set voltagebases=[{_num(base_kv)}]", "Calcvoltagebases"]
    return "\n".join(out) + "\n"
