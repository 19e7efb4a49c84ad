"""Static SVG picture of a mapping, with the IR as a JSON sidecar."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .. import coord as C
from .result import MappingResult

CELL = 24
MARGIN = 10


class IoError(OSError):
    pass


def _center(chip: C.HICANNOnWafer, line: int) -> tuple[float, float]:
    # spread the lines of a chip a little so parallel routes stay visible
    off = (line % 16 - 7.5) / 16 * (CELL * 0.6)
    return MARGIN + chip.x * CELL + CELL / 2 + off, MARGIN + chip.y * CELL + CELL / 2 + off / 2


def render_svg(result: MappingResult) -> str:
    topo = C.TOPOLOGY
    width = 2 * MARGIN + topo.grid_width * CELL
    height = 2 * MARGIN + topo.grid_height * CELL
    counts = result.neurons_per_chip()
    peak = max(counts.values(), default=0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           "<style>.chip{fill:#f4f4f4;stroke:#999;stroke-width:0.5}"
           ".placed{stroke:#333}.route{fill:none;stroke:#c0392b;stroke-width:1.2;opacity:0.8}</style>",
           f"<title>{escape(C.format_short(C.Wafer(result.wafer)))}</title>"]
    for h in C.HICANNOnWafer.iter_all():
        x, y = MARGIN + h.x * CELL, MARGIN + h.y * CELL
        n = counts.get(h.enum, 0)
        name = C.format_short(h)
        if n:
            shade = 0.25 + 0.75 * n / peak
            out.append(f'<rect class="chip placed" x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'style="fill:#2e86c1;fill-opacity:{shade:.3f}"><title>{name}: {n} neurons</title></rect>')
        else:
            out.append(f'<rect class="chip" x="{x}" y="{y}" width="{CELL}" height="{CELL}">'
                       f'<title>{name}</title></rect>')
    for i, r in enumerate(result.routes):
        pts = [_center(line.outer, line.inner.enum) for line in r.path]
        text = " ".join(f"{px:.1f},{py:.1f}" for px, py in pts)
        label = f"route {i}: H{r.sender[0]} line {r.sender[1]} -> {C.format_short(r.target)}"
        out.append(f'<polyline class="route" points="{text}"><title>{escape(label)}</title></polyline>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_visualization(result: MappingResult, path) -> tuple[Path, Path]:
    """Write ``path`` (SVG) and ``path`` with a ``.json`` suffix (the IR); returns both paths."""
    svg_path = Path(path)
    json_path = svg_path.with_suffix(".json")
    try:
        svg_path.write_text(render_svg(result))
        json_path.write_text(result.to_json())
    except OSError as err:
        raise IoError(f"cannot write visualization to {svg_path}: {err}") from err
    return svg_path, json_path
