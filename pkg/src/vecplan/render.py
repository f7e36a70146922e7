"""Deterministic SVG drawing of a floorplan document."""

from __future__ import annotations

from .core import Floorplan

# fixed fill per room type index; cycles for custom vocabularies
PALETTE = ("#f4c27a", "#8fc1e3", "#b7d7a8", "#f29e8e", "#d5a6e6", "#c9c9c9")
BOUNDARY_STROKE = "#222222"
DOOR_STROKE = "#d62728"


def _fmt(v: float) -> str:
    return f"{v:g}"


def render_svg(fp: Floorplan, scale: int = 8, margin: int = 8) -> str:
    """SVG text: one filled polygon per room, one boundary outline, one door tick.

    Plan y grows upward; SVG y grows downward, so y is flipped.
    """
    size = fp.grid_size
    px = size * scale + 2 * margin

    def pt(x, y):
        return f"{_fmt(margin + x * scale)},{_fmt(margin + (size - y) * scale)}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{px}" viewBox="0 0 {px} {px}">',
        f'<rect x="0" y="0" width="{px}" height="{px}" fill="#ffffff"/>',
    ]
    for i, room in enumerate(fp.rooms):
        pts = " ".join(pt(x, y) for x, y in room.polygon.vertices)
        fill = PALETTE[room.type % len(PALETTE)]
        name = fp.room_types[room.type] if room.type < len(fp.room_types) else str(room.type)
        out.append(f'<polygon class="room" data-index="{i}" data-type="{name}" points="{pts}" fill="{fill}" '
                   f'stroke="#555555" stroke-width="1"/>')
    bpts = " ".join(pt(x, y) for x, y in fp.boundary.vertices)
    out.append(f'<polygon class="boundary" points="{bpts}" fill="none" stroke="{BOUNDARY_STROKE}" stroke-width="3"/>')
    (x0, y0), (x1, y1) = fp.boundary.vertices[0], fp.boundary.vertices[1]
    out.append(f'<polyline class="door" points="{pt(x0, y0)} {pt(x1, y1)}" fill="none" stroke="{DOOR_STROKE}" '
               f'stroke-width="5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
