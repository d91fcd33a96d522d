"""Static SVG drawings of packed boxes.

2D boxes are drawn as-is (z up). 3D boxes get three orthographic views side
by side: front (x-z), side (y-z) and top (x-y). Every object rectangle carries
``data-index`` and ``data-view`` attributes so drawings can be checked
against the placements they came from.
"""

from __future__ import annotations

import colorsys
from pathlib import Path
from xml.sax.saxutils import escape

from .instance import atomic_write_text
from .placement import PackingResult

CELL = 24      # pixels per grid cell
MARGIN = 12
GAP = 24       # between views of one 3D box
LABEL_ROOM = 18


def object_color(index: int) -> str:
    hue = (index * 0.618033988749895) % 1.0
    r, g, b = colorsys.hls_to_rgb(hue, 0.62, 0.55)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


class _Canvas:
    def __init__(self, width: int, height: int, title: str):
        self.width, self.height = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f"<title>{escape(title)}</title>",
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def frame(self, x, y, w, h, view):
        self.parts.append(f'<rect class="box" data-view="{view}" x="{x}" y="{y}" width="{w}" height="{h}" '
                          f'fill="none" stroke="#000000" stroke-width="2"/>')

    def item(self, x, y, w, h, index, view):
        self.parts.append(
            f'<rect class="object" data-index="{index}" data-view="{view}" x="{x}" y="{y}" '
            f'width="{w}" height="{h}" fill="{object_color(index)}" stroke="#333333" stroke-width="1"/>')
        size = max(8, min(12, min(w, h) // 2))
        self.parts.append(f'<text x="{x + w // 2}" y="{y + h // 2 + size // 3}" font-family="monospace" '
                          f'font-size="{size}" text-anchor="middle">{index}</text>')

    def text(self, x, y, s):
        self.parts.append(f'<text x="{x}" y="{y}" font-family="monospace" font-size="12">{escape(s)}</text>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _view_rects(placements, view: str):
    """(u, v, du, dv, depth, index) per object for an orthographic view.

    ``v`` runs upward; depth is used for painter's ordering (drawn last = nearest).
    """
    out = []
    for p in placements:
        (x, y, z), (l, w, h) = p.position, p.dims
        if view == "front":      # looking along +y from y = 0
            out.append((x, z, l, h, -y, p.object_index))
        elif view == "side":     # looking along +x from x = 0
            out.append((y, z, w, h, -x, p.object_index))
        else:                    # top, looking down
            out.append((x, y, l, w, z + h, p.object_index))
    out.sort(key=lambda r: (r[4], r[5]))
    return out


def render_box(result: PackingResult, box_index: int) -> str:
    placements = result.box_contents(box_index)
    title = f"{result.id} box {box_index}"
    if len(result.box) == 2:
        L, H = result.box
        canvas = _Canvas(L * CELL + 2 * MARGIN, H * CELL + 2 * MARGIN + LABEL_ROOM, title)
        canvas.text(MARGIN, 14, title)
        top = MARGIN + LABEL_ROOM
        canvas.frame(MARGIN, top, L * CELL, H * CELL, "2d")
        for p in placements:
            (x, z), (l, h) = p.position, p.dims
            canvas.item(MARGIN + x * CELL, top + (H - z - h) * CELL, l * CELL, h * CELL, p.object_index, "2d")
        return canvas.svg()

    L, W, H = result.box
    views = [("front", L, H), ("side", W, H), ("top", L, W)]
    width = sum(u for _, u, _ in views) * CELL + GAP * (len(views) - 1) + 2 * MARGIN
    height = max(v for _, _, v in views) * CELL + 2 * MARGIN + 2 * LABEL_ROOM
    canvas = _Canvas(width, height, title)
    canvas.text(MARGIN, 14, title)
    left = MARGIN
    top = MARGIN + 2 * LABEL_ROOM
    for view, U, V in views:
        canvas.text(left, top - 6, view)
        canvas.frame(left, top, U * CELL, V * CELL, view)
        for u, v, du, dv, _, index in _view_rects(placements, view):
            canvas.item(left + u * CELL, top + (V - v - dv) * CELL, du * CELL, dv * CELL, index, view)
        left += U * CELL + GAP
    return canvas.svg()


def render_result(result: PackingResult, out_dir, stem: str = "result") -> list[Path]:
    """Write one SVG per box and return the paths."""
    if not result.placements:
        raise ValueError("nothing to render: result has no placements")
    out_dir = Path(out_dir)
    paths = []
    for b in range(result.boxes_used):
        path = out_dir / f"{stem}_box{b}.svg"
        atomic_write_text(path, render_box(result, b))
        paths.append(path)
    return paths
