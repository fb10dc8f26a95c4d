"""Static SVG figures: projected sampling points and receptive-field summaries.

SVG is written by hand so that output bytes depend only on the numbers
being drawn.
"""
from xml.sax.saxutils import escape

import numpy as np

from .attention import DISTANCE_FNS
from .geometry import project_points

DEPTH_RADIUS = 60.0  # px * m; radius = DEPTH_RADIUS / depth


def _num(x):
    return f"{float(x):.3f}"


def query_color(index, count):
    hue = (360.0 * index / max(count, 1)) % 360.0
    return f"hsl({hue:.1f},80%,45%)"


def _document(width, height, body, title):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<title>{escape(title)}</title>\n')
    return head + "".join(body) + "</svg>\n"


def sampling_points_svg(points, camera, title=""):
    """One view's overlay; ``points`` is N x S x 3 in the frame's ego coordinates.

    Only points that land in the image are drawn. Closer points are larger.
    """
    n, s, _ = points.shape
    u, v, depth, hit = project_points(camera, points.reshape(n * s, 3))
    w, h = camera.image_width, camera.image_height
    body = [f'<rect x="0" y="0" width="{w}" height="{h}" fill="#202020"/>\n']
    for idx in np.flatnonzero(hit):
        q = idx // s
        body.append(
            f'<circle class="sample" data-query="{q}" data-point="{idx % s}" '
            f'data-depth="{_num(depth[idx])}" cx="{_num(u[idx])}" cy="{_num(v[idx])}" '
            f'r="{_num(DEPTH_RADIUS / depth[idx])}" fill="{query_color(q, n)}" '
            f'fill-opacity="0.8"/>\n')
    return _document(w, h, body, title)


def tau_bars_svg(class_means, class_counts, title="mean tau per class"):
    """Bar per class; classes without any selected query get an empty bar."""
    width, height, pad = 80 * max(len(class_means), 1) + 60, 240, 40
    finite = [m for m in class_means if m is not None]
    top = max(finite) if finite and max(finite) > 0 else 1.0
    scale = (height - 2 * pad) / top
    body = [f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" y2="{height - pad}" '
            f'stroke="black"/>\n']
    for k, (mean, count) in enumerate(zip(class_means, class_counts)):
        x = pad + 10 + 80 * k
        bar = 0.0 if mean is None else mean * scale
        label = "n/a" if mean is None else f"{mean:.3f}"
        body.append(
            f'<rect class="bar" data-class="{k}" data-mean="{label}" data-count="{count}" '
            f'x="{x}" y="{_num(height - pad - bar)}" width="50" height="{_num(bar)}" '
            f'fill="steelblue"/>\n'
            f'<text x="{x + 25}" y="{height - pad + 15}" text-anchor="middle" '
            f'font-size="11">class {k} (n={count})</text>\n'
            f'<text x="{x + 25}" y="{_num(height - pad - bar - 4)}" text-anchor="middle" '
            f'font-size="11">{label}</text>\n')
    return _document(width, height, body, title)


def tau_curves_svg(head_taus, distance_fn="linear", max_distance=30.0, samples=61,
                   title="attention falloff per head"):
    """exp(-tau * g(d)) over BEV distance, one polyline per head, sorted by tau."""
    g = DISTANCE_FNS[distance_fn]
    width, height, pad = 420, 260, 40
    d = np.linspace(0.0, max_distance, samples)
    body = [f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" y2="{height - pad}" '
            f'stroke="black"/>\n',
            f'<line x1="{pad}" y1="10" x2="{pad}" y2="{height - pad}" stroke="black"/>\n']
    order = sorted(range(len(head_taus)), key=lambda h: (head_taus[h], h))
    for rank, h in enumerate(order):
        y = np.exp(-head_taus[h] * g(d))
        xs = pad + d / max_distance * (width - pad - 10)
        ys = height - pad - y * (height - pad - 10)
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(xs, ys))
        body.append(
            f'<polyline class="curve" data-head="{h}" data-rank="{rank}" '
            f'data-tau="{head_taus[h]:.6f}" points="{pts}" fill="none" '
            f'stroke="{query_color(rank, len(order))}"/>\n')
    return _document(width, height, body, title)
