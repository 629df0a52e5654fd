"""Figures for simulation runs.

:func:`phase_svg` writes a standalone SVG by hand so its structure is fixed:
shaded ``<polygon>`` elements for the unsafe parts (ids ``unsafe-part-<j>``)
and the O-inf slice (id ``oinf``), a single ``<polyline id="trajectory">``,
and ``start``/``target`` markers.  The report figures written next to a
simulation CSV go through matplotlib (:func:`report_figures`).
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .polytope import PolyUnion, Polytope

WIDTH, HEIGHT, MARGIN = 640, 480, 56


def projected_outline(P: Polytope, axes=(0, 1)) -> np.ndarray | None:
    """Counter-clockwise outline of the projection of a bounded ``P`` onto two coordinates."""
    if P.is_empty() or not P.is_bounded():
        return None
    V = P.vertices()[:, list(axes)]
    if len(V) < 3:
        return None
    try:
        h = ConvexHull(V)
    except QhullError:
        return None
    return V[h.vertices]


def _clip(outline: np.ndarray, lo, hi) -> np.ndarray | None:
    """Intersect a convex polygon with the view box."""
    h = ConvexHull(outline)
    P = Polytope(h.equations[:, :2], -h.equations[:, 2]).intersect(Polytope.from_box(lo, hi))
    if not P.has_interior():
        return None
    V = P.vertices()
    c = V.mean(axis=0)
    return V[np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))]


def view_box(points, outlines=(), pad: float = 0.12):
    """Trajectory extent, widened by small unsafe parts so obstacles stay in frame."""
    pts = np.asarray(points, dtype=float)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1.0)
    near_lo, near_hi = lo - span, hi + span
    for O in outlines:
        olo, ohi = O.min(axis=0), O.max(axis=0)
        if np.all(olo >= near_lo) and np.all(ohi <= near_hi):
            lo, hi = np.minimum(lo, olo), np.maximum(hi, ohi)
    w = np.maximum(hi - lo, 1.0)
    return lo - pad * w, hi + pad * w


class _Frame:
    def __init__(self, lo, hi):
        self.lo, self.hi = np.asarray(lo, float), np.asarray(hi, float)
        self.sx = (WIDTH - 2 * MARGIN) / (self.hi[0] - self.lo[0])
        self.sy = (HEIGHT - 2 * MARGIN) / (self.hi[1] - self.lo[1])

    def __call__(self, P) -> np.ndarray:
        P = np.atleast_2d(P)
        return np.column_stack([MARGIN + (P[:, 0] - self.lo[0]) * self.sx,
                                HEIGHT - MARGIN - (P[:, 1] - self.lo[1]) * self.sy])

    def points(self, P) -> str:
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in self(P))


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def phase_svg(x, unsafe: PolyUnion | None = None, oinf: Polytope | None = None,
              axes=(0, 1), target=None, labels=None, title=None) -> str:
    """Render the state-plane picture as SVG text."""
    x = np.asarray(x, dtype=float)
    i, j = axes
    path = x[:, [i, j]]
    path = path[np.all(np.isfinite(path), axis=1)]
    shapes = []
    if unsafe is not None:
        for k, P in enumerate(unsafe.parts):
            O = projected_outline(P, axes)
            if O is not None:
                shapes.append((f"unsafe-part-{k}", O))
    oinf_outline = projected_outline(oinf, axes) if oinf is not None else None
    extra = [path] if target is None else [path, np.atleast_2d(target)]
    lo, hi = view_box(np.vstack(extra), [O for _, O in shapes])
    F = _Frame(lo, hi)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')
    for gid, O in shapes:
        C = _clip(O, lo, hi)
        if C is not None:
            out.append(f'<polygon id="{gid}" class="unsafe" points="{F.points(C)}" '
                       f'fill="#d62728" fill-opacity="0.3" stroke="none"/>')
    if oinf_outline is not None:
        C = _clip(oinf_outline, lo, hi)
        if C is not None:
            out.append(f'<polygon id="oinf" class="oinf" points="{F.points(C)}" '
                       f'fill="#9467bd" fill-opacity="0.25" stroke="#9467bd"/>')
    out.append(f'<polyline id="trajectory" points="{F.points(path)}" fill="none" '
               f'stroke="#2ca02c" stroke-width="1.5" stroke-dasharray="6,3"/>')
    sx, sy = F(path[0])[0]
    out.append(f'<rect id="start" x="{sx - 4:.2f}" y="{sy - 4:.2f}" width="8" height="8" fill="#d62728"/>')
    if target is not None:
        tx, ty = F(np.asarray(target, dtype=float))[0]
        out.append(f'<path id="target" d="M {tx:.2f} {ty - 6:.2f} L {tx + 6:.2f} {ty + 5:.2f} '
                   f'L {tx - 6:.2f} {ty + 5:.2f} Z" fill="#2ca02c"/>')
    # axes frame and ticks
    x0, y0 = MARGIN, HEIGHT - MARGIN
    x1, y1 = WIDTH - MARGIN, MARGIN
    out.append(f'<path id="frame" d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" fill="none" stroke="black"/>')
    for t in _ticks(lo[0], hi[0]):
        px = F(np.array([t, lo[1]]))[0, 0]
        out.append(f'<text x="{px:.2f}" y="{y0 + 16}" text-anchor="middle" font-size="11">{t:.3g}</text>')
    for t in _ticks(lo[1], hi[1]):
        py = F(np.array([lo[0], t]))[0, 1]
        out.append(f'<text x="{x0 - 6}" y="{py + 4:.2f}" text-anchor="end" font-size="11">{t:.3g}</text>')
    labels = labels or (f"x_{i + 1}", f"x_{j + 1}")
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="13">'
               f'{escape(labels[0])}</text>')
    out.append(f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 16 {HEIGHT / 2})">{escape(labels[1])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_figures(traj, stem, unsafe: PolyUnion | None = None, axes=(0, 1), target=None,
                   title=None) -> list[str]:
    """State-plane and control-history PNGs next to a trajectory CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Polygon as PolygonPatch

    paths = []
    x = traj.x
    i, j = axes
    fig, ax = plt.subplots(figsize=(6, 4.5))
    shapes = []
    if unsafe is not None:
        shapes = [O for O in (projected_outline(P, axes) for P in unsafe.parts) if O is not None]
    lo, hi = view_box(x[:, [i, j]] if target is None else np.vstack([x[:, [i, j]], target]), shapes)
    for O in shapes:
        ax.add_patch(PolygonPatch(O, closed=True, fc="tab:red", ec="none", alpha=0.3))
    ax.plot(x[:, i], x[:, j], "-.", color="tab:green", marker=".", ms=3, label="trajectory")
    ax.plot(x[0, i], x[0, j], "s", color="tab:red", label="start")
    if target is not None:
        ax.plot(target[0], target[1], "^", color="tab:green", ms=8, label="target")
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_xlabel(f"x_{i + 1}")
    ax.set_ylabel(f"x_{j + 1}")
    ax.legend(loc="best", fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    p = f"{stem}_phase.png"
    fig.savefig(p, metadata={"Software": None})
    plt.close(fig)
    paths.append(p)

    m = traj.u_app.shape[1]
    fig, axs = plt.subplots(m, 1, figsize=(6, 2.2 * m + 0.8), squeeze=False)
    k = traj.k
    for c in range(m):
        ax = axs[c, 0]
        ax.plot(k, traj.u_nom[:, c], ":", color="tab:green", label="nominal")
        if traj.u_psi is not None:
            ax.plot(k, traj.u_psi[:, c], "--", color="tab:red", label="safe mode")
        ax.plot(k, traj.u_app[:, c], "-", color="tab:blue", label="applied")
        ax.set_ylabel(f"u_{c + 1}")
        ax.legend(loc="best", fontsize="small")
    axs[-1, 0].set_xlabel("k")
    if title:
        axs[0, 0].set_title(title)
    fig.tight_layout()
    p = f"{stem}_controls.png"
    fig.savefig(p, metadata={"Software": None})
    plt.close(fig)
    paths.append(p)
    return paths
