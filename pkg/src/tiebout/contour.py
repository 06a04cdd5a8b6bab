"""Zero-contour extraction on 2-d node grids (marching squares).

Node values equal to zero are treated as positive, which makes level sets
that run exactly along grid lines come out as degenerate segments instead of
disappearing; the indifference loci need that behavior in the tangent case.
"""

from __future__ import annotations

import numpy as np


def _edge_point(p1, p2, v1, v2):
    if v1 == v2:
        t = 0.5
    else:
        t = v1 / (v1 - v2)
    t = min(max(t, 0.0), 1.0)
    return (p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1]))


def marching_squares(values: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                     cell_mask: np.ndarray | None = None):
    """Segments of the zero level set of ``values`` sampled at nodes (xs x ys).

    values[a, b] is the field at (xs[a], ys[b]). ``cell_mask`` (shape
    (len(xs)-1, len(ys)-1)) restricts extraction to selected cells. Returns a
    list of ((x1, y1), (x2, y2)) segments.
    """
    seen = set()
    segments = []
    pos = values >= 0.0
    for a in range(len(xs) - 1):
        for b in range(len(ys) - 1):
            if cell_mask is not None and not cell_mask[a, b]:
                continue
            corners = ((a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1))
            signs = [pos[c] for c in corners]
            if all(signs) or not any(signs):
                continue
            pts = [(xs[c[0]], ys[c[1]]) for c in corners]
            vals = [values[c] for c in corners]
            crossings = []
            for e in range(4):
                e2 = (e + 1) % 4
                if signs[e] != signs[e2]:
                    crossings.append((e, _edge_point(pts[e], pts[e2], vals[e], vals[e2])))
            if len(crossings) == 2:
                pairs = [(crossings[0][1], crossings[1][1])]
            elif len(crossings) == 4:
                # saddle cell: split by the sign of the center value
                center = sum(vals) / 4.0
                if (center >= 0.0) == signs[0]:
                    pairs = [(crossings[0][1], crossings[3][1]),
                             (crossings[1][1], crossings[2][1])]
                else:
                    pairs = [(crossings[0][1], crossings[1][1]),
                             (crossings[2][1], crossings[3][1])]
            else:
                continue
            for p, q in pairs:
                if p == q:
                    continue
                key = (round(p[0], 12), round(p[1], 12), round(q[0], 12), round(q[1], 12))
                rkey = key[2:] + key[:2]
                if key in seen or rkey in seen:
                    continue
                seen.add(key)
                segments.append((p, q))
    return segments


def chain_segments(segments, tol: float = 1e-9):
    """Join shared-endpoint segments into ordered polylines.

    Returns a list of (V, 2) vertex arrays. Open chains start at degree-one
    endpoints; leftovers (closed loops) are walked from an arbitrary start.
    """
    if not segments:
        return []

    def key(p):
        return (round(p[0] / tol), round(p[1] / tol))

    adjacency = {}
    for idx, (p, q) in enumerate(segments):
        adjacency.setdefault(key(p), []).append((idx, p, q))
        adjacency.setdefault(key(q), []).append((idx, q, p))

    used = [False] * len(segments)
    chains = []

    def walk(start_idx, start_pt, next_pt):
        used[start_idx] = True
        chain = [start_pt, next_pt]
        while True:
            candidates = [c for c in adjacency.get(key(chain[-1]), []) if not used[c[0]]]
            if not candidates:
                break
            idx, p, q = candidates[0]
            used[idx] = True
            chain.append(q)
        return np.asarray(chain, dtype=float)

    endpoints = sorted(adjacency.keys())
    for k in endpoints:
        entries = [c for c in adjacency[k] if not used[c[0]]]
        if len([c for c in adjacency[k]]) == 1 and entries:
            idx, p, q = entries[0]
            chains.append(walk(idx, p, q))
    for idx, (p, q) in enumerate(segments):
        if not used[idx]:
            chains.append(walk(idx, p, q))
    return chains
