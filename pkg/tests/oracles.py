"""Reference computations that share no code with the package."""

from __future__ import annotations

import math


def det3(m):
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def cofactor_inverse(m):
    """3x3 inverse as adjugate / determinant."""
    d = det3(m)
    cof = [[0.0] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            rows = [r for r in range(3) if r != i]
            cols = [c for c in range(3) if c != j]
            minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]] - m[rows[0]][cols[1]] * m[rows[1]][cols[0]]
            cof[i][j] = (-1) ** (i + j) * minor
    return [[cof[j][i] / d for j in range(3)] for i in range(3)]


def quadratic_form_distance(x, c, inv):
    diff = [x[i] - c[i] for i in range(3)]
    q = sum(diff[i] * inv[i][j] * diff[j] for i in range(3) for j in range(3))
    return math.sqrt(max(q, 0.0))


def chi3_tail(d):
    """P(chi with 3 dof > d), closed form: 2*(1-Phi(d)) + sqrt(2/pi)*d*exp(-d^2/2)."""
    return math.erfc(d / math.sqrt(2)) + math.sqrt(2 / math.pi) * d * math.exp(-d * d / 2)


def knee_by_projection(ks, errors):
    """Index of the point farthest from the first-last chord, smallest on ties."""
    x0, y0, x1, y1 = ks[0], errors[0], ks[-1], errors[-1]
    ux, uy = x1 - x0, y1 - y0
    norm = math.hypot(ux, uy)
    ux, uy = ux / norm, uy / norm
    best, best_i = -1.0, 0
    for i, (x, y) in enumerate(zip(ks, errors)):
        px, py = x - x0, y - y0
        along = px * ux + py * uy
        perp = math.hypot(px - along * ux, py - along * uy)
        if perp > best + 1e-9:
            best, best_i = perp, i
    return ks[best_i]
