"""Symmetric quadrature rules on triangles (barycentric points, weights summing to 1)."""
import numpy as np

from .exceptions import InvalidParameterError


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _rule(degree):
    if degree <= 1:
        return [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    if degree == 2:
        return _orbit3(1 / 6, 1 / 3)
    if degree == 3:
        # Strang-Fix 6-point degree-3 rule; all weights positive
        pts = [(0.659027622374092, 0.231933368553031, 0.109039009072877)]
        a, b, c = pts[0]
        pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
        return pts, [1 / 6] * 6
    if degree == 4:
        p1, w1 = _orbit3(0.445948490915965, 0.223381589678011)
        p2, w2 = _orbit3(0.091576213509771, 0.109951743655322)
        return p1 + p2, w1 + w2
    if degree == 5:
        p1, w1 = _orbit3(0.470142064105115, 0.132394152788506)
        p2, w2 = _orbit3(0.101286507323456, 0.125939180544827)
        return [(1 / 3, 1 / 3, 1 / 3)] + p1 + p2, [0.225] + w1 + w2
    raise InvalidParameterError(f"no triangle rule of degree {degree} (available: 1-5)")


def triangle_rule(degree: int = 4):
    """Return ``(bary, weights)`` with ``bary`` of shape (q, 3); integrate as area * sum(w f)."""
    pts, w = _rule(int(degree))
    return np.array(pts, dtype=float), np.array(w, dtype=float)


def physical_points(corners, bary):
    """Map barycentric points into each triangle: (nt, 3, 2) x (q, 3) -> (nt, q, 2)."""
    return np.einsum("qk,tkd->tqd", bary, corners)


def integrate(f, corners, areas, degree=4):
    """Per-triangle integrals of a vectorised ``f(x, y)`` over the given triangles."""
    bary, w = triangle_rule(degree)
    pts = physical_points(corners, bary)
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, pts.shape[:2])
    return areas * (vals @ w)
