"""Convex geometry over a finite point set in the lifted loss space.

Hull membership and Caratheodory decompositions go through the simplex solver
in :mod:`metapersuasion.lp`; Euclidean projection onto the hull uses Wolfe's
minimum-norm-point algorithm.  Barrier domains (polytope log-barrier and the
unit-ball barrier) provide the local geometry used by bandit mirror descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, solve

__all__ = [
    "PointSet",
    "Decomposition",
    "HullMembership",
    "GeometryError",
    "BoundaryError",
    "membership",
    "project",
    "caratheodory",
    "facets_2d",
    "BarrierDomain",
    "barrier_eval",
    "bregman",
    "minkowski_gauge",
    "jacobi_eigh",
    "dikin_sample",
    "DikinSample",
]

MEMBER_TOL = 1e-8


class GeometryError(ValueError):
    """Invalid geometric input (dimension mismatch, degenerate hull, ...)."""


class BoundaryError(GeometryError):
    """A barrier was evaluated at or beyond the boundary of its domain."""


@dataclass
class PointSet:
    """Finite point set ``{z_j}`` in R^K whose convex hull is the decision set."""

    points: np.ndarray
    _fan: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise GeometryError("point set must be nonempty")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        self.points = pts

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.dim:
            raise GeometryError(f"expected a point in R^{self.dim}, got length {z.size}")
        return z

    def diameter(self) -> float:
        d = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())


@dataclass
class Decomposition:
    indices: np.ndarray
    weights: np.ndarray

    def point(self, ps: PointSet) -> np.ndarray:
        return self.weights @ ps.points[self.indices]

    def sample(self, rng: np.random.Generator) -> int:
        """Draw one point index with probability equal to its weight."""
        k = rng.choice(self.indices.size, p=self.weights / self.weights.sum())
        return int(self.indices[k])


@dataclass
class HullMembership:
    inside: bool
    weights: np.ndarray | None = None  # convex weights over all points when inside
    normal: np.ndarray | None = None  # separating hyperplane when outside
    offset: float | None = None  # normal . v <= offset < normal . z for all v

    def __bool__(self) -> bool:
        return self.inside


def membership(ps: PointSet, z) -> HullMembership:
    """Decide ``z in conv(ps)`` by solving the feasibility LP over weights."""
    z = ps._check(z)
    n = len(ps)
    A = np.vstack([np.ones(n), ps.points.T])
    lp = LinearProgram(np.zeros(n), A, ["="] * (ps.dim + 1), np.concatenate([[1.0], z]))
    sol = solve(lp)
    if sol.optimal:
        lam = np.maximum(sol.x, 0.0)
        lam /= lam.sum()
        if np.abs(lam @ ps.points - z).max() <= MEMBER_TOL:
            return HullMembership(True, weights=lam)
    # the nearest hull point gives a separating hyperplane
    zp = project(ps, z)
    normal = z - zp
    if np.linalg.norm(normal) <= MEMBER_TOL:
        w = _weights_for(ps, zp)
        return HullMembership(True, weights=w)
    offset = float(normal @ zp)
    return HullMembership(False, normal=normal, offset=offset)


def _weights_for(ps: PointSet, z: np.ndarray) -> np.ndarray:
    lam = np.zeros(len(ps))
    dec = _wolfe(ps.points - z)[1]
    lam[dec[0]] = dec[1]
    return lam


# ---------------------------------------------------------------------------
# Wolfe's minimum-norm-point algorithm


def _affine_min(P: np.ndarray) -> np.ndarray:
    """Weights (summing to one) of the min-norm point of aff(rows of P)."""
    k = P.shape[0]
    if k == 1:
        return np.ones(1)
    G = P @ P.T
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = G
    M[:k, k] = 1.0
    M[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:k]


def _wolfe(P: np.ndarray, tol: float = 1e-9, max_cycles: int | None = None):
    """Minimum-norm point of conv(rows of P).

    Returns ``(x, (indices, weights))`` with ``x = weights @ P[indices]``.
    """
    n, K = P.shape
    if max_cycles is None:
        max_cycles = 10 * n
    norms = (P**2).sum(1)
    S = [int(np.argmin(norms))]
    lam = np.ones(1)
    x = P[S[0]].copy()
    scale = max(1.0, float(norms.max()))
    for _ in range(max_cycles):
        # major cycle: look for a point improving on x
        vals = P @ x
        j = int(np.argmin(vals))
        if x @ x - vals[j] <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:  # minor cycles
            PS = P[S]
            alpha = _affine_min(PS)
            if np.all(alpha > 1e-14):
                lam = alpha
                x = lam @ PS
                break
            # step from lam towards alpha until a weight hits zero
            mask = alpha <= 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(mask & (lam - alpha > 0), lam / (lam - alpha), np.inf)
            theta = min(1.0, float(ratios.min()))
            lam = (1 - theta) * lam + theta * alpha
            keep = lam > 1e-14
            if keep.all():
                keep[int(np.argmin(lam))] = False
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam /= lam.sum()
            x = lam @ P[S]
    idx = np.array(S, dtype=int)
    return x, (idx, lam)


def project(ps: PointSet, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``conv(ps)``."""
    x = ps._check(x)
    y, _ = _wolfe(ps.points - x)
    return x + y


# ---------------------------------------------------------------------------
# Caratheodory decomposition


def _reduce_support(pts: np.ndarray, idx: np.ndarray, lam: np.ndarray):
    """Drop points until the support is affinely independent."""
    while idx.size > 1:
        M = np.vstack([pts[idx].T, np.ones(idx.size)])
        _, s, vt = np.linalg.svd(M)
        rank = int((s > 1e-10 * max(1.0, s[0])).sum())
        if rank == idx.size:
            break
        v = vt[-1]
        if v.max() <= 0:
            v = -v
        pos = np.flatnonzero(v > 1e-14)
        ratios = lam[pos] / v[pos]
        drop = int(pos[np.argmin(ratios)])
        lam = lam - ratios.min() * v
        keep = lam > 1e-14
        keep[drop] = False
        idx, lam = idx[keep], np.maximum(lam[keep], 0.0)
        lam /= lam.sum()
    return idx, lam


def _polish(pts: np.ndarray, idx: np.ndarray, lam: np.ndarray, z: np.ndarray) -> np.ndarray:
    M = np.vstack([pts[idx].T, np.ones(idx.size)])
    rhs = np.concatenate([z, [1.0]])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    if np.all(sol >= -1e-12):
        sol = np.maximum(sol, 0.0)
        sol /= sol.sum()
        if np.abs(sol @ pts[idx] - z).max() <= np.abs(lam @ pts[idx] - z).max():
            return sol
    return lam


def caratheodory(ps: PointSet, z) -> Decomposition:
    """Write ``z`` as a convex combination of at most ``K + 1`` points of ``ps``."""
    z = ps._check(z)
    fast = _fan_decompose(ps, z)
    if fast is not None:
        return fast
    mem = membership(ps, z)
    if not mem.inside:
        raise GeometryError("target point lies outside the convex hull")
    lam = mem.weights
    idx = np.flatnonzero(lam > 1e-14)
    idx, w = _reduce_support(ps.points, idx, lam[idx])
    w = _polish(ps.points, idx, w, z)
    order = np.argsort(idx)
    return Decomposition(idx[order], w[order])


# ---------------------------------------------------------------------------
# planar hulls


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_2d(points: np.ndarray) -> np.ndarray:
    """Indices of hull vertices in counter-clockwise order (monotone chain)."""
    order = np.lexsort((points[:, 1], points[:, 0]))
    uniq = []
    for i in order:
        if uniq and np.allclose(points[uniq[-1]], points[i], atol=1e-12, rtol=0):
            continue
        uniq.append(int(i))
    if len(uniq) < 3:
        raise GeometryError("degenerate hull: fewer than three distinct points")

    def chain(seq):
        out: list[int] = []
        for i in seq:
            while len(out) >= 2 and _cross(points[out[-2]], points[out[-1]], points[i]) <= 1e-12:
                out.pop()
            out.append(i)
        return out

    lower = chain(uniq)
    upper = chain(uniq[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise GeometryError("degenerate hull: all points are collinear")
    return np.array(hull, dtype=int)


def facets_2d(ps: PointSet) -> tuple[np.ndarray, np.ndarray]:
    """H-representation ``A z <= b`` (unit normals) of a planar hull."""
    if ps.dim != 2:
        raise GeometryError("facet enumeration is only implemented for K = 2")
    hull = _hull_2d(ps.points)
    V = ps.points[hull]
    E = np.roll(V, -1, axis=0) - V
    normals = np.column_stack([E[:, 1], -E[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = (normals * V).sum(1)
    return normals, offsets


def hull_vertices(ps: PointSet) -> np.ndarray:
    return _hull_2d(ps.points) if ps.dim == 2 else np.arange(len(ps))


def _fan_decompose(ps: PointSet, z: np.ndarray) -> Decomposition | None:
    """Planar fast path: locate ``z`` in a fan triangulation of the hull."""
    if ps.dim != 2:
        return None
    if ps._fan is None:
        try:
            hull = _hull_2d(ps.points)
        except GeometryError:
            ps._fan = ()
            return None
        V = ps.points[hull]
        a, b, c = V[0], V[1:-1], V[2:]
        ps._fan = (hull, a, b, c)
    if not ps._fan:
        return None
    hull, a, b, c = ps._fan
    # barycentric coordinates of z in every fan triangle (a, b_i, c_i)
    v0 = b - a
    v1 = c - a
    v2 = z - a
    den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    l1 = (v2[0] * v1[:, 1] - v1[:, 0] * v2[1]) / den
    l2 = (v0[:, 0] * v2[1] - v2[0] * v0[:, 1]) / den
    l0 = 1.0 - l1 - l2
    lo = np.minimum(np.minimum(l0, l1), l2)
    k = int(np.argmax(lo))
    if lo[k] < -1e-9:
        return None
    w = np.maximum(np.array([l0[k], l1[k], l2[k]]), 0.0)
    w /= w.sum()
    idx = np.array([hull[0], hull[k + 1], hull[k + 2]])
    keep = w > 1e-15
    idx, w = idx[keep], w[keep]
    if np.abs(w @ ps.points[idx] - z).max() > 1e-9:
        return None
    order = np.argsort(idx)
    return Decomposition(idx[order], w[order])


# ---------------------------------------------------------------------------
# barriers


@dataclass
class BarrierDomain:
    """Domain of a self-concordant barrier.

    ``kind="polytope"`` uses ``R(z) = -sum log(b_i - a_i.z)`` on ``A z <= b``;
    ``kind="ball"`` uses ``R(z) = -log(1 - |z|^2)`` on the closed unit ball.
    ``offset``/``scale`` record an affine map ``z = offset + scale * z'`` from
    ball coordinates ``z'`` back to the original loss space.
    """

    kind: str
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    dim: int = 0
    offset: np.ndarray | None = None
    scale: float = 1.0
    _center: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "polytope":
            self.A = np.asarray(self.A, float)
            self.b = np.asarray(self.b, float)
            self.dim = self.A.shape[1]
        elif self.kind == "ball":
            if self.dim <= 0:
                raise GeometryError("ball domain needs a positive dimension")
            if self.offset is None:
                self.offset = np.zeros(self.dim)
        else:
            raise GeometryError(f"unknown barrier kind {self.kind!r}")

    @classmethod
    def polytope(cls, A, b) -> "BarrierDomain":
        dom = cls("polytope", A=A, b=b)
        dom.center  # fail early on an empty interior
        return dom

    @classmethod
    def from_points(cls, ps: PointSet) -> "BarrierDomain":
        A, b = facets_2d(ps)
        return cls.polytope(A, b)

    @classmethod
    def unit_ball(cls, dim: int) -> "BarrierDomain":
        return cls("ball", dim=dim)

    @classmethod
    def ball_around(cls, ps: PointSet) -> "BarrierDomain":
        """Unit ball in normalised coordinates enclosing ``conv(ps)``."""
        c = ps.points.mean(0)
        r = 1.05 * float(np.sqrt(((ps.points - c) ** 2).sum(1)).max())
        if r <= 0:
            raise GeometryError("cannot normalise a single point")
        return cls("ball", dim=ps.dim, offset=c, scale=r)

    @property
    def theta(self) -> float:
        """Self-concordance parameter: facet count, or 1 for the ball."""
        return float(self.A.shape[0]) if self.kind == "polytope" else 1.0

    def to_ball(self, z) -> np.ndarray:
        return (np.asarray(z, float) - self.offset) / self.scale

    def from_ball(self, z) -> np.ndarray:
        return self.offset + self.scale * np.asarray(z, float)

    def slack(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        if self.kind == "polytope":
            return self.b - self.A @ z
        return np.array([1.0 - z @ z])

    def is_interior(self, z, tol: float = 1e-12) -> bool:
        return bool(np.all(self.slack(z) > tol))

    @property
    def center(self) -> np.ndarray:
        """Analytic center, the minimiser of the barrier."""
        if self._center is None:
            if self.kind == "ball":
                self._center = np.zeros(self.dim)
            else:
                self._center = _analytic_center(self.A, self.b)
        return self._center


def _analytic_center(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # phase one: a strictly interior start from the Chebyshev-like LP
    K = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    lp = LinearProgram(
        np.concatenate([np.zeros(K), [-1.0]]),
        np.column_stack([A, norms]),
        ["<="] * A.shape[0],
        b,
        lower=np.concatenate([np.full(K, -np.inf), [0.0]]),
        upper=np.concatenate([np.full(K, np.inf), [1.0]]),
    )
    sol = solve(lp)
    if not sol.optimal or sol.x[-1] <= 1e-12:
        raise GeometryError("polytope has an empty interior")
    z = sol.x[:K]
    for _ in range(200):
        s = b - A @ z
        g = A.T @ (1.0 / s)
        H = (A.T * (1.0 / s**2)) @ A
        step = np.linalg.solve(H, -g)
        dec = float(np.sqrt(max(-g @ step, 0.0)))
        if dec < 1e-12:
            break
        t = 1.0 / (1.0 + dec) if dec > 0.25 else 1.0
        while np.any(b - A @ (z + t * step) <= 0):
            t *= 0.5
        z = z + t * step
    return z


def barrier_eval(dom: BarrierDomain, z) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of the domain's barrier at ``z``."""
    z = np.asarray(z, float).ravel()
    if dom.kind == "polytope":
        s = dom.b - dom.A @ z
        if np.any(s <= 1e-12):
            raise BoundaryError("point is on or outside the polytope boundary")
        inv = 1.0 / s
        val = -float(np.log(s).sum())
        grad = dom.A.T @ inv
        hess = (dom.A.T * inv**2) @ dom.A
        return val, grad, hess
    r2 = float(z @ z)
    gap = 1.0 - r2
    if gap <= 1e-12:
        raise BoundaryError("point is on or outside the unit ball")
    val = 0.0 - float(np.log(gap))
    grad = 2.0 * z / gap
    hess = 2.0 * np.eye(z.size) / gap + 4.0 * np.outer(z, z) / gap**2
    return val, grad, hess


def bregman(dom: BarrierDomain, x, y) -> float:
    """Barrier Bregman divergence ``D_R(x || y)``."""
    rx, _, _ = barrier_eval(dom, x)
    ry, gy, _ = barrier_eval(dom, y)
    return rx - ry - float(gy @ (np.asarray(x, float) - np.asarray(y, float)))


def minkowski_gauge(dom: BarrierDomain, anchor, z) -> float:
    """``inf{lam > 0 : anchor + (z - anchor) / lam in domain}``."""
    z1 = np.asarray(anchor, float)
    d = np.asarray(z, float) - z1
    if not np.any(d):
        return 0.0
    if dom.kind == "polytope":
        s = dom.b - dom.A @ z1
        if np.any(s <= 0):
            raise GeometryError("gauge anchor must be strictly interior")
        return float(max(0.0, np.max((dom.A @ d) / s)))
    # largest t with |z1 + t d| = 1
    a = float(d @ d)
    bq = float(z1 @ d)
    c = float(z1 @ z1) - 1.0
    if c >= 0:
        raise GeometryError("gauge anchor must be strictly interior")
    t = (-bq + np.sqrt(bq * bq - a * c)) / a
    return float(1.0 / t)


def jacobi_eigh(H: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` with eigenvectors in the columns.
    """
    A = np.array(H, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(1.0, float(np.abs(A).max()))
    for _ in range(max_sweeps):
        off = np.sqrt(max(float((A**2).sum() - (np.diag(A) ** 2).sum()), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                J = np.eye(n)
                J[p, p] = c
                J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    return np.diag(A).copy(), V


@dataclass
class DikinSample:
    y: np.ndarray
    axis: int
    sign: int
    eigenvalue: float
    eigenvector: np.ndarray


def dikin_sample(dom: BarrierDomain, z, rng: np.random.Generator) -> DikinSample:
    """Step to a random endpoint of a principal axis of the Dikin ellipsoid."""
    z = np.asarray(z, float)
    _, _, H = barrier_eval(dom, z)
    vals, vecs = jacobi_eigh(H)
    if np.any(vals <= 0):
        raise BoundaryError("barrier Hessian is not positive definite")
    j = int(rng.integers(vals.size))
    eps = 1 if rng.random() < 0.5 else -1
    e = vecs[:, j]
    y = z + eps * e / np.sqrt(vals[j])
    return DikinSample(y, j, eps, float(vals[j]), e)
