"""Obstacle sets built from simple primitives.

A :class:`SetSpec` is a finite union of primitives.  Every primitive knows its
exact Euclidean distance, how to transform under rigid motions and the
transverse contraction, how to cut its boundary (or itself, when it has zero
thickness) into quadrature cells, and how to test intersection with an
axis-aligned box for the covering routine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError

TOL = 1e-12


def _vec(x, d=None):
    a = np.asarray(x, dtype=float)
    if a.ndim != 1 or (d is not None and a.shape[0] != d):
        raise DomainError(f"expected a vector of length {d}, got shape {a.shape}")
    return a


def _tup(a):
    return tuple(float(v) for v in np.asarray(a, dtype=float).ravel())


def _points(P, d):
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.shape[-1] != d:
        raise DomainError(f"points have dimension {P.shape[-1]}, set has dimension {d}")
    return P


def _segment_distance(P, a, u):
    """Distance from points ``P`` to segments ``a + s u``, ``s`` in [0, 1] (broadcasting)."""
    w = P - a
    uu = np.sum(u * u, axis=-1)
    s = np.clip(np.sum(w * u, axis=-1) / np.where(uu > 0, uu, 1.0), 0.0, 1.0)
    return np.linalg.norm(w - s[..., None] * u, axis=-1)


def _parallelogram_distance(P, a, u, v):
    """Distance from points to planar parallelograms ``a + s u + t v`` in 3-D."""
    w = P - a
    uu = np.sum(u * u, -1)
    vv = np.sum(v * v, -1)
    uv = np.sum(u * v, -1)
    wu = np.sum(w * u, -1)
    wv = np.sum(w * v, -1)
    det = uu * vv - uv * uv
    s = (vv * wu - uv * wv) / det
    t = (uu * wv - uv * wu) / det
    n = np.cross(u, v)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    inside = (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    perp = np.abs(np.sum(w * n, -1))
    edges = np.minimum.reduce([
        _segment_distance(P, a, u),
        _segment_distance(P, a, v),
        _segment_distance(P, a + u, v),
        _segment_distance(P, a + v, u),
    ])
    return np.where(inside, perp, edges)


def _angle_wrap(a):
    return np.mod(a, 2 * np.pi)


def rotation_to_axis(theta) -> np.ndarray:
    """Proper rotation ``R`` (rows orthonormal) with ``R @ theta = e1``."""
    theta = np.asarray(theta, dtype=float)
    theta = theta / np.linalg.norm(theta)
    d = theta.size
    if d == 2:
        c, s = theta
        return np.array([[c, s], [-s, c]])
    basis = [theta]
    for e in np.eye(d)[np.argsort(np.abs(theta))]:
        v = e - sum((e @ b) * b for b in basis)
        if np.linalg.norm(v) > 1e-8:
            basis.append(v / np.linalg.norm(v))
        if len(basis) == d:
            break
    R = np.array(basis)
    if np.linalg.det(R) < 0:
        R[-1] *= -1
    return R


@dataclass(frozen=True)
class Cells:
    """Quadrature cells on a primitive: centre, size, and orientation vector.

    ``frame`` holds the unit normal of 2-D cells (surfaces in 3-D) or the unit
    tangent of 1-D cells (curves in 2-D).
    """

    nodes: np.ndarray
    sizes: np.ndarray
    frame: np.ndarray
    cell_dim: int

    @staticmethod
    def concat(parts, d, cell_dim):
        parts = [p for p in parts if len(p.nodes)]
        if not parts:
            z = np.zeros((0, d))
            return Cells(z, np.zeros(0), z, cell_dim)
        return Cells(
            np.concatenate([p.nodes for p in parts]),
            np.concatenate([p.sizes for p in parts]),
            np.concatenate([p.frame for p in parts]),
            cell_dim,
        )


def _segment_cells(a, u, spacing):
    length = float(np.linalg.norm(u))
    n = max(1, int(round(length / spacing)))
    s = (np.arange(n) + 0.5) / n
    nodes = a + s[:, None] * u
    tangent = np.tile(u / length, (n, 1))
    return Cells(nodes, np.full(n, length / n), tangent, 1)


def _parallelogram_cells(a, u, v, spacing):
    nvec = np.cross(u, v)
    area = float(np.linalg.norm(nvec))
    lu = float(np.linalg.norm(u))
    lv = area / lu  # height of v transverse to u
    nu = max(1, int(round(lu / spacing)))
    nv = max(1, int(round(lv / spacing)))
    s = (np.arange(nu) + 0.5) / nu
    t = (np.arange(nv) + 0.5) / nv
    S, T = np.meshgrid(s, t, indexing="ij")
    nodes = a + S.ravel()[:, None] * u + T.ravel()[:, None] * v
    n = nu * nv
    return Cells(nodes, np.full(n, area / n), np.tile(nvec / area, (n, 1)), 2)


def sphere_partition(n: int):
    """Equal-area zonal partition of the unit sphere into about ``n`` cells.

    Returns unit vectors at the cell centres and the cell areas.
    """
    n = max(int(n), 2)
    bands = max(1, int(round(math.sqrt(math.pi * n) / 2)))
    edges = np.cos(np.linspace(0.0, math.pi, bands + 1))
    golden = (math.sqrt(5) - 1) / 2
    points, areas = [], []
    for k in range(bands):
        frac = (edges[k] - edges[k + 1]) / 2
        count = max(1, int(round(frac * n)))
        z = 0.5 * (edges[k] + edges[k + 1])
        rho = math.sqrt(max(0.0, 1 - z * z))
        phi = 2 * math.pi * (np.arange(count) + (k * golden) % 1.0) / count
        points.append(np.stack([rho * np.cos(phi), rho * np.sin(phi), np.full(count, z)], 1))
        areas.append(np.full(count, 4 * math.pi * frac / count))
    return np.concatenate(points), np.concatenate(areas)


def _sector_distance(P, rmin, rmax, th0, width, c):
    """Distance to annular sectors; parameters broadcast against the points."""
    w = P - c
    r = np.linalg.norm(w, axis=-1)
    ang = _angle_wrap(np.arctan2(w[..., 1], w[..., 0]) - th0)
    radial = np.maximum(np.maximum(rmin - r, r - rmax), 0.0)
    full = width >= 2 * np.pi - 1e-15
    rmin, rmax, th0 = np.asarray(rmin), np.asarray(rmax), np.asarray(th0)
    edge = np.full(np.shape(radial), np.inf)
    for angle in (th0, th0 + width):
        e = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        edge = np.minimum(edge, _segment_distance(P, c + rmin[..., None] * e, (rmax - rmin)[..., None] * e))
    return np.where(full | (ang <= width), radial, edge)


def _box_distance(P, corner, axes, lengths):
    """Distance to rectangular boxes ``corner + sum s_i lengths_i axes_i``."""
    y = np.einsum("...ij,...j->...i", axes, P - corner)
    excess = np.maximum(np.maximum(-y, y - lengths), 0.0)
    return np.linalg.norm(excess, axis=-1)


def _pack_split(kind, params, d):
    """Split stacked parameter rows back into the arguments of the pair-distance function."""
    if kind == "ball":
        return params[:, :d], params[:, d]
    if kind == "segment":
        return params[:, :d], params[:, d:2 * d]
    if kind == "sheet":
        return params[:, 0:3], params[:, 3:6], params[:, 6:9]
    if kind == "annular_sector":
        return params[:, 0], params[:, 1], params[:, 2], params[:, 3], params[:, 4:6]
    if kind == "box":
        return params[:, :d], params[:, d:d + d * d].reshape(-1, d, d), params[:, d + d * d:]
    raise KeyError(kind)


def _pair_distance_kind(kind, P, params, d):
    args = _pack_split(kind, params, d)
    if kind == "ball":
        return np.maximum(np.linalg.norm(P - args[0], axis=1) - args[1], 0.0)
    if kind == "segment":
        return _segment_distance(P, *args)
    if kind == "sheet":
        return _parallelogram_distance(P, *args)
    if kind == "annular_sector":
        return _sector_distance(P, *args)
    return _box_distance(P, *args)


def _pair_crossing_kind(kind, P0, P1, params, d):
    args = _pack_split(kind, params, d)
    if kind == "segment" and d == 2:
        return _segments_cross(P0, P1 - P0, *args)
    if kind == "sheet":
        return _sheets_cross(P0, P1, *args)
    return np.zeros(len(P0), dtype=bool)


# --------------------------------------------------------------------------
# primitives


class Primitive:
    """Common interface; concrete primitives are frozen dataclasses."""

    kind = "primitive"
    thin = False  # zero-thickness primitives are detected by crossing tests

    dim: int

    def distance(self, P) -> np.ndarray:
        raise NotImplementedError

    def contains(self, P, tol=TOL) -> np.ndarray:
        return self.distance(P) <= tol

    def crossing(self, P0, P1) -> np.ndarray:
        return np.zeros(len(P0), dtype=bool)

    def transformed(self, R, shift) -> "Primitive":
        raise NotImplementedError

    def contracted(self, factor) -> "Primitive":
        S = np.diag([1.0] + [factor] * (self.dim - 1))
        return self._linear(S)

    def _linear(self, S):
        raise NotImplementedError

    def cells(self, spacing) -> Cells:
        raise NotImplementedError

    def boundary_measure(self) -> float:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        return 0.0

    def bbox(self):
        raise NotImplementedError

    def bounding_sphere(self):
        lo, hi = self.bbox()
        return 0.5 * (lo + hi), 0.5 * float(np.linalg.norm(hi - lo))

    def polytope(self):
        """Vertices, face normals and edge directions of a convex hull of the primitive."""
        raise NotImplementedError

    def shrunk(self, eps) -> "Primitive":
        raise NotImplementedError

    def pack(self):
        """Parameter row for vectorized distance queries, or ``None`` when unsupported."""
        return None

    def cover(self):
        """Balls ``(centers, radius)`` whose union contains the primitive."""
        c, r = self.bounding_sphere()
        return np.atleast_2d(c), r

    def sample(self, n, rng) -> np.ndarray:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Primitive):
    center: tuple
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _tup(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    @cached_property
    def _c(self):
        return np.array(self.center)

    def distance(self, P):
        P = _points(P, self.dim)
        return np.maximum(np.linalg.norm(P - self._c, axis=-1) - self.radius, 0.0)

    def transformed(self, R, shift):
        return Ball(np.asarray(R) @ self._c + shift, self.radius)

    def _linear(self, S):
        if np.allclose(S, np.eye(self.dim)):
            return self
        return Ellipsoid(S @ self._c, S * self.radius)

    def cells(self, spacing):
        r = self.radius
        if self.dim == 2:
            n = max(3, int(round(2 * math.pi * r / spacing)))
            phi = 2 * math.pi * (np.arange(n) + 0.5) / n
            e = np.stack([np.cos(phi), np.sin(phi)], 1)
            tangent = np.stack([-np.sin(phi), np.cos(phi)], 1)
            return Cells(self._c + r * e, np.full(n, 2 * math.pi * r / n), tangent, 1)
        if self.dim != 3:
            raise DomainError("surface cells are implemented for d in {2, 3}")
        u, a = sphere_partition(round(4 * math.pi * r * r / spacing**2))
        return Cells(self._c + r * u, a * r * r, u, 2)

    def boundary_measure(self):
        d, r = self.dim, self.radius
        return 2 * math.pi ** (d / 2) / math.gamma(d / 2) * r ** (d - 1)

    @property
    def volume(self):
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def bbox(self):
        return self._c - self.radius, self._c + self.radius

    def bounding_sphere(self):
        return self._c, self.radius

    def pack(self):
        return np.concatenate([self._c, [self.radius]])

    def shrunk(self, eps):
        return Ball(self.center, self.radius * (1 - eps))

    def polytope(self):
        lo, hi = self.bbox()
        return Box(lo, np.diag(hi - lo)).polytope()

    def sample(self, n, rng):
        d = self.dim
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = self.radius * rng.random(n) ** (1 / d)
        return self._c + rad[:, None] * g

    def to_json(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ellipsoid(Primitive):
    """Image ``{c + A u : |u| <= 1}`` of the unit ball under an invertible map."""

    center: tuple
    matrix: tuple
    kind = "ellipsoid"

    def __post_init__(self):
        c = _tup(self.center)
        A = np.asarray(self.matrix, dtype=float).reshape(len(c), len(c))
        if abs(np.linalg.det(A)) <= 0:
            raise DomainError("ellipsoid matrix must be invertible")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in A))

    @property
    def dim(self):
        return len(self.center)

    @cached_property
    def _c(self):
        return np.array(self.center)

    @cached_property
    def _A(self):
        return np.array(self.matrix)

    @cached_property
    def _principal(self):
        # A = U diag(s) V^T; the ellipsoid has principal axes U and semi-axes s
        U, s, _ = np.linalg.svd(self._A)
        return U, s

    @property
    def semi_axes(self):
        return self._principal[1]

    def distance(self, P):
        P = _points(P, self.dim)
        U, s = self._principal
        y = np.abs((P - self._c) @ U)
        inside = np.sum((y / s) ** 2, axis=1) <= 1.0
        # closest point on an axis-aligned ellipsoid: root of
        # sum (s_i y_i / (t + s_i^2))^2 = 1 for t > 0, found by bisection
        s2 = s * s
        lo = np.zeros(len(P))
        hi = np.linalg.norm(y, axis=1) * s.max() + s2.max()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            f = np.sum((s * y / (mid[:, None] + s2)) ** 2, axis=1) - 1.0
            lo = np.where(f > 0, mid, lo)
            hi = np.where(f > 0, hi, mid)
        t = 0.5 * (lo + hi)
        x = s2 * y / (t[:, None] + s2)
        dist = np.linalg.norm(y - x, axis=1)
        return np.where(inside, 0.0, dist)

    def transformed(self, R, shift):
        R = np.asarray(R)
        return Ellipsoid(R @ self._c + shift, R @ self._A)

    def _linear(self, S):
        if np.allclose(S, np.eye(self.dim)):
            return self
        return Ellipsoid(S @ self._c, S @ self._A)

    def cells(self, spacing):
        A = self._A
        AinvT = np.linalg.inv(A).T
        det = abs(np.linalg.det(A))
        if self.dim == 2:
            perim = self.boundary_measure()
            n = max(3, int(round(perim / spacing)))
            phi = 2 * math.pi * (np.arange(n) + 0.5) / n
            e = np.stack([np.cos(phi), np.sin(phi)], 1)
            tan = np.stack([-np.sin(phi), np.cos(phi)], 1) @ A.T
            speed = np.linalg.norm(tan, axis=1)
            return Cells(self._c + e @ A.T, speed * 2 * math.pi / n, tan / speed[:, None], 1)
        u, a = sphere_partition(round(self.boundary_measure() / spacing**2))
        normal = u @ AinvT.T
        stretch = np.linalg.norm(normal, axis=1)
        return Cells(self._c + u @ A.T, a * det * stretch, normal / stretch[:, None], 2)

    def boundary_measure(self):
        s = np.sort(self.semi_axes)[::-1]
        if self.dim == 2:
            a, b = s
            h = ((a - b) / (a + b)) ** 2
            return math.pi * (a + b) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))
        p = 1.6075
        a, b, c = s
        return 4 * math.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)

    @property
    def volume(self):
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * abs(np.linalg.det(self._A))

    def bbox(self):
        ext = np.linalg.norm(self._A, axis=1)
        return self._c - ext, self._c + ext

    def polytope(self):
        U, s = self._principal
        corner = self._c - U @ s
        return Box(corner, (2 * U * s).T).polytope()

    def shrunk(self, eps):
        return Ellipsoid(self.center, self._A * (1 - eps))

    def sample(self, n, rng):
        return Ball(np.zeros(self.dim), 1.0).sample(n, rng) @ self._A.T + self._c

    def to_json(self):
        return {"kind": "ellipsoid", "center": list(self.center),
                "matrix": [list(r) for r in self.matrix]}


@dataclass(frozen=True)
class Box(Primitive):
    """Parallelepiped ``corner + sum_i s_i e_i``, ``s`` in [0, 1]^d; rows of ``edges`` are ``e_i``."""

    corner: tuple
    edges: tuple
    kind = "box"

    def __post_init__(self):
        c = _tup(self.corner)
        d = len(c)
        E = np.asarray(self.edges, dtype=float)
        if E.ndim == 1:
            E = np.diag(E)
        E = E.reshape(d, d)
        if abs(np.linalg.det(E)) <= 0:
            raise DomainError("box edges must be linearly independent")
        object.__setattr__(self, "corner", c)
        object.__setattr__(self, "edges", tuple(tuple(float(v) for v in row) for row in E))

    @classmethod
    def from_lengths(cls, corner, lengths, orientation=None):
        lengths = np.asarray(lengths, dtype=float)
        Q = np.eye(len(lengths)) if orientation is None else np.asarray(orientation, dtype=float)
        return cls(corner, Q * lengths[:, None])

    @property
    def dim(self):
        return len(self.corner)

    @cached_property
    def _a(self):
        return np.array(self.corner)

    @cached_property
    def _E(self):
        return np.array(self.edges)

    @cached_property
    def _orth(self):
        G = self._E @ self._E.T
        return np.allclose(G, np.diag(np.diag(G)), atol=1e-12 * np.max(np.abs(G)))

    def _local(self, P):
        return (P - self._a) @ np.linalg.inv(self._E)

    def distance(self, P):
        P = _points(P, self.dim)
        if self._orth:
            lengths = np.linalg.norm(self._E, axis=1)
            axes = self._E / lengths[:, None]
            y = (P - self._a) @ axes.T
            excess = np.maximum(np.maximum(-y, y - lengths), 0.0)
            return np.linalg.norm(excess, axis=1)
        s = self._local(P)
        inside = np.all((s >= 0) & (s <= 1), axis=1)
        faces = [f.distance(P) for f in self.faces()]
        return np.where(inside, 0.0, np.minimum.reduce(faces))

    def pack(self):
        if not self._orth:
            return None
        lengths = np.linalg.norm(self._E, axis=1)
        return np.concatenate([self._a, (self._E / lengths[:, None]).ravel(), lengths])

    def faces(self):
        d, a, E = self.dim, self._a, self._E
        out = []
        for i in range(d):
            others = [E[j] for j in range(d) if j != i]
            for base in (a, a + E[i]):
                out.append(Segment(base, others[0]) if d == 2 else Sheet(base, *others))
        return out

    def transformed(self, R, shift):
        R = np.asarray(R)
        return Box(R @ self._a + shift, self._E @ R.T)

    def _linear(self, S):
        if np.allclose(S, np.eye(self.dim)):
            return self
        return Box(S @ self._a, self._E @ S.T)

    def cells(self, spacing):
        parts = [f.cells(spacing) for f in self.faces()]
        return Cells.concat(parts, self.dim, self.dim - 1)

    def boundary_measure(self):
        return sum(f.boundary_measure() for f in self.faces())

    @property
    def volume(self):
        return abs(float(np.linalg.det(self._E)))

    def vertices(self):
        d = self.dim
        s = np.array(np.meshgrid(*[[0.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
        return self._a + s @ self._E

    def bbox(self):
        V = self.vertices()
        return V.min(0), V.max(0)

    def polytope(self):
        E = self._E
        normals = np.linalg.inv(E).T  # columns of E^{-1} are face normals
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return self.vertices(), normals, E

    def shrunk(self, eps):
        return Box(self._a + eps * self._E.sum(0), self._E * (1 - 2 * eps))

    def sample(self, n, rng):
        return self._a + rng.random((n, self.dim)) @ self._E

    def to_json(self):
        if self._orth and np.allclose(self._E, np.diag(np.diag(self._E))):
            return {"kind": "box", "corner": list(self.corner), "edges": list(np.diag(self._E))}
        return {"kind": "box", "corner": list(self.corner), "edge_vectors": [list(r) for r in self.edges]}


@dataclass(frozen=True)
class Segment(Primitive):
    """Zero-thickness segment ``base + s * direction``."""

    base: tuple
    direction: tuple
    kind = "segment"
    thin = True

    def __post_init__(self):
        object.__setattr__(self, "base", _tup(self.base))
        object.__setattr__(self, "direction", _tup(self.direction))
        if len(self.base) != len(self.direction) or not np.linalg.norm(self.direction) > 0:
            raise DomainError("segment needs a base and a nonzero direction of equal length")

    @property
    def dim(self):
        return len(self.base)

    @cached_property
    def _a(self):
        return np.array(self.base)

    @cached_property
    def _u(self):
        return np.array(self.direction)

    def distance(self, P):
        return _segment_distance(_points(P, self.dim), self._a, self._u)

    def pack(self):
        return np.concatenate([self._a, self._u])

    def crossing(self, P0, P1):
        if self.dim != 2:
            return np.zeros(len(P0), dtype=bool)
        return _segments_cross(P0, P1 - P0, self._a, self._u)

    def transformed(self, R, shift):
        R = np.asarray(R)
        return Segment(R @ self._a + shift, R @ self._u)

    def _linear(self, S):
        if np.allclose(S, np.eye(self.dim)):
            return self
        return Segment(S @ self._a, S @ self._u)

    def cells(self, spacing):
        return _segment_cells(self._a, self._u, spacing)

    def boundary_measure(self):
        return float(np.linalg.norm(self._u))

    def bbox(self):
        e = self._a + self._u
        return np.minimum(self._a, e), np.maximum(self._a, e)

    def polytope(self):
        u = self._u / np.linalg.norm(self._u)
        normals = np.array([[-u[1], u[0]]]) if self.dim == 2 else np.zeros((0, self.dim))
        return np.array([self._a, self._a + self._u]), normals, u[None, :]

    def shrunk(self, eps):
        return Segment(self._a + eps * self._u, self._u * (1 - 2 * eps))

    def sample(self, n, rng):
        return self._a + rng.random(n)[:, None] * self._u

    def to_json(self):
        return {"kind": "segment", "base": list(self.base), "direction": list(self.direction)}


def _segments_cross(P, D, a, u):
    """Whether segments ``P + s D`` meet ``a + t u`` (2-D), ``s, t`` in [0, 1]."""
    den = D[..., 0] * u[..., 1] - D[..., 1] * u[..., 0]
    w = a - P
    safe = np.where(den != 0, den, 1.0)
    s = (w[..., 0] * u[..., 1] - w[..., 1] * u[..., 0]) / safe
    t = (w[..., 0] * D[..., 1] - w[..., 1] * D[..., 0]) / safe
    return (den != 0) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)


@dataclass(frozen=True)
class Sheet(Primitive):
    """Zero-thickness parallelogram ``base + s u + t v`` in 3-D."""

    base: tuple
    u: tuple
    v: tuple
    kind = "sheet"
    thin = True

    def __post_init__(self):
        for name in ("base", "u", "v"):
            object.__setattr__(self, name, _tup(getattr(self, name)))
        if len(self.base) != 3:
            raise DomainError("sheets live in three dimensions")
        if not np.linalg.norm(np.cross(self.u, self.v)) > 0:
            raise DomainError("sheet spans must be linearly independent")

    dim = 3

    @cached_property
    def _arr(self):
        return np.array(self.base), np.array(self.u), np.array(self.v)

    @cached_property
    def normal(self):
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    def distance(self, P):
        a, u, v = self._arr
        return _parallelogram_distance(_points(P, 3), a, u, v)

    def pack(self):
        return np.concatenate(self._arr)

    def crossing(self, P0, P1):
        a, u, v = self._arr
        return _sheets_cross(P0, P1, a, u, v)

    def transformed(self, R, shift):
        R = np.asarray(R)
        a, u, v = self._arr
        return Sheet(R @ a + shift, R @ u, R @ v)

    def _linear(self, S):
        if np.allclose(S, np.eye(3)):
            return self
        a, u, v = self._arr
        return Sheet(S @ a, S @ u, S @ v)

    def cells(self, spacing):
        return _parallelogram_cells(*self._arr, spacing)

    def boundary_measure(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def bbox(self):
        a, u, v = self._arr
        V = np.array([a, a + u, a + v, a + u + v])
        return V.min(0), V.max(0)

    def polytope(self):
        a, u, v = self._arr
        V = np.array([a, a + u, a + v, a + u + v])
        dirs = np.array([u / np.linalg.norm(u), v / np.linalg.norm(v)])
        return V, self.normal[None, :], dirs

    def shrunk(self, eps):
        a, u, v = self._arr
        return Sheet(a + eps * (u + v), u * (1 - 2 * eps), v * (1 - 2 * eps))

    def sample(self, n, rng):
        a, u, v = self._arr
        st = rng.random((n, 2))
        return a + st[:, :1] * u + st[:, 1:] * v

    def to_json(self):
        return {"kind": "sheet", "base": list(self.base), "spans": [list(self.u), list(self.v)]}


def _sheets_cross(P0, P1, a, u, v):
    n = np.cross(u, v)
    D = P1 - P0
    den = np.sum(D * n, -1)
    safe = np.where(den != 0, den, 1.0)
    tau = np.sum((a - P0) * n, -1) / safe
    X = P0 + tau[..., None] * D - a
    uu, vv, uv = np.sum(u * u, -1), np.sum(v * v, -1), np.sum(u * v, -1)
    xu, xv = np.sum(X * u, -1), np.sum(X * v, -1)
    det = uu * vv - uv * uv
    s = (vv * xu - uv * xv) / det
    t = (uu * xv - uv * xu) / det
    return (den != 0) & (tau >= 0) & (tau <= 1) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)


@dataclass(frozen=True)
class AnnularSector(Primitive):
    """Planar region ``r_min <= |x - c| <= r_max``, polar angle in ``[theta_min, theta_min + width]``."""

    r_min: float
    r_max: float
    theta_min: float
    theta_max: float
    center: tuple = (0.0, 0.0)
    kind = "annular_sector"
    dim = 2

    def __post_init__(self):
        object.__setattr__(self, "center", _tup(self.center))
        for name in ("r_min", "r_max", "theta_min", "theta_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (0 <= self.r_min < self.r_max):
            raise DomainError("annular sector needs 0 <= r_min < r_max")
        if not (0 < self.width <= 2 * math.pi + 1e-12):
            raise DomainError("annular sector needs 0 < theta_max - theta_min <= 2 pi")

    @property
    def width(self):
        return self.theta_max - self.theta_min

    @cached_property
    def _c(self):
        return np.array(self.center)

    def _edge_segments(self):
        out = []
        for ang in (self.theta_min, self.theta_max):
            e = np.array([math.cos(ang), math.sin(ang)])
            out.append((self._c + self.r_min * e, (self.r_max - self.r_min) * e))
        return out

    def distance(self, P):
        return _sector_distance(_points(P, 2), self.r_min, self.r_max, self.theta_min, self.width, self._c)

    def pack(self):
        return np.array([self.r_min, self.r_max, self.theta_min, self.width, *self.center])

    def cover(self):
        thick = self.r_max - self.r_min
        n_ang = max(1, int(math.ceil(self.r_max * self.width / thick)))
        da = self.width / n_ang
        ang = self.theta_min + da * (np.arange(n_ang) + 0.5)
        mid = 0.5 * (self.r_min + self.r_max)
        centers = self._c + mid * np.stack([np.cos(ang), np.sin(ang)], 1)
        # farthest corner of a cell from its centre
        corner = self.r_max * np.array([math.cos(da / 2), math.sin(da / 2)]) - np.array([mid, 0.0])
        inner = self.r_min * np.array([math.cos(da / 2), math.sin(da / 2)]) - np.array([mid, 0.0])
        return centers, float(max(np.linalg.norm(corner), np.linalg.norm(inner), thick / 2))

    def transformed(self, R, shift):
        R = np.asarray(R)
        if np.linalg.det(R) < 0:
            raise DomainError("annular sectors only support proper rotations")
        rot = math.atan2(R[1, 0], R[0, 0])
        return AnnularSector(self.r_min, self.r_max, self.theta_min + rot,
                             self.theta_max + rot, R @ self._c + shift)

    def _linear(self, S):
        if np.allclose(S, np.eye(2)):
            return self
        raise DomainError("contraction of annular sectors is not supported")

    def _arc_cells(self, radius, spacing):
        length = radius * self.width
        if length <= 0:
            return Cells(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), 1)
        n = max(1, int(round(length / spacing)))
        phi = self.theta_min + self.width * (np.arange(n) + 0.5) / n
        e = np.stack([np.cos(phi), np.sin(phi)], 1)
        tangent = np.stack([-np.sin(phi), np.cos(phi)], 1)
        return Cells(self._c + radius * e, np.full(n, length / n), tangent, 1)

    def cells(self, spacing):
        parts = [self._arc_cells(self.r_max, spacing), self._arc_cells(self.r_min, spacing)]
        if self.width < 2 * math.pi - 1e-15:
            parts += [_segment_cells(a, u, spacing) for a, u in self._edge_segments()]
        return Cells.concat(parts, 2, 1)

    def boundary_measure(self):
        edges = 0.0 if self.width >= 2 * math.pi - 1e-15 else 2 * (self.r_max - self.r_min)
        return (self.r_min + self.r_max) * self.width + edges

    @property
    def volume(self):
        return 0.5 * self.width * (self.r_max**2 - self.r_min**2)

    def polytope(self):
        # a rectangle aligned with the bisector that contains the sector
        mid = self.theta_min + self.width / 2
        e = np.array([math.cos(mid), math.sin(mid)])
        f = np.array([-e[1], e[0]])
        half = min(self.width / 2, math.pi)
        ang = np.linspace(-half, half, 65)
        pts = np.concatenate([
            np.outer(self.r_max * np.cos(ang), e) + np.outer(self.r_max * np.sin(ang), f),
            np.outer(self.r_min * np.cos(ang), e) + np.outer(self.r_min * np.sin(ang), f),
        ])
        ce, cf = pts @ e, pts @ f
        pad = self.r_max * (1 - math.cos(self.width / 128)) + 1e-12
        lo_e, hi_e = ce.min() - pad, ce.max() + pad
        lo_f, hi_f = cf.min() - pad, cf.max() + pad
        corner = self._c + lo_e * e + lo_f * f
        return Box(corner, np.array([(hi_e - lo_e) * e, (hi_f - lo_f) * f])).polytope()

    def bbox(self):
        V = self.polytope()[0]
        return V.min(0), V.max(0)

    def shrunk(self, eps):
        dr = eps * (self.r_max - self.r_min)
        da = eps * self.width
        return AnnularSector(self.r_min + dr, self.r_max - dr, self.theta_min + da,
                             self.theta_max - da, self.center)

    def sample(self, n, rng):
        u = rng.random((n, 2))
        r = np.sqrt(self.r_min**2 + u[:, 0] * (self.r_max**2 - self.r_min**2))
        phi = self.theta_min + self.width * u[:, 1]
        return self._c + np.stack([r * np.cos(phi), r * np.sin(phi)], 1)

    def to_json(self):
        out = {"kind": "annular_sector", "r_min": self.r_min, "r_max": self.r_max,
               "theta_min": self.theta_min, "theta_max": self.theta_max}
        if any(self.center):
            out["center"] = list(self.center)
        return out


# --------------------------------------------------------------------------
# sets


@dataclass(frozen=True, eq=False)
class SetSpec:
    """Finite union of primitives in ``R^dimension``."""

    dimension: int
    primitives: tuple = ()
    label: str = ""
    _accel_threshold = 24

    def __post_init__(self):
        prims = tuple(self.primitives)
        for p in prims:
            if p.dim != self.dimension:
                raise DomainError(f"{p.kind} has dimension {p.dim}, set has {self.dimension}")
        object.__setattr__(self, "primitives", prims)

    def __eq__(self, other):
        return (isinstance(other, SetSpec) and self.dimension == other.dimension
                and self.primitives == other.primitives)

    def __hash__(self):
        return hash((self.dimension, self.primitives))

    def __len__(self):
        return len(self.primitives)

    @property
    def empty(self):
        return not self.primitives

    @cached_property
    def has_thin(self):
        return any(p.thin for p in self.primitives)

    @cached_property
    def _cover_tree(self):
        parts = [p.cover() for p in self.primitives]
        centers = np.concatenate([c for c, _ in parts])
        return cKDTree(centers), max(r for _, r in parts)

    def union(self, other: "SetSpec", label="") -> "SetSpec":
        if other.dimension != self.dimension:
            raise DomainError("cannot unite sets of different dimensions")
        return SetSpec(self.dimension, self.primitives + other.primitives, label or self.label)

    # -- queries -----------------------------------------------------------

    @cached_property
    def _spheres(self):
        cs = [p.bounding_sphere() for p in self.primitives]
        centers = np.array([c for c, _ in cs]).reshape(-1, self.dimension)
        radii = np.array([r for _, r in cs])
        return centers, radii

    @cached_property
    def _tree(self):
        return cKDTree(self._spheres[0])

    @cached_property
    def _packed(self):
        """Per-primitive kind label and parameter row (``None`` rows use the generic path)."""
        kinds = np.array([p.kind for p in self.primitives])
        rows = [p.pack() for p in self.primitives]
        groups = {}
        for kind in set(kinds):
            members = np.nonzero(kinds == kind)[0]
            if all(rows[j] is not None for j in members):
                table = np.zeros((len(self.primitives), len(rows[members[0]])))
                table[members] = np.array([rows[j] for j in members])
                groups[kind] = table
        return kinds, groups

    def distance(self, P) -> np.ndarray:
        """Exact Euclidean distance from each point to the union (``inf`` for the empty set)."""
        P = _points(P, self.dimension)
        if self.empty:
            return np.full(len(P), np.inf)
        if len(self.primitives) <= self._accel_threshold:
            return np.minimum.reduce([p.distance(P) for p in self.primitives])
        best, lower = self.distance_bounds(P)
        unsure = np.nonzero(lower < best)[0]
        if len(unsure):
            _, radii = self._spheres
            lists = self._tree.query_ball_point(P[unsure], best[unsure] + radii.max())
            rows = np.repeat(unsure, [len(c) for c in lists])
            cols = np.fromiter((c for l in lists for c in l), dtype=int, count=len(rows))
            if len(rows):
                dist = self._pair_distance(P[rows], cols)
                np.minimum.at(best, rows, dist)
        return best

    def distance_bounds(self, P, k=8):
        """``(upper, lower)`` bounds on the distance from the ``k`` nearest primitives.

        ``upper`` is the exact distance to the closest of them; ``lower`` also
        accounts for primitives further away through their bounding spheres.
        """
        P = _points(P, self.dimension)
        centers, radii = self._spheres
        k = min(k, len(self.primitives))
        dc, idx = self._tree.query(P, k=k)
        dc = dc.reshape(len(P), k)
        idx = idx.reshape(len(P), k)
        exact = self._pair_distance(np.repeat(P, k, axis=0), idx.ravel()).reshape(len(P), k)
        best = exact.min(axis=1)
        if k == len(self.primitives):
            return best, best.copy()
        return best, np.minimum(best, np.maximum(dc[:, -1] - radii.max(), 0.0))

    def lower_distance(self, P):
        """Cheap lower bound on the distance (exact for small sets)."""
        P = _points(P, self.dimension)
        if self.empty:
            return np.full(len(P), np.inf)
        if len(self.primitives) <= self._accel_threshold:
            return self.distance(P)
        tree, radius = self._cover_tree
        dist, _ = tree.query(P, k=1)
        return np.maximum(dist - radius, 0.0)

    def _pair_distance(self, P, idx):
        """Distance from ``P[m]`` to primitive ``idx[m]``, vectorized per kind."""
        out = np.empty(len(P))
        kinds, groups = self._packed
        pk = kinds[idx]
        for kind in np.unique(pk):
            m = pk == kind
            if kind in groups:
                out[m] = _pair_distance_kind(kind, P[m], groups[kind][idx[m]], self.dimension)
            else:
                sub = np.nonzero(m)[0]
                for j in np.unique(idx[sub]):
                    sel = sub[idx[sub] == j]
                    out[sel] = self.primitives[j].distance(P[sel])
        return out

    def nearby(self, P, radius):
        """Indices of primitives whose bounding spheres come within ``radius`` of each point."""
        centers, radii = self._spheres
        return self._tree.query_ball_point(P, radius + radii.max())

    def contains(self, P, tol=TOL) -> np.ndarray:
        return self.distance(P) <= tol

    def crossing(self, P0, P1) -> np.ndarray:
        """Whether the chords ``P0 -> P1`` pass through a zero-thickness primitive."""
        P0 = _points(P0, self.dimension)
        P1 = _points(P1, self.dimension)
        hit = np.zeros(len(P0), dtype=bool)
        thin = [j for j, p in enumerate(self.primitives) if p.thin]
        if not thin or not len(P0):
            return hit
        if len(self.primitives) <= self._accel_threshold:
            for j in thin:
                hit |= self.primitives[j].crossing(P0, P1)
            return hit
        mid = 0.5 * (P0 + P1)
        half = 0.5 * np.linalg.norm(P1 - P0, axis=1)
        _, radii = self._spheres
        lists = self._tree.query_ball_point(mid, half + radii.max())
        rows = np.repeat(np.arange(len(P0)), [len(c) for c in lists])
        cols = np.fromiter((c for l in lists for c in l), dtype=int, count=len(rows))
        kinds, groups = self._packed
        for kind in ("segment", "sheet"):
            m = kinds[cols] == kind
            if m.any() and kind in groups:
                r, c = rows[m], cols[m]
                crossed = _pair_crossing_kind(kind, P0[r], P1[r], groups[kind][c], self.dimension)
                hit[r[crossed]] = True
        return hit

    def bbox(self):
        if self.empty:
            raise DomainError("empty set has no bounding box")
        boxes = [p.bbox() for p in self.primitives]
        return np.min([b[0] for b in boxes], 0), np.max([b[1] for b in boxes], 0)

    def max_projection(self, theta) -> float:
        """``max <x, theta>`` over the set (over bounding polytopes, hence an upper bound)."""
        theta = np.asarray(theta, dtype=float)
        out = -np.inf
        for p in self.primitives:
            if isinstance(p, Ball):
                out = max(out, float(p._c @ theta) + p.radius)
            else:
                out = max(out, float((p.polytope()[0] @ theta).max()))
        return out

    def boundary_measure(self) -> float:
        return sum(p.boundary_measure() for p in self.primitives)

    def sample(self, n_per_primitive, rng) -> np.ndarray:
        return np.concatenate([p.sample(n_per_primitive, rng) for p in self.primitives])

    # -- transforms ----------------------------------------------------------

    def transformed(self, R, shift=None) -> "SetSpec":
        shift = np.zeros(self.dimension) if shift is None else np.asarray(shift, float)
        return SetSpec(self.dimension, tuple(p.transformed(R, shift) for p in self.primitives), self.label)

    def translated(self, shift) -> "SetSpec":
        return self.transformed(np.eye(self.dimension), shift)

    def to_json(self) -> dict:
        out = {"schema_version": 1, "dimension": self.dimension,
               "primitives": [p.to_json() for p in self.primitives]}
        if self.label:
            out["label"] = self.label
        return out


def contains(set_: SetSpec, x, tol=TOL):
    """Membership of a point (or array of points) in the set."""
    res = set_.contains(x, tol)
    return bool(res[0]) if np.ndim(x) == 1 else res


def distance(set_: SetSpec, x):
    """Euclidean distance from a point (or array of points) to the set."""
    res = set_.distance(x)
    return float(res[0]) if np.ndim(x) == 1 else res


def contract(set_: SetSpec, factor: float) -> SetSpec:
    """Scale the transverse coordinates by ``factor`` keeping the first coordinate."""
    if not 0 < factor <= 1:
        raise DomainError(f"contraction factor must lie in (0, 1], got {factor}")
    if factor == 1:
        return set_
    prims = tuple(p.contracted(factor) for p in set_.primitives)
    return SetSpec(set_.dimension, prims, set_.label)


# --------------------------------------------------------------------------
# projection onto the transverse plane


@dataclass(frozen=True)
class Projection:
    shape: object  # shapely geometry (d=3) or list of intervals (d=2)
    area: float
    diameter: float

    @property
    def d_tilde(self):
        """Bracket ``[2 sqrt(area / pi), diameter]``; for d=2 ``area`` is a length."""
        return (2 * math.sqrt(self.area / math.pi), self.diameter)


def _projected_polygon(p, n_circle=256):
    from shapely.geometry import MultiPoint, Point, Polygon

    if isinstance(p, Ball):
        return Point(p.center[1:]).buffer(p.radius, quad_segs=n_circle // 4)
    if isinstance(p, Ellipsoid):
        A = p._A[1:, :]
        L = np.linalg.cholesky(A @ A.T + 1e-300 * np.eye(2))
        phi = 2 * np.pi * np.arange(n_circle) / n_circle
        circ = np.stack([np.cos(phi), np.sin(phi)])
        return Polygon((L @ circ).T + p._c[1:])
    return MultiPoint(p.polytope()[0][:, 1:]).convex_hull


def project(set_: SetSpec) -> Projection:
    """Orthogonal projection onto the plane ``x1 = 0`` (onto the ``x2`` axis when d=2)."""
    if set_.dimension == 2:
        ivs = []
        for p in set_.primitives:
            if isinstance(p, Ball):
                ivs.append((p.center[1] - p.radius, p.center[1] + p.radius))
            elif isinstance(p, AnnularSector):
                ang = np.linspace(p.theta_min, p.theta_max, 4097)
                ys = np.concatenate([p.r_min * np.sin(ang), p.r_max * np.sin(ang)]) + p.center[1]
                ivs.append((ys.min(), ys.max()))
            else:
                V = p.polytope()[0]
                ivs.append((V[:, 1].min(), V[:, 1].max()))
        ivs.sort()
        merged = []
        for lo, hi in ivs:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        length = sum(hi - lo for lo, hi in merged)
        diam = (merged[-1][1] - merged[0][0]) if merged else 0.0
        return Projection([tuple(m) for m in merged], length, diam)
    if set_.dimension != 3:
        raise DomainError("projection is implemented for d in {2, 3}")
    from shapely.ops import unary_union

    shape = unary_union([_projected_polygon(p) for p in set_.primitives])
    hull = shape.convex_hull
    if hull.is_empty:
        diam = 0.0
    else:
        coords = np.asarray(getattr(hull, "exterior", hull).coords) if hull.geom_type == "Polygon" \
            else np.asarray(hull.coords)
        diff = coords[:, None, :] - coords[None, :, :]
        diam = float(np.sqrt((diff**2).sum(-1)).max())
    return Projection(shape, float(shape.area), diam)


# --------------------------------------------------------------------------
# generators

DEFAULT_CONFIG = ((1, 2), (4, 1))


def fractal_cells(N: int, config=DEFAULT_CONFIG):
    """Lower-left corners ``(x1, x2)`` of the unit cells left after ``N`` subdivisions.

    The start cell is ``[0, T^2] x [0, T]`` with ``T = 2^N``; each chosen cell
    of scale ``s`` is cut into 4 x 2 subcells of scale ``s / 2`` and the
    configured ones ``(i1, i2)`` (1-based, ``i1`` along ``x1``) are kept.
    """
    for i1, i2 in config:
        if not (1 <= i1 <= 4 and 1 <= i2 <= 2):
            raise DomainError(f"cell index ({i1}, {i2}) outside the 4 x 2 grid")
    cells = [(0.0, 0.0)]
    scale = float(2**N)
    for _ in range(N):
        sub = scale / 2
        cells = [(x + (i1 - 1) * scale * scale / 4, y + (i2 - 1) * sub)
                 for x, y in cells for i1, i2 in config]
        scale = sub
    return cells


def gen_fractal_ET(N: int, config=DEFAULT_CONFIG, d: int = 2, allow_degenerate=False) -> SetSpec:
    """Dyadic fractal set: left faces of the surviving unit cells.

    For ``d=2`` the leaves are vertical unit segments; for ``d=3`` each leaf is a
    ``1 x T`` sheet spanning ``x3`` in ``[0, T]``.
    """
    if d not in (2, 3):
        raise DomainError("fractal set is defined for d in {2, 3}")
    if N > 20:
        raise DomainError(f"N={N} would create 2^{N} primitives; the limit is N=20")
    if N < 1 and not allow_degenerate:
        raise DomainError("N must be at least 1")
    N = max(int(N), 0)
    T = 2**N
    prims = []
    for x, y in fractal_cells(N, tuple(map(tuple, config))):
        if d == 2:
            prims.append(Segment((x, y), (0.0, 1.0)))
        else:
            prims.append(Sheet((x, y, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, float(T))))
    return SetSpec(d, tuple(prims), f"fractal_ET(N={N},d={d})")


def full_slab(T: float, d: int = 2) -> SetSpec:
    """Solid box ``[0, T^2] x [0, T]^{d-1}``."""
    return SetSpec(d, (Box(np.zeros(d), [T * T] + [T] * (d - 1)),), f"slab(T={T:g})")


def _is_power_of_two(T):
    return T >= 1 and int(T) == T and (int(T) & (int(T) - 1)) == 0


def gen_annular_example(T_list, thickness: float = 1.0, config=DEFAULT_CONFIG) -> SetSpec:
    """Rotated dyadic sets in the annuli ``T^2 <= |z| <= 2 T^2`` (planar).

    Each annulus holds ``T`` congruent copies, one per angular interval of
    width ``2 pi / T``; a unit cell at ``(a, b)`` of the planar construction
    becomes the sector ``T^2 + a <= r <= T^2 + a + thickness`` spanning the
    angles ``[b, b + 1] * 2 pi / T^2`` inside its interval.
    """
    T_list = [int(T) for T in T_list]
    prev = None
    prims = []
    for T in T_list:
        if not _is_power_of_two(T) or T < 8:
            raise DomainError(f"T={T} must be a power of two >= 8")
        if prev is not None and T * T <= 2 * prev * prev:
            raise DomainError(f"annulus for T={T} overlaps the one for T={prev}")
        prev = T
        N = int(round(math.log2(T)))
        unit = 2 * math.pi / (T * T)
        cells = fractal_cells(N, config)
        for j in range(T):
            base = 2 * math.pi * j / T
            for a, b in cells:
                prims.append(AnnularSector(T * T + a, T * T + a + thickness,
                                           base + b * unit, base + (b + 1) * unit))
    return SetSpec(2, tuple(prims), "annular_example(" + ",".join(map(str, T_list)) + ")")


# --------------------------------------------------------------------------
# anisotropic Hausdorff content


def measure_function(r, d: int) -> float:
    """Gauge ``h(r)`` attached to characteristic sets of size ``r``."""
    if r <= 0:
        raise DomainError("scale must be positive")
    if d == 2:
        return 1 / abs(math.log(r)) if r <= 0.5 else (2 / math.log(2)) * r
    if d == 3:
        return r if r <= 1 else r * r
    return r ** (d - 2) if r <= 1 else r ** (d - 1)


def characteristic_dims(r, d: int) -> np.ndarray:
    """Edge lengths of the characteristic box of size ``r`` (first axis along the drift)."""
    return np.array([r * r] + [r] * (d - 1)) if r > 1 else np.full(d, float(r))


def characteristic_set(r, d: int, corner=None) -> SetSpec:
    corner = np.zeros(d) if corner is None else np.asarray(corner, float)
    return SetSpec(d, (Box(corner, characteristic_dims(r, d)),), f"H({r:g})")


def _sat_intersects(lo, hi, poly):
    """Separating-axis test between the box ``[lo, hi]`` and a convex polytope."""
    V, normals, dirs = poly
    d = len(lo)
    axes = [np.eye(d)]
    if len(normals):
        axes.append(normals)
    if d == 3 and len(dirs):
        cr = np.cross(dirs[:, None, :], np.eye(3)[None, :, :]).reshape(-1, 3)
        keep = np.linalg.norm(cr, axis=1) > 1e-12
        axes.append(cr[keep])
    A = np.concatenate(axes)
    proj = V @ A.T
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    c = center @ A.T
    rad = np.abs(A) @ half
    return not np.any((proj.max(0) < c - rad) | (proj.min(0) > c + rad))


def _intersects(lo, hi, prim):
    if isinstance(prim, Ball):
        c = np.array(prim.center)
        return float(np.linalg.norm(c - np.clip(c, lo, hi))) <= prim.radius
    return _sat_intersects(lo, hi, prim.polytope())


@dataclass(frozen=True)
class CoverPiece:
    scale: float
    corner: tuple  # lower corner in the rotated frame
    world_corner: tuple


@dataclass
class CoverReport:
    """Admissible cover by characteristic sets and its total gauge ``sum h(r_j)``."""

    pieces: list
    content: float
    direction: tuple
    scales: tuple
    frame: np.ndarray = field(repr=False, default=None)

    def covers(self, P, tol=1e-9) -> np.ndarray:
        """Whether each point lies in some (closed) piece."""
        P = np.asarray(P, float)
        Y = P @ self.frame.T
        ok = np.zeros(len(P), dtype=bool)
        d = P.shape[1]
        for piece in self.pieces:
            lo = np.array(piece.corner)
            hi = lo + characteristic_dims(piece.scale, d)
            ok |= np.all((Y >= lo - tol) & (Y <= hi + tol), axis=1)
        return ok


def dyadic_scales(lo_exp=-8, hi_exp=8):
    return tuple(2.0**m for m in range(lo_exp, hi_exp + 1))


def hausdorff_content(set_: SetSpec, theta=None, scales=None) -> CoverReport:
    """Upper bound on the anisotropic content by a greedy dyadic cover.

    The frame is rotated so that ``theta`` becomes the first axis.  Starting
    from the coarsest characteristic boxes that tile the bounding box, each
    box is kept or replaced by the best cover of its occupied dyadic
    children; a box whose children are all occupied is kept.
    """
    d = set_.dimension
    theta = np.eye(d)[0] if theta is None else np.asarray(theta, float)
    theta = theta / np.linalg.norm(theta)
    R = rotation_to_axis(theta)
    scales = tuple(sorted(set(float(s) for s in (scales or dyadic_scales()))))
    for s in scales:
        if not _is_power_of_two(1 / s) and not _is_power_of_two(s):
            raise DomainError(f"scale {s} is not a power of two")
    if set_.empty:
        return CoverReport([], 0.0, tuple(theta), scales, R)
    eps = 1e-9
    prims = [p.transformed(R, np.zeros(d)).shrunk(eps) for p in set_.primitives]
    lo = np.min([p.bbox()[0] for p in prims], 0)
    hi = np.max([p.bbox()[1] for p in prims], 0)
    ext = hi - lo
    top = scales[-1]
    for s in scales:
        if np.all(characteristic_dims(s, d) >= ext):
            top = s
            break
    scale_set = set(scales)
    h = {s: measure_function(s, d) for s in scales}
    top_dims = characteristic_dims(top, d)
    counts = np.maximum(1, np.ceil(ext / top_dims - 1e-12)).astype(int)

    def children(corner, r):
        sub = r / 2
        dims = characteristic_dims(sub, d)
        splits = [4] + [2] * (d - 1) if r > 1 else [2] * d
        grid = np.array(np.meshgrid(*[np.arange(k) for k in splits], indexing="ij")).reshape(d, -1).T
        return sub, corner + grid * dims

    def occupied(corner, r, cand):
        top_corner = corner + characteristic_dims(r, d) * (1 - eps)
        return [j for j in cand if _intersects(corner, top_corner, prims[j])]

    def best(corner, r, cand):
        """Return (cost, pieces) for covering ``prims[cand]`` inside the cell."""
        sub = r / 2
        if sub not in scale_set:
            return h[r], [(r, corner)]
        sub, corners = children(corner, r)
        occ = [(c, occupied(c, sub, cand)) for c in corners]
        occ = [(c, o) for c, o in occ if o]
        if len(occ) == len(corners):
            return h[r], [(r, corner)]
        total, pieces = 0.0, []
        for c, o in occ:
            cost, pc = best(c, sub, o)
            total += cost
            pieces += pc
            if total >= h[r]:
                return h[r], [(r, corner)]
        return total, pieces

    all_pieces, content = [], 0.0
    for idx in np.ndindex(*counts):
        corner = lo + np.array(idx) * top_dims
        cand = occupied(corner, top, range(len(prims)))
        if cand:
            cost, pieces = best(corner, top, cand)
            content += cost
            all_pieces += pieces
    out = [CoverPiece(r, _tup(c), _tup(R.T @ c)) for r, c in all_pieces]
    return CoverReport(out, float(content), tuple(theta), scales, R)


def rotated_content_bound(content_at_reference: float, n: int, angle_gap: float) -> float:
    """Comparison ``M_theta <= M_ref * (1 + 2^n sin|theta - theta_ref|)`` for cells of generation ``n``."""
    return content_at_reference * (1 + 2**n * abs(math.sin(angle_gap)))


# --------------------------------------------------------------------------
# polar cells of the planar annular decomposition


def polar_cell(n: int, j: int) -> AnnularSector:
    """Cell ``4^n <= r <= 4^{n+1}``, ``2 pi j / 2^n <= angle <= 2 pi (j+1) / 2^n``."""
    w = 2 * math.pi / 2**n
    return AnnularSector(4.0**n, 4.0 ** (n + 1), j * w, (j + 1) * w)


def decompose_polar(set_: SetSpec) -> dict:
    """Group planar primitives by the polar cell that holds their bounding-sphere centre."""
    if set_.dimension != 2:
        raise DomainError("polar decomposition is planar")
    family: dict = {}
    for p in set_.primitives:
        c, _ = p.bounding_sphere()
        r = float(np.linalg.norm(c))
        if r < 1:
            n = 0
        else:
            n = int(math.floor(math.log(r, 4)))
        ang = math.atan2(c[1], c[0]) % (2 * math.pi)
        j = min(int(ang / (2 * math.pi / 2**n)), 2**n - 1)
        family.setdefault((n, j), []).append(p)
    return {k: SetSpec(2, tuple(v), f"E[{k[0]},{k[1]}]") for k, v in sorted(family.items())}
