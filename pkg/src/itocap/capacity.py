"""Modified kernels, potentials and the discrete capacity problem.

The capacity of a compact set is computed as the value of the linear program

    maximize sum(nu)  subject to  A nu <= 1,  nu >= 0,

where ``A[j, i]`` is the potential at node ``j`` of a unit mass spread over
the quadrature cell of node ``i``.  The optimal ``nu`` is the discrete
equilibrium measure and the optimal value is the capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, special
from scipy.spatial import cKDTree

from .errors import DomainError, NumericalError
from .geometry import Cells, SetSpec, characteristic_set, dyadic_scales, hausdorff_content, measure_function

NEAR = 3.0  # in units of the cell radius: polar quadrature about the target
MID = 10.0  # beyond NEAR and below MID: fixed product rule over the cell


@dataclass(frozen=True)
class KernelSpec:
    """Dimension, drift direction ``theta``, sign and spectral speed ``k`` of a kernel."""

    d: int
    theta: tuple | None = None
    sign: str = "-"
    k: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise DomainError(f"dimension must be an integer >= 2, got {self.d}")
        theta = np.eye(self.d)[0] if self.theta is None else np.asarray(self.theta, dtype=float)
        if theta.shape != (self.d,) or not np.linalg.norm(theta) > 0:
            raise DomainError("theta must be a nonzero vector of length d")
        theta = theta / np.linalg.norm(theta)
        object.__setattr__(self, "theta", tuple(float(v) for v in theta))
        if self.sign not in ("+", "-"):
            raise DomainError(f"sign must be '+' or '-', got {self.sign!r}")
        if not self.k > 0:
            raise DomainError(f"spectral speed must be positive, got {self.k}")
        object.__setattr__(self, "k", float(self.k))

    def flipped(self) -> "KernelSpec":
        return replace(self, sign="+" if self.sign == "-" else "-")

    def to_json(self):
        return {"d": self.d, "theta": list(self.theta), "sign": self.sign, "k": self.k}


def _kernel_values(diff, spec: KernelSpec):
    """``K(z, xi)`` from ``diff = z - xi`` (shape ``(..., d)``), no singularity check."""
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    along = diff @ np.asarray(spec.theta)
    return _kernel_radial(r, along, spec)


def _kernel_radial(r, along, spec: KernelSpec):
    k, d = spec.k, spec.d
    if spec.sign == "+":
        along = -along
    decay = np.exp(-k * (r + along))
    if d == 3:
        return decay / (2 * math.pi * r)
    if d == 2:
        return special.k0e(k * r) * decay / math.pi
    nu = (d - 2) / 2
    return 2 * (2 * math.pi) ** (-d / 2) * (k / r) ** nu * special.kve(nu, k * r) * decay


def kernel(z, xi, spec: KernelSpec):
    """Modified kernel ``K(z, xi)``; raises for coincident points."""
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    diff = z - xi
    if diff.shape[-1] != spec.d:
        raise DomainError(f"points must have {spec.d} coordinates")
    if np.any(np.all(diff == 0, axis=-1)):
        raise DomainError("kernel is singular at coincident points")
    out = _kernel_values(diff, spec)
    return float(out) if np.ndim(out) == 0 else out


def normalization_radius_factor(r, d):
    """Factor ``(2 pi r)^{(d-1)/2}`` that turns the far-field potential into the mass."""
    return (2 * math.pi * r) ** ((d - 1) / 2)


# --------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Point masses at cell centres; each mass is spread over its quadrature cell."""

    nodes: np.ndarray
    weights: np.ndarray
    sizes: np.ndarray
    frame: np.ndarray
    cell_dim: int

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise DomainError("measure weights must be nonnegative")

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def radii(self) -> np.ndarray:
        """Radius of the disk (or half-length of the segment) matching each cell."""
        return np.sqrt(self.sizes / math.pi) if self.cell_dim == 2 else 0.5 * self.sizes

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    def __len__(self):
        return len(self.weights)

    def with_weights(self, weights) -> "DiscreteMeasure":
        return replace(self, weights=np.asarray(weights, dtype=float))

    @classmethod
    def point_masses(cls, nodes, weights):
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        n, d = nodes.shape
        return cls(nodes, np.asarray(weights, dtype=float).reshape(n), np.zeros(n),
                   np.tile(np.eye(d)[0], (n, 1)), d - 1)

    @classmethod
    def empty(cls, d):
        z = np.zeros((0, d))
        return cls(z, np.zeros(0), np.zeros(0), z, d - 1)

    def to_json(self):
        return {"nodes": self.nodes.tolist(), "weights": self.weights.tolist(),
                "cell_sizes": self.sizes.tolist(), "mass": self.mass}


def discretize(set_: SetSpec, resolution: int | None = None, spacing: float | None = None) -> DiscreteMeasure:
    """Quasi-uniform cells on the boundary of each solid primitive, or on each thin one.

    The target cell size is fixed by ``resolution`` (roughly the total node
    count) unless ``spacing`` is given.  Every primitive is discretized on its
    own, so a subset made of some of the primitives receives a subset of the
    nodes when the spacing is held fixed.  Weights are the normalized cell
    sizes (unit mass).
    """
    if set_.empty:
        raise DomainError("cannot discretize the empty set")
    d = set_.dimension
    if d not in (2, 3):
        raise DomainError("boundary discretization is implemented for d in {2, 3}")
    for p in set_.primitives:
        if d == 3 and p.kind == "segment":
            raise DomainError("segments in three dimensions have zero capacity and cannot carry cells")
    if spacing is None:
        if resolution is None:
            raise DomainError("give a resolution or a spacing")
        if resolution < len(set_.primitives):
            raise DomainError(f"resolution {resolution} is below the primitive count {len(set_.primitives)}")
        total = set_.boundary_measure()
        spacing = math.sqrt(total / resolution) if d == 3 else total / resolution
    if not spacing > 0:
        raise DomainError("spacing must be positive")
    cells = Cells.concat([p.cells(spacing) for p in set_.primitives], d, d - 1)
    weights = cells.sizes / cells.sizes.sum()
    return DiscreteMeasure(cells.nodes, weights, cells.sizes, cells.frame, d - 1)


# --------------------------------------------------------------------------
# cell-averaged kernels


def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _plane_basis(normal):
    """Two unit vectors spanning the plane orthogonal to each row of ``normal``."""
    helper = np.where(np.abs(normal[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normal, e1)
    return e1, e2


def _disk_average_near(target, center, normal, rho, spec, n_ang=16, n_rad=8):
    """Average of ``K(target, .)`` over flat disks, by polar quadrature about the foot point.

    The radial variable is ``w = sqrt(s^2 + h^2)`` (``h`` the height above the
    disk), which removes the ``1/|z - xi|`` singularity from the integrand.
    """
    m = len(target)
    e1, e2 = _plane_basis(normal)
    rel = target - center
    height = np.sum(rel * normal, axis=1)
    foot = rel - height[:, None] * normal  # foot point relative to the centre
    fx = np.sum(foot * e1, 1)
    fy = np.sum(foot * e2, 1)
    c = np.hypot(fx, fy)
    inside = c < rho
    xr, wr = _gauss(n_rad)
    xa, wa = _gauss(n_ang)

    # angular nodes: full circle (trapezoid) inside, smoothed cone outside
    phi_full = 2 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
    alpha = np.arctan2(-fy, -fx)
    beta = np.arcsin(np.clip(rho / np.maximum(c, 1e-300), 0, 1))
    tau = 0.5 * math.pi * xa
    phi_cone = alpha[:, None] + beta[:, None] * np.sin(tau)[None, :]
    dphi_cone = beta[:, None] * 0.5 * math.pi * np.cos(tau)[None, :] * wa[None, :]
    phi = np.where(inside[:, None], phi_full[None, :], phi_cone)
    dphi = np.where(inside[:, None], 2 * math.pi / n_ang, dphi_cone)

    ux, uy = np.cos(phi), np.sin(phi)
    b = fx[:, None] * ux + fy[:, None] * uy
    disc = np.maximum(b * b - (c * c - rho * rho)[:, None], 0.0)
    root = np.sqrt(disc)
    s_lo = np.where(inside[:, None], 0.0, np.maximum(-b - root, 0.0))
    s_hi = np.maximum(-b + root, s_lo)
    h2 = (height * height)[:, None]
    w_lo = np.sqrt(s_lo**2 + h2)
    w_hi = np.sqrt(s_hi**2 + h2)
    half = 0.5 * (w_hi - w_lo)
    wv = 0.5 * (w_hi + w_lo)[..., None] + half[..., None] * xr  # (m, ang, rad)
    s = np.sqrt(np.maximum(wv**2 - h2[..., None], 0.0))
    # point on the disk minus target: foot + s u - rel
    pts = (foot[:, None, None, :] + s[..., None] * (ux[..., None, None] * e1[:, None, None, :]
                                                      + uy[..., None, None] * e2[:, None, None, :]))
    diff = rel[:, None, None, :] - pts  # target - xi
    r = wv
    along = diff @ np.asarray(spec.theta)
    vals = _kernel_radial(r, along, spec) * r  # s ds = w dw
    integral = np.sum(vals * wr * half[..., None] * dphi[..., None], axis=(1, 2))
    return integral / (math.pi * rho * rho)


_MID_RAD = _gauss(3)
_MID_ANG = 8


def _disk_average_mid(target, center, normal, rho, spec):
    """Average over disks by a fixed polar product rule (targets well separated)."""
    e1, e2 = _plane_basis(normal)
    xr, wr = _MID_RAD
    # area-weighted radial Gauss rule on [0, rho]: nodes t in [0,1], weight t dt
    t = 0.5 * (xr + 1)
    wt = 0.5 * wr * t * 2  # normalized so the rule integrates 2 t dt to 1
    phi = 2 * math.pi * (np.arange(_MID_ANG) + 0.5) / _MID_ANG
    total = np.zeros(len(target))
    for ti, wti in zip(t, wt):
        for ph in phi:
            off = rho[:, None] * ti * (math.cos(ph) * e1 + math.sin(ph) * e2)
            total += wti / _MID_ANG * _kernel_values(target - center - off, spec)
    return total


def _segment_average(target, center, tangent, half_len, spec, n=12):
    """Average of ``K(target, .)`` over segments, split at the foot point with ``u = u0 +- L v^2``."""
    rel = target - center
    u0 = np.clip(np.sum(rel * tangent, 1), -half_len, half_len)
    x, w = _gauss(n)
    v = 0.5 * (x + 1)
    wv = 0.5 * w
    total = np.zeros(len(target))
    for side, length in ((-1.0, u0 + half_len), (1.0, half_len - u0)):
        for vi, wi in zip(v, wv):
            u = u0 + side * length * vi * vi
            jac = 2 * length * vi
            pts = center + u[:, None] * tangent
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = wi * jac * _kernel_values(target - pts, spec)
            # a target on a cell end leaves one side (numerically) empty
            total += np.where(length > 1e-12 * half_len, vals, 0.0)
    return total / (2 * half_len)


def _segment_average_mid(target, center, tangent, half_len, spec):
    x, w = _gauss(4)
    total = np.zeros(len(target))
    for xi, wi in zip(x, w):
        total += 0.5 * wi * _kernel_values(target - center - (xi * half_len)[:, None] * tangent, spec)
    return total


def cell_average(target, measure: DiscreteMeasure, idx, spec: KernelSpec):
    """``mean over cell idx[m] of K(target[m], .)`` with the rule chosen by distance."""
    target = np.asarray(target, dtype=float)
    idx = np.asarray(idx)
    out = np.empty(len(idx))
    if not len(idx):
        return out
    centers = measure.nodes[idx]
    frame = measure.frame[idx]
    rad = measure.radii[idx]
    dist = np.linalg.norm(target - centers, axis=1)
    near = dist < NEAR * rad
    mid = ~near & (dist < MID * rad)
    far = ~near & ~mid
    surface = measure.cell_dim == 2 and measure.dimension == 3
    avg_near = _disk_average_near if surface else _segment_average
    avg_mid = _disk_average_mid if surface else _segment_average_mid
    for mask, fn in ((near, avg_near), (mid, avg_mid)):
        if mask.any():
            # chunk to bound memory of the vectorized quadrature
            pos = np.nonzero(mask)[0]
            for start in range(0, len(pos), 4096):
                sl = pos[start:start + 4096]
                out[sl] = fn(target[sl], centers[sl], frame[sl], rad[sl], spec)
    if far.any():
        out[far] = _kernel_values(target[far] - centers[far], spec)
    return out


def potential(measure: DiscreteMeasure, z, spec: KernelSpec):
    """Potential ``sum_i K(z, xi_i) mu_i`` with each mass spread over its cell.

    Point masses (cells of size zero) are evaluated pointwise.  ``z`` may be a
    single point or an array of points.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if len(measure) == 0:
        return 0.0 if single else np.zeros(len(Z))
    if np.all(measure.sizes == 0):
        diff = Z[:, None, :] - measure.nodes[None, :, :]
        if np.any(np.all(diff == 0, axis=-1)):
            raise DomainError("potential of a point mass evaluated at its own location")
        out = _kernel_values(diff, spec) @ measure.weights
    else:
        out = np.empty(len(Z))
        for start in range(0, len(Z), 512):
            block = Z[start:start + 512]
            out[start:start + 512] = _kernel_block(block, measure, spec) @ measure.weights
    return float(out[0]) if single else out


def _near_pairs(targets, measure, radius_factor):
    tree = cKDTree(measure.nodes)
    rmax = measure.radii.max() * radius_factor
    lists = tree.query_ball_point(targets, rmax)
    rows = np.repeat(np.arange(len(targets)), [len(l) for l in lists])
    cols = np.fromiter((c for l in lists for c in l), dtype=int, count=len(rows))
    dist = np.linalg.norm(targets[rows] - measure.nodes[cols], axis=1)
    keep = dist < radius_factor * measure.radii[cols]
    return rows[keep], cols[keep]


def _kernel_block(targets, measure, spec):
    """Matrix of cell averages ``A[j, i] = mean over cell i of K(targets[j], .)``."""
    diff = targets[:, None, :] - measure.nodes[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        A = _kernel_values(diff, spec)
    rows, cols = _near_pairs(targets, measure, MID)
    A[rows, cols] = cell_average(targets[rows], measure, cols, spec)
    return A


def assemble(measure: DiscreteMeasure, spec: KernelSpec) -> np.ndarray:
    """Collocation matrix on the nodes with symmetrized near-field cell averages.

    Nearby entries average the kernel over the source cell and, separately,
    over the target cell, and take the mean of the two.  Because of this
    symmetrization the matrices for the two signs are exact transposes.
    """
    X = measure.nodes
    diff = X[:, None, :] - X[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        A = _kernel_values(diff, spec)
    rows, cols = _near_pairs(X, measure, MID)
    # close pairs in either direction
    pairs = np.unique(np.concatenate([np.stack([rows, cols], 1), np.stack([cols, rows], 1)]), axis=0)
    j, i = pairs[:, 0], pairs[:, 1]
    source_avg = cell_average(X[j], measure, i, spec)
    # mean over cell j of K(., xi_i) = mean over cell j of K_flipped(xi_i, .)
    target_avg = cell_average(X[i], measure, j, spec.flipped())
    A[j, i] = 0.5 * (source_avg + target_avg)
    return A


# --------------------------------------------------------------------------
# linear program


@dataclass
class CapacityResult:
    """Discrete capacity and equilibrium measure at one or two resolutions."""

    capacity: float
    measure: DiscreteMeasure
    sup_potential: float
    resolution: int
    method: str
    coarse_capacity: float | None = None
    coarse_resolution: int | None = None
    agreement: float | None = None
    kernel: KernelSpec | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def refined(self) -> bool | None:
        """Whether the two resolutions agree to within 10%."""
        return None if self.agreement is None else self.agreement <= 0.10

    def to_json(self, include_measure=True):
        out = {"capacity": self.capacity, "sup_potential": self.sup_potential,
               "resolution": [self.resolution, self.coarse_resolution],
               "coarse_capacity": self.coarse_capacity, "relative_change": self.agreement,
               "refined": self.refined, "method": self.method,
               "kernel": self.kernel.to_json() if self.kernel else None}
        if include_measure:
            out["equilibrium"] = {"nodes": self.measure.nodes.tolist(),
                                  "weights": self.measure.weights.tolist()}
        return out


def _active_set(A, tol, max_rounds=50):
    """Guess the support by repeatedly dropping negative masses, then verify the KKT conditions.

    With support ``S``: ``A_SS nu_S = 1`` and ``A_SS^T y_S = 1``.  The pair is
    optimal when both are nonnegative, ``A nu <= 1`` on the rows outside
    ``S`` and ``A^T y >= 1`` on the columns outside ``S``; then the primal and
    dual objectives coincide.  Returns ``None`` when the guess fails.
    """
    n = A.shape[0]
    support = np.arange(n)
    for _ in range(max_rounds):
        sub = A[np.ix_(support, support)]
        try:
            nu_s = np.linalg.solve(sub, np.ones(len(support)))
            y_s = np.linalg.solve(sub.T, np.ones(len(support)))
        except np.linalg.LinAlgError:
            return None
        bad = (nu_s < 0) | (y_s < 0)
        if not bad.any():
            break
        support = support[~bad]
        if not len(support):
            return None
    else:
        return None
    nu = np.zeros(n)
    y = np.zeros(n)
    nu[support] = nu_s
    y[support] = y_s
    if (A @ nu).max() > 1 + tol or (A.T @ y).min() < 1 - tol:
        return None
    if abs(nu.sum() - y.sum()) > tol * max(1.0, nu.sum()):
        return None
    return nu, n - len(support)


def solve_lp(A: np.ndarray, tol=1e-9):
    """Maximize ``sum(nu)`` over ``A nu <= 1, nu >= 0``.

    An active-set guess certified by the KKT conditions is tried first; if it
    fails, HiGHS solves the program.
    """
    n = A.shape[1]
    ones = np.ones(A.shape[0])
    if A.shape[0] == n:
        found = _active_set(A, tol)
        if found is not None:
            return found[0], "certificate", {"inactive": int(found[1])}
    res = optimize.linprog(-np.ones(n), A_ub=A, b_ub=ones, bounds=(0, None), method="highs-ds",
                           options={"primal_feasibility_tolerance": tol,
                                    "dual_feasibility_tolerance": tol})
    if res.status != 0:
        raise NumericalError(f"linear program failed: {res.message}",
                             {"status": int(res.status), "iterations": int(getattr(res, "nit", -1))})
    nu = np.maximum(res.x, 0.0)
    return nu, "highs", {"iterations": int(res.nit)}


def _solve_at(set_, spec, resolution, spacing=None):
    measure = discretize(set_, resolution, spacing)
    A = assemble(measure, spec)
    nu, method, diag = solve_lp(A)
    pot = A @ nu
    # the constraint may be violated by the solver tolerance: rescale exactly
    top = pot.max()
    if top > 1:
        nu = nu / top
    C = float(nu.sum())
    return C, measure.with_weights(nu), float((A @ nu).max()), method, diag


def capacity_lp(set_: SetSpec, spec: KernelSpec, resolution: int = 800, second: bool = True,
                spacing: float | None = None) -> CapacityResult:
    """Discrete capacity, with an optional second solve at half the resolution."""
    if set_.dimension != spec.d:
        raise DomainError("set and kernel dimensions differ")
    C, meas, sup, method, diag = _solve_at(set_, spec, resolution, spacing)
    if not C > 0:
        raise NumericalError("capacity is not positive", diag)
    result = CapacityResult(C, meas, 1.0 / C, len(meas), method, kernel=spec, diagnostics=diag)
    result.diagnostics["max_constraint"] = sup
    if second:
        coarse_res = None if spacing is not None else max(len(set_.primitives), resolution // 2)
        coarse_sp = None if spacing is None else spacing * math.sqrt(2) ** (1 if set_.dimension == 3 else 2)
        Cc, mc, *_ = _solve_at(set_, spec, coarse_res, coarse_sp)
        result.coarse_capacity = Cc
        result.coarse_resolution = len(mc)
        result.agreement = abs(C - Cc) / C
    return result


def off_grid_probes(set_: SetSpec, measure: DiscreteMeasure, factor: float = 1.37) -> np.ndarray:
    """Points on the set away from the nodes: cell centres at a different spacing."""
    if measure.cell_dim == 2:
        spacing = math.sqrt(np.median(measure.sizes)) * factor
    else:
        spacing = float(np.median(measure.sizes)) * factor
    probes = Cells.concat([p.cells(spacing) for p in set_.primitives], set_.dimension, set_.dimension - 1).nodes
    # drop probes that coincide with nodes
    dist, _ = cKDTree(measure.nodes).query(probes)
    return probes[dist > 1e-9]


@dataclass
class Bounds:
    lower: float
    upper: float
    calibration: float
    content: float
    lp_capacity: float

    def to_json(self):
        return {"lower": self.lower, "upper": self.upper, "calibration_constant": self.calibration,
                "content": self.content, "lp_capacity": self.lp_capacity,
                "flags": ["upper bound uses a calibrated constant"]}


CALIBRATION_SCALES = {2: tuple(2.0**m for m in range(-3, 4)), 3: tuple(2.0**m for m in range(-2, 4))}


@lru_cache(maxsize=None)
def calibration_constant(d: int, k: float = 1.0, resolution: int = 400) -> float:
    """Largest ratio ``C(H(r)) / h(r)`` over dyadic characteristic sets.

    The ratio is measured on the characteristic boxes themselves in the drift
    frame, so the constant converts a cover's gauge sum into a capacity bound.
    """
    spec = KernelSpec(d, k=k)
    ratios = []
    for r in CALIBRATION_SCALES[d]:
        C = capacity_lp(characteristic_set(r, d), spec, resolution, second=False).capacity
        ratios.append(C / measure_function(r, d))
    return float(max(ratios))


def capacity_bounds(set_: SetSpec, spec: KernelSpec, resolution: int = 800, result: CapacityResult | None = None,
                    scales=None) -> Bounds:
    """Admissible lower bound and content-based upper bound on the capacity."""
    if set_.empty:
        return Bounds(0.0, 0.0, float("nan"), 0.0, 0.0)
    if result is None:
        result = capacity_lp(set_, spec, resolution, second=False)
    probes = off_grid_probes(set_, result.measure)
    top = max(float(np.max(potential(result.measure, probes, spec))) if len(probes) else 0.0,
              result.diagnostics.get("max_constraint", 1.0))
    lower = result.capacity / max(top, 1e-300)
    cover = hausdorff_content(set_, spec.theta, scales or dyadic_scales())
    c = calibration_constant(spec.d, spec.k)
    return Bounds(lower, c * cover.content, c, cover.content, result.capacity)


def far_field_mass(measure: DiscreteMeasure, spec: KernelSpec, r: float = 1e3) -> float:
    """``(2 pi r)^{(d-1)/2} U(-r theta)``, which tends to the mass as ``r`` grows."""
    z = -r * np.asarray(spec.theta) if spec.sign == "-" else r * np.asarray(spec.theta)
    return normalization_radius_factor(r, spec.d) * potential(measure, z, spec)
