"""Analytic bounds on harmonic measure and the spectral lower-bound functionals.

All multiplicative constants that the underlying inequalities leave
unspecified are set to one; every result carries the flag
``"unspecified-constant"`` so callers compare rates and ratios only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize, special

from . import montecarlo as mc
from .errors import DomainError, NumericalError
from .geometry import AnnularSector, Ball, Box, Ellipsoid, SetSpec, decompose_polar, hausdorff_content

UNSPECIFIED = "unspecified-constant"
_QUAD = dict(epsabs=0.0, epsrel=1e-10, limit=500)


# --------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class ProfileSpec:
    """Positive scalar function of the axial coordinate.

    kinds and parameters:

    * ``constant``: ``value``
    * ``power``: ``coef * (t + shift) ** alpha``
    * ``sqrt_loglog``: ``sqrt(gamma * t * log(log t))``, defined for ``t > e``
    * ``table``: ``t`` and ``values`` interpolated linearly, constant beyond the ends

    ``clamp_below`` freezes the profile at its value there for smaller ``t``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    clamp_below: float | None = None

    KINDS = ("constant", "power", "sqrt_loglog", "table")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown profile kind {self.kind!r}; expected one of {self.KINDS}")
        required = {"constant": ("value",), "power": ("coef", "shift", "alpha"),
                    "sqrt_loglog": ("gamma",), "table": ("t", "values")}[self.kind]
        missing = [k for k in required if k not in self.params]
        if missing:
            raise DomainError(f"{self.kind} profile is missing {missing}")
        if self.kind == "table":
            t = np.asarray(self.params["t"], float)
            if len(t) < 2 or np.any(np.diff(t) <= 0) or len(t) != len(self.params["values"]):
                raise DomainError("table profile needs increasing abscissae matching the values")

    @classmethod
    def constant(cls, value):
        return cls("constant", {"value": float(value)})

    @classmethod
    def power(cls, coef, shift, alpha):
        return cls("power", {"coef": float(coef), "shift": float(shift), "alpha": float(alpha)})

    @classmethod
    def sqrt_loglog(cls, gamma, clamp_below=None):
        return cls("sqrt_loglog", {"gamma": float(gamma)}, clamp_below)

    @classmethod
    def table(cls, t, values):
        return cls("table", {"t": tuple(map(float, t)), "values": tuple(map(float, values))})

    @cached_property
    def _table(self):
        return np.asarray(self.params["t"], float), np.asarray(self.params["values"], float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.clamp_below is not None:
            t = np.maximum(t, self.clamp_below)
        p = self.params
        with np.errstate(invalid="ignore", divide="ignore"):
            if self.kind == "constant":
                out = np.full(t.shape, p["value"])
            elif self.kind == "power":
                out = p["coef"] * (t + p["shift"]) ** p["alpha"]
            elif self.kind == "sqrt_loglog":
                out = np.sqrt(p["gamma"] * t * np.log(np.log(t)))
            else:
                out = np.interp(t, *self._table)
        return out if out.ndim else float(out)

    def check_positive(self, a, b, n=257):
        vals = self(np.linspace(a, b, n))
        if not np.all(np.isfinite(vals) & (vals > 0)):
            raise DomainError(f"profile is not positive on [{a}, {b}]")

    def is_increasing(self, a, b, n=1025) -> bool:
        vals = self(np.linspace(a, b, n))
        return bool(np.all(np.diff(vals) >= -1e-12 * np.abs(vals[1:])))

    def to_json(self):
        return {"kind": self.kind, "params": dict(self.params), "clamp_below": self.clamp_below}


# --------------------------------------------------------------------------
# cross sections


@dataclass(frozen=True)
class Interval:
    length: float


@dataclass(frozen=True)
class Rectangle:
    a: float
    b: float


@dataclass(frozen=True)
class Disk:
    radius: float


def principal_eigenvalue(shape, cheeger: float | None = None) -> float:
    """First Dirichlet eigenvalue of ``-Laplacian`` on a cross-section.

    ``shape`` is an :class:`Interval`, :class:`Rectangle` or :class:`Disk`, or
    a list of them for a section with several components (the smallest
    eigenvalue wins).  For any other shape pass ``cheeger``, the Cheeger
    constant ``h``, to get the lower estimate ``h**2 / 4``.
    """
    if isinstance(shape, (list, tuple)):
        if not shape:
            raise DomainError("empty list of components")
        return min(principal_eigenvalue(s, cheeger) for s in shape)
    if isinstance(shape, Interval):
        dims = (shape.length,)
    elif isinstance(shape, Rectangle):
        dims = (shape.a, shape.b)
    elif isinstance(shape, Disk):
        dims = (shape.radius,)
    else:
        if cheeger is None:
            raise DomainError(f"no eigenvalue formula for {shape!r}; supply cheeger=h to use h**2/4")
        if not cheeger > 0:
            raise DomainError("Cheeger constant must be positive")
        return cheeger**2 / 4
    if not all(x > 0 for x in dims):
        raise DomainError("section dimensions must be positive")
    if isinstance(shape, Interval):
        return (math.pi / shape.length) ** 2
    if isinstance(shape, Rectangle):
        return math.pi**2 * (shape.a**-2 + shape.b**-2)
    return (special.jn_zeros(0, 1)[0] / shape.radius) ** 2


# --------------------------------------------------------------------------
# upper bounds through the cross-section eigenvalues


@dataclass
class CarlemanBounds:
    bound1: float
    bound2: float
    log_bound1: float
    log_bound2: float
    flags: list

    @property
    def capped(self):
        return min(self.bound1, 1.0), min(self.bound2, 1.0)

    def to_json(self):
        return {"bound1": self.bound1, "bound2": self.bound2, "log_bound1": self.log_bound1,
                "log_bound2": self.log_bound2, "capped": list(self.capped), "flags": self.flags}


def _rate_integral(lam, a, b):
    """``int_a^b sqrt(lambda(u) + 1) du``."""
    if b <= a:
        return 0.0

    def f(u):
        v = float(lam(u))
        if not math.isfinite(v) or v < 0:
            raise DomainError(f"eigenvalue profile undefined or negative at t={u}")
        return math.sqrt(v + 1.0)

    val, _ = integrate.quad(f, a, b, **_QUAD)
    return val


def carleman_upper(lam, R: float, area: float) -> CarlemanBounds:
    """Both eigenvalue-profile upper bounds for the far-end harmonic measure of a tube.

    ``lam`` maps the axial coordinate to the principal eigenvalue of the
    section there.  ``bound1`` keeps the full integral form, ``bound2`` its
    simplified exponential.  Values above one are kept and flagged.
    """
    if not R > 1:
        raise DomainError("tube length must exceed 1")
    if not area > 0:
        raise DomainError("target area must be positive")
    total = _rate_integral(lam, 0.0, R)

    def scaled(t):
        # exp(2 F(t) - 2 F(R)), bounded by 1
        return math.exp(-2.0 * _rate_integral(lam, t, R))

    outer, _ = integrate.quad(scaled, 0.0, R, epsabs=0.0, epsrel=1e-8, limit=200)
    # log(1 + e^{2F(R)} * outer)
    log_inner = np.logaddexp(0.0, 2.0 * total + math.log(outer))
    half_log_area = 0.5 * math.log(area)
    log1 = half_log_area + R - 0.5 * log_inner
    log2 = half_log_area + R - _rate_integral(lam, 0.0, R - 1.0)
    flags = [UNSPECIFIED]
    b1, b2 = math.exp(log1), math.exp(log2)
    if b1 > 1 or b2 > 1:
        flags.append("exceeds-one")
    return CarlemanBounds(b1, b2, float(log1), float(log2), flags)


# --------------------------------------------------------------------------
# lower bound in an expanding tube


def lower_bound_exponent(base, k_profile: ProfileSpec, delta: float, R: float) -> float:
    """Exponent ``-(lambda/2) int_2^R k(t - t**delta)**-2 dt`` of the expanding-tube lower bound.

    ``base`` is the section at ``t = 0``; the section at ``t`` is ``k(t)``
    times it.  The constant in front of the exponential is not estimated.
    """
    if not 0.5 < delta < 1:
        raise DomainError("delta must lie in (1/2, 1)")
    lam = principal_eigenvalue(base)
    if abs(k_profile(0.0) - 1.0) > 1e-9:
        raise DomainError("scaling profile must satisfy k(0) = 1")
    if not k_profile.is_increasing(0.0, max(R, 2.0)):
        raise DomainError("scaling profile must be increasing")
    if R <= 2:
        return 0.0
    val, _ = integrate.quad(lambda t: float(k_profile(t - t**delta)) ** -2, 2.0, R, **_QUAD)
    return -0.5 * lam * val


# --------------------------------------------------------------------------
# series criteria for non-hitting


@dataclass
class SeriesVerdict:
    verdict: str
    exponent: float
    r_squared: float
    partial_sums: np.ndarray
    terms: np.ndarray
    kappa: np.ndarray
    l_n: np.ndarray
    n: np.ndarray
    components: list = field(default_factory=list)

    @property
    def n_used(self):
        return int(self.n[-1]) if len(self.n) else 0

    def to_json(self):
        return {"verdict": self.verdict, "exponent": self.exponent, "r_squared": self.r_squared,
                "n_first": int(self.n[0]) if len(self.n) else None, "n_used": self.n_used,
                "partial_sum": float(self.partial_sums[-1]) if len(self.partial_sums) else 0.0,
                "components": [c.to_json() for c in self.components]}


def _block_minimum(theta, a, b, samples=64):
    t = np.linspace(a, b, samples)
    v = theta(t)
    i = int(np.argmin(v))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, samples - 1)]
    best = float(v[i])
    if hi > lo:
        res = optimize.minimize_scalar(lambda s: float(theta(s)), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10 * hi})
        best = min(best, float(res.fun))
    return best


def _single_series(theta: ProfileSpec, q, eps, N, n_min):
    if n_min is None:
        n_min = 1
        while n_min <= N:
            vals = theta(np.linspace(q**n_min, q ** (n_min + 1), 65))
            if np.all(np.isfinite(vals) & (vals > 0)):
                break
            n_min += 1
    if n_min >= N:
        raise DomainError("profile is not positive on enough blocks for the requested N")
    theta.check_positive(q**n_min, q ** (N + 1))
    n = np.arange(n_min, N + 1)
    kappa = np.array([_block_minimum(theta, q**k, q ** (k + 1)) for k in n])
    log_q = math.log(q)
    log_terms = 0.5 * n * log_q - np.log(kappa) - kappa**2 / (2.0 * np.exp((n + 1) * log_q))
    with np.errstate(over="ignore"):
        terms = np.exp(log_terms)
        partial = np.cumsum(terms)
    with np.errstate(invalid="ignore", divide="ignore"):
        l_n = np.sqrt((2 * log_q + eps) * q ** (n + 1.0) * np.log(n) / log_q)
    tail = n >= max(n_min, N // 2)
    x, y = np.log(n[tail]), log_terms[tail]
    fit = np.polyfit(x, y, 1)
    resid = y - np.polyval(fit, x)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    s = -float(fit[0])
    if s > 1.1 and r2 > 0.95:
        verdict = "converges"
    elif s < 0.9:
        verdict = "diverges"
    else:
        verdict = "inconclusive"
    return SeriesVerdict(verdict, s, r2, partial, terms, kappa, l_n, n)


def series_criterion(profiles, q: float, eps: float = 0.1, N: int = 500, n_min: int | None = None) -> SeriesVerdict:
    """Decide whether ``sum_n q**(n/2) / kappa_n * exp(-kappa_n**2 / (2 q**(n+1)))`` converges.

    ``kappa_n`` is the minimum of the half-width profile over ``[q**n, q**(n+1)]``.
    The verdict comes from a power-law fit ``n**-s`` of the terms over
    ``[N/2, N]``: converges when ``s > 1.1`` with ``R^2 > 0.95``, diverges when
    ``s < 0.9``.  Summation starts at ``n_min``, by default the first block
    on which the profile is positive.  With two profiles (a box section)
    both series must converge.
    """
    if not q > 1:
        raise DomainError("q must exceed 1")
    if not eps > 0:
        raise DomainError("eps must be positive")
    if isinstance(profiles, ProfileSpec):
        profiles = [profiles]
    if not 1 <= len(profiles) <= 2:
        raise DomainError("give one or two profiles")
    parts = [_single_series(p, q, eps, N, n_min) for p in profiles]
    if len(parts) == 1:
        return parts[0]
    verdicts = {p.verdict for p in parts}
    if verdicts == {"converges"}:
        overall = "converges"
    elif "diverges" in verdicts:
        overall = "diverges"
    else:
        overall = "inconclusive"
    worst = min(parts, key=lambda p: p.exponent)
    return SeriesVerdict(overall, worst.exponent, worst.r_squared, worst.partial_sums, worst.terms,
                         worst.kappa, worst.l_n, worst.n, components=parts)


# --------------------------------------------------------------------------
# the planar angular test series


def arc_distance(theta, a, b):
    """Arclength from ``exp(i theta)`` to the arc ``[a, b)`` of the unit circle."""
    width = b - a
    rel = np.mod(np.asarray(theta, float) - a, 2 * np.pi)
    inside = rel < width
    return np.where(inside, 0.0, np.minimum(rel - width, 2 * np.pi - rel))


@dataclass
class PhiSeries:
    """Precomputed content terms of the angular series for one planar set."""

    contents: dict  # (n, j) -> content in direction 2 pi j / 2^n
    n0: int = 0
    n_max: int | None = None

    @classmethod
    def from_set(cls, set_: SetSpec, n0: int = 0, n_max: int | None = None):
        family = decompose_polar(set_) if not set_.empty else {}
        return cls.from_family(family, n0, n_max)

    @classmethod
    def from_family(cls, family: dict, n0: int = 0, n_max: int | None = None):
        contents = {}
        for (n, j), piece in family.items():
            if n < n0 or (n_max is not None and n > n_max):
                continue
            ang = 2 * math.pi * j / 2**n
            contents[(n, j)] = hausdorff_content(piece, theta=np.array([math.cos(ang), math.sin(ang)])).content
        return cls(contents, n0, n_max)

    def tail_bound(self):
        top = self.n_max if self.n_max is not None else max((n for n, _ in self.contents), default=self.n0 - 1)
        start = max(top + 1, self.n0)
        total = 0.0
        for n in range(start, start + 64):
            term = math.exp(n * math.log(4.0) - 4.0 ** (n - 1))
            total += term
            if term < 1e-300 or term < 1e-17 * total:
                break
        return total

    def __call__(self, theta):
        theta = np.atleast_1d(np.asarray(theta, float))
        out = np.zeros(theta.shape)
        for (n, j), m in self.contents.items():
            w = 2 * math.pi / 2**n
            centre = j * w
            dist = arc_distance(theta, j * w, (j + 1) * w)
            out += m * (2.0**-n + np.abs(np.sin(theta - centre))) * np.exp(-(4.0**n) * (1 - np.cos(dist)))
        return out


def phi_theta(set_or_family, theta, n0: int = 0, n_max: int | None = None):
    """Value of the angular series at ``theta`` and the bound on the omitted tail.

    ``set_or_family`` is a planar :class:`SetSpec` (split into polar cells
    here) or an already split ``{(n, j): SetSpec}`` family.
    """
    if isinstance(set_or_family, PhiSeries):
        series = set_or_family
    elif isinstance(set_or_family, SetSpec):
        series = PhiSeries.from_set(set_or_family, n0, n_max)
    else:
        series = PhiSeries.from_family(set_or_family, n0, n_max)
    value = series(theta)
    tail = series.tail_bound()
    scalar = np.ndim(theta) == 0
    return (float(value[0]) if scalar else value), tail


# --------------------------------------------------------------------------
# spectral lower-bound functionals


def _radial_integral(prim, g, d):
    """``int_prim g(|x|) dx`` by adaptive cubature in coordinates adapted to the primitive."""
    opts = {"epsrel": 1e-9, "epsabs": 0.0, "limit": 200}
    if prim.thin:
        return 0.0
    if isinstance(prim, Ball):
        c = float(np.linalg.norm(prim._c))
        a = prim.radius
        if d == 2:
            f = lambda phi, rho: g(math.sqrt(c * c + rho * rho + 2 * rho * c * math.cos(phi))) * rho
            val, _ = integrate.nquad(f, [(0, 2 * math.pi), (0, a)], opts=opts)
            return val
        if d == 3:
            f = lambda phi, rho: (g(math.sqrt(max(c * c + rho * rho + 2 * rho * c * math.cos(phi), 0.0)))
                                  * rho * rho * math.sin(phi))
            val, _ = integrate.nquad(f, [(0, math.pi), (0, a)], opts=opts)
            return 2 * math.pi * val
    if isinstance(prim, Ellipsoid) and d == 3:
        A, c = prim._A, prim._c
        jac = abs(np.linalg.det(A))

        def f(psi, phi, rho):
            u = rho * np.array([math.sin(phi) * math.cos(psi), math.sin(phi) * math.sin(psi), math.cos(phi)])
            return g(float(np.linalg.norm(c + A @ u))) * rho * rho * math.sin(phi)

        val, _ = integrate.nquad(f, [(0, 2 * math.pi), (0, math.pi), (0, 1)], opts={**opts, "epsrel": 1e-7})
        return jac * val
    if isinstance(prim, Box):
        E, a = prim._E, prim._a
        jac = abs(np.linalg.det(E))
        f = lambda *s: g(float(np.linalg.norm(a + np.asarray(s) @ E)))
        val, _ = integrate.nquad(f, [(0, 1)] * d, opts={**opts, "epsrel": 1e-7})
        return jac * val
    if isinstance(prim, AnnularSector):
        c = prim._c
        f = lambda phi, r: g(math.hypot(c[0] + r * math.cos(phi), c[1] + r * math.sin(phi))) * r
        val, _ = integrate.nquad(f, [(prim.theta_min, prim.theta_max), (prim.r_min, prim.r_max)], opts=opts)
        return val
    raise DomainError(f"no quadrature rule for {prim.kind} in dimension {d}")


def _sphere_area(d):
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def integrate_radial_weight(V: mc.PotentialSpec, d: int, g) -> float:
    """``int V(x) g(|x|) dx``; primitives within one piece are taken to be disjoint."""
    total = 0.0
    for c, s in V.pieces:
        if c == 0:
            continue
        if s.dimension != d:
            raise DomainError("potential dimension differs from d")
        total += c * sum(_radial_integral(p, g, d) for p in s.primitives)
    if V.profile_radii and any(V.profile_values):
        rad = np.asarray(V.profile_radii, float)
        vals = np.asarray(V.profile_values, float)
        area = _sphere_area(d)
        f = lambda r: float(np.interp(r, rad, vals)) * g(r) * area * r ** (d - 1)
        val, _ = integrate.quad(f, 0.0, float(rad.max()), points=list(rad[1:-1]), **_QUAD)
        total += val
    return float(total)


def c01_rhs(V: mc.PotentialSpec, d: int) -> float:
    """``-int V(x) / (|x|**(d-1) + 1) dx``, the right-hand side of the entropy estimate.

    The two constants multiplying it are unspecified and taken as one.
    """
    return -integrate_radial_weight(V, d, lambda r: 1.0 / (r ** (d - 1) + 1.0))


def _sample_weight(f: mc.PotentialSpec, d: int, n: int, seed: int):
    """``n`` points distributed as ``f / int f`` by rejection from the support's bounding box."""
    support = f.support(d)
    lo, hi = support.bbox()
    ceiling = sum(c for c, _ in f.pieces) + max(f.profile_values, default=0.0)
    rng = mc.start_stream(seed, purpose=7)
    out = np.empty((0, d))
    for _ in range(10_000):
        if len(out) >= n:
            break
        batch = max(1024, 2 * (n - len(out)))
        P = lo + (hi - lo) * rng.random((batch, d))
        keep = rng.random(batch) * ceiling < f(P)
        out = np.concatenate([out, P[keep]])
    if len(out) < n:
        raise NumericalError("rejection sampling of the weight did not converge", {"accepted": len(out)})
    return out[:n]


def th2_rhs(V: mc.PotentialSpec, f: mc.PotentialSpec, cfg: mc.SimConfig, d: int) -> mc.Estimate:
    """``int f * E exp(-1/2 int_0^inf V(X))`` with starts drawn from ``f``, up to an unspecified constant."""
    mass = integrate_radial_weight(f, d, lambda r: 1.0)
    if not mass > 0:
        raise DomainError("the weight f integrates to zero")
    flags = {"flags": [UNSPECIFIED], "weight_mass": mass}
    if V.zero:
        return mc.Estimate(mass, 0.0, cfg.n_paths, cfg.echo(), flags)
    starts = _sample_weight(f, d, cfg.n_paths, cfg.seed)
    walk = mc.Walk(d, starts, None, group_size=1, potential=V, horizon_offset=cfg.horizon_offset)
    rec = mc.run(walk, cfg)
    weights = np.exp(-0.5 * rec.functional)
    return mc.Estimate.from_samples(weights, cfg, scale=mass, weights=weights, touched=rec.touched, **flags)
