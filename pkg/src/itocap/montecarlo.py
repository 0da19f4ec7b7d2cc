"""Path simulation of the drifted processes and the Monte Carlo estimators built on it.

Two processes are simulated: ``G_t = x0 + t theta + B_t`` (constant unit
drift) and ``X_t`` driven by the radial Bessel drift of :mod:`itocap.specfun`.

Random numbers come from counter-based Philox streams.  Paths are grouped in
fixed blocks of ``block_size``; the stream for block ``b`` at step ``n`` has
key ``(seed, b)`` and counter ``(0, n, purpose, 0)``.  A path therefore sees
the same increments whichever worker runs its block, and per-path results
are assembled in path-index order, so estimates do not depend on the worker
count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from . import specfun
from .errors import DomainError
from .geometry import Ball, SetSpec

HIT, ESCAPED, TIMEOUT, SIDE, BACK, MISSED = 1, 0, 2, 3, 4, 5
OUTCOMES = {ESCAPED: "escaped", HIT: "hit", TIMEOUT: "timeout", SIDE: "side_wall",
            BACK: "back_wall", MISSED: "far_end_outside_target"}

_PURPOSE_STEP, _PURPOSE_SUB, _PURPOSE_START = 0, 1, 2


def default_workers() -> int:
    return max(1, int(os.environ.get("ITOCAP_WORKERS", "1")))


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a Monte Carlo estimate.

    ``dt`` is the step used close to obstacles and inside potentials; far from
    them the step grows (up to ``dt_max``) as long as a ``safety``-sigma
    excursion stays within half the clearance.  ``horizon_offset`` is how far
    past the obstacle (along the drift) paths are followed.
    """

    seed: int = 0
    n_paths: int = 10_000
    dt: float = 0.01
    dt_max: float = 1000.0
    horizon_offset: float = 20.0
    t_max: float | None = None
    substeps: int = 4
    safety: float = 5.0
    workers: int | None = None
    block_size: int = 4096
    bridge: bool = False
    keep_paths: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.dt_max >= self.dt:
            raise DomainError("need 0 < dt <= dt_max")
        if self.n_paths < 1:
            raise DomainError("n_paths must be at least 1")
        if self.substeps < 1 or self.block_size < 1:
            raise DomainError("substeps and block_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def n_workers(self):
        return self.workers if self.workers else default_workers()

    def echo(self):
        out = asdict(self)
        out.pop("workers")
        return out


@dataclass
class PathRecord:
    """Per-path outcome, exit time, exit point and accumulated functional."""

    code: np.ndarray
    time: np.ndarray
    point: np.ndarray
    functional: np.ndarray
    touched: np.ndarray

    @staticmethod
    def concat(parts):
        return PathRecord(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("code", "time", "point", "functional", "touched")))

    def write_trace(self, path):
        """Binary dump: per path int64 index, int8 code, float64 exit point, float64 functional."""
        d = self.point.shape[1]
        dtype = np.dtype([("index", "<i8"), ("code", "i1"), ("point", "<f8", (d,)), ("functional", "<f8")])
        rec = np.empty(len(self.code), dtype=dtype)
        rec["index"] = np.arange(len(self.code))
        rec["code"] = self.code
        rec["point"] = self.point
        rec["functional"] = self.functional
        rec.tofile(path)


@dataclass
class Estimate:
    value: float
    std_error: float
    n_paths: int
    config: dict
    extra: dict = field(default_factory=dict)
    paths: PathRecord | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, samples, cfg: SimConfig, scale=1.0, **extra):
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        value = float(np.sum(samples) / n)
        se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        return cls(value * scale, se * scale, n, cfg.echo(), extra)

    def interval(self, z=1.96):
        return self.value - z * self.std_error, self.value + z * self.std_error

    def to_json(self):
        return {"value": self.value, "std_error": self.std_error, "n_paths": self.n_paths,
                "config": self.config, **{k: v for k, v in self.extra.items() if _jsonable(v)}}


def _jsonable(v):
    return isinstance(v, (int, float, str, bool, list, dict, type(None)))


def _normals(seed, block, step, purpose, shape):
    key = np.array([seed, block], dtype=np.uint64)
    counter = np.array([0, step, purpose, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter)).standard_normal(shape)


def start_stream(seed, purpose=_PURPOSE_START):
    """Generator for auxiliary draws (start points, sampling) tied to a seed."""
    key = np.array([seed, 2**63 + purpose], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def step_size(clearance, speed, cfg: SimConfig):
    """Largest ``s`` in ``[dt, dt_max]`` with ``speed*s + safety*sqrt(s) <= clearance/2``."""
    half = 0.5 * clearance
    c = cfg.safety
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.where(speed > 0, (-c + np.sqrt(c * c + 4 * speed * half)) / (2 * np.maximum(speed, 1e-300)),
                        half / c)
    root = np.where(np.isfinite(clearance), root, np.inf)
    return np.clip(root * root, cfg.dt, cfg.dt_max)


# --------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    """``V = sum_m c_m 1[x in S_m] + profile(|x|) 1[|x| <= radius]``, all terms nonnegative.

    ``profile`` is given as a table ``(radii, values)`` interpolated linearly.
    """

    pieces: tuple = ()
    profile_radii: tuple = ()
    profile_values: tuple = ()

    def __post_init__(self):
        for c, s in self.pieces:
            if c < 0:
                raise DomainError("potential must be nonnegative")
            if not isinstance(s, SetSpec):
                raise DomainError("potential pieces are (constant, SetSpec) pairs")
        if len(self.profile_radii) != len(self.profile_values):
            raise DomainError("profile radii and values differ in length")
        if any(v < 0 for v in self.profile_values):
            raise DomainError("potential must be nonnegative")

    @property
    def zero(self):
        return all(c == 0 for c, _ in self.pieces) and not any(self.profile_values)

    @property
    def dimension(self):
        return self.pieces[0][1].dimension if self.pieces else None

    def scaled(self, factor):
        if factor < 0:
            raise DomainError("potential must be nonnegative")
        return PotentialSpec(tuple((c * factor, s) for c, s in self.pieces), self.profile_radii,
                             tuple(v * factor for v in self.profile_values))

    def support(self, d) -> SetSpec:
        prims = tuple(p for c, s in self.pieces if c > 0 for p in s.primitives)
        if self.profile_radii and any(self.profile_values):
            prims += (Ball(np.zeros(d), max(self.profile_radii)),)
        return SetSpec(d, prims, "support")

    def __call__(self, X, candidates=None):
        X = np.atleast_2d(X)
        out = np.zeros(len(X))
        rows = np.arange(len(X)) if candidates is None else np.nonzero(candidates)[0]
        if not len(rows):
            return out
        Y = X[rows]
        vals = np.zeros(len(rows))
        for c, s in self.pieces:
            if c > 0:
                vals += c * s.contains(Y)
        if self.profile_radii:
            r = np.linalg.norm(Y, axis=1)
            rad = np.asarray(self.profile_radii)
            inside = r <= rad.max()
            vals += np.where(inside, np.interp(r, rad, self.profile_values), 0.0)
        out[rows] = vals
        return out


# --------------------------------------------------------------------------
# walks: what is simulated and which events stop a path


class Walk:
    """Free-space walk: start points and drift directions per path group.

    Paths with index ``i`` belong to group ``i // group_size``.  ``directions``
    is ``None`` for the Bessel-drift process.
    """

    def __init__(self, d, starts, directions=None, group_size=1, obstacle=None, potential=None,
                 horizon_offset=20.0, t_max=None, radial_horizon=None):
        self.d = d
        self.starts = np.atleast_2d(np.asarray(starts, float))
        self.directions = None if directions is None else np.atleast_2d(np.asarray(directions, float))
        self.group_size = int(group_size)
        self.obstacle = obstacle if obstacle is not None and not obstacle.empty else None
        self.potential = potential if potential is not None and not potential.zero else None
        self.support = self.potential.support(d) if self.potential else None
        self.bessel = directions is None
        targets = [s for s in (self.obstacle, self.support) if s is not None]
        if self.bessel:
            reach = max((float(np.max(np.abs(np.concatenate(s.bbox())))) * math.sqrt(d) for s in targets),
                        default=0.0)
            base = max(reach, float(np.linalg.norm(self.starts, axis=1).max()))
            self.horizon = np.array([radial_horizon or base + horizon_offset])
        else:
            h = []
            for g, theta in enumerate(self.directions):
                top = max((s.max_projection(theta) for s in targets), default=-np.inf)
                start = float(self.starts[min(g, len(self.starts) - 1)] @ theta)
                h.append(max(top, start) + horizon_offset)
            self.horizon = np.array(h)
        self.t_max = t_max

    def groups(self, idx):
        return idx // self.group_size

    def init(self, idx):
        g = self.groups(idx)
        return self.starts[np.minimum(g, len(self.starts) - 1)].copy()

    def drift(self, X, g):
        if self.bessel:
            return specfun.drift(X, self.d)
        return self.directions[np.minimum(g, len(self.directions) - 1)]

    def clearance(self, X, t, g):
        D = np.full(len(X), np.inf)
        for s in (self.obstacle, self.support):
            if s is not None:
                D = np.minimum(D, s.lower_distance(X))
        return D

    def check(self, X0, X1, t1, D0, g):
        code = np.zeros(len(X1), dtype=np.int8)
        if self.obstacle is not None:
            reach = np.linalg.norm(X1 - X0, axis=1)
            cand = np.nonzero(D0 <= reach + 1e-12)[0]
            if len(cand):
                hit = self.obstacle.contains(X1[cand])
                if self.obstacle.has_thin:
                    rest = cand[~hit]
                    hit_thin = self.obstacle.crossing(X0[rest], X1[rest])
                    code[rest[hit_thin]] = HIT
                code[cand[hit]] = HIT
        if self.bessel:
            far = np.linalg.norm(X1, axis=1) > self.horizon[0]
        else:
            gi = np.minimum(g, len(self.directions) - 1)
            far = np.sum(X1 * self.directions[gi], axis=1) > self.horizon[np.minimum(g, len(self.horizon) - 1)]
        code[(code == 0) & far] = ESCAPED_FLAG
        return code


ESCAPED_FLAG = 9  # internal: escaped past the horizon (reported as ESCAPED)


class TubeWalk:
    """Drifted walk ``G`` in a tube ``{-1 < x1 < length, x' in width(x1) * section}``.

    The section is the interval or square ``|x'_i| < 1`` or the unit disk,
    scaled by ``half_width``: a number, or a function of ``x1`` (it must be
    picklable when several workers are used).  Reaching ``x1 = length`` with ``x'`` in the
    target region counts as a hit.
    """

    def __init__(self, d, half_width, length, section="box", target_half_width=None, start=None):
        if d not in (2, 3):
            raise DomainError("tubes are implemented for d in {2, 3}")
        if section not in ("box", "disk"):
            raise DomainError("section must be 'box' or 'disk'")
        self.d = d
        self.half_width = half_width if callable(half_width) else float(half_width)
        self.length = float(length)
        self.section = section
        self.target = target_half_width
        self.start = np.zeros(d) if start is None else np.asarray(start, float)
        self.bessel = False
        self.obstacle = None
        self.potential = None
        self.t_max = None

    def init(self, idx):
        return np.tile(self.start, (len(idx), 1))

    def drift(self, X, g):
        e = np.zeros(self.d)
        e[0] = 1.0
        return e

    def groups(self, idx):
        return np.zeros(len(idx), dtype=int)

    def _lateral(self, X):
        Y = X[:, 1:]
        return np.abs(Y).max(axis=1) if self.section == "box" else np.linalg.norm(Y, axis=1)

    def clearance(self, X, t, g):
        w = self._width(X[:, 0])
        side = w - self._lateral(X)
        ends = np.minimum(X[:, 0] + 1.0, self.length - X[:, 0])
        return np.maximum(np.minimum(side, ends), 0.0)

    def _width(self, axial):
        if not callable(self.half_width):
            return np.full_like(axial, self.half_width)
        return np.asarray(self.half_width(np.maximum(axial, -1.0)), dtype=float) * np.ones_like(axial)

    def check(self, X0, X1, t1, D0, g):
        code = np.zeros(len(X1), dtype=np.int8)
        ax = X1[:, 0]
        lat = self._lateral(X1)
        inside_lat = lat < self._width(np.minimum(ax, self.length))
        done = ax >= self.length
        if self.target is None:
            on_target = inside_lat
        else:
            on_target = lat < self.target
        code[done & on_target] = HIT
        code[done & ~on_target] = MISSED
        code[(code == 0) & (ax <= -1.0)] = BACK
        code[(code == 0) & ~inside_lat] = SIDE
        return code


# --------------------------------------------------------------------------
# engine


def _simulate_block(walk, cfg: SimConfig, block: int):
    B = cfg.block_size
    lo = block * B
    n = min(B, cfg.n_paths - lo)
    idx = lo + np.arange(n)
    g_all = walk.groups(idx)
    d = walk.d
    X = walk.init(idx)
    t = np.zeros(n)
    code = np.zeros(n, dtype=np.int8)
    functional = np.zeros(n)
    touched = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    pot = walk.potential
    t_max = cfg.t_max if cfg.t_max is not None else walk.t_max
    if pot is not None:
        v_now = pot(X)
        touched |= walk.support.contains(X)
    else:
        v_now = np.zeros(n)
    if walk.obstacle is not None:
        start_hit = walk.obstacle.contains(X)
        code[start_hit] = HIT
        alive &= ~start_hit
    step = 0
    while alive.any():
        a = np.nonzero(alive)[0]
        Z = _normals(cfg.seed, block, step, _PURPOSE_STEP, (B, d))[a]
        x = X[a]
        g = g_all[a]
        D = walk.clearance(x, t[a], g)
        b = walk.drift(x, g)
        b = np.broadcast_to(b, x.shape)
        speed = np.linalg.norm(b, axis=1)
        dt = step_size(D, speed, cfg)
        if walk.bessel:
            r = np.linalg.norm(x, axis=1)
            dt = np.minimum(dt, np.where(r < 1.0, cfg.dt, np.maximum(cfg.dt, 0.05 * r)))
        if t_max is not None:
            dt = np.minimum(dt, np.maximum(t_max - t[a], 1e-12))
        inc = b * dt[:, None] + np.sqrt(dt)[:, None] * Z
        x_new = x + inc
        fine = (np.linalg.norm(inc, axis=1) > 0.5 * D) & (dt <= cfg.dt * (1 + 1e-12)) & (cfg.substeps > 1)
        new_code = np.zeros(len(a), dtype=np.int8)
        v_new = np.zeros(len(a))
        integral = np.zeros(len(a))
        if (~fine).any():
            c = np.nonzero(~fine)[0]
            new_code[c], v_new[c], integral[c], tch = _advance(walk, x[c], x_new[c], t[a[c]] + dt[c], D[c],
                                                                 g[c], v_now[a[c]], dt[c], cfg, pot)
            touched[a[c]] |= tch
        if fine.any():
            f = np.nonzero(fine)[0]
            m = cfg.substeps
            Zs = _normals(cfg.seed, block, step, _PURPOSE_SUB, (m, B, d))[:, a[f]]
            h = dt[f] / m
            xs = x[f].copy()
            vs = v_now[a[f]].copy()
            live = np.ones(len(f), dtype=bool)
            acc = np.zeros(len(f))
            for k in range(m):
                li = np.nonzero(live)[0]
                bk = np.broadcast_to(walk.drift(xs[li], g[f][li]), (len(li), d))
                x_next = xs[li] + bk * h[li, None] + np.sqrt(h[li])[:, None] * Zs[k, li]
                Dk = walk.clearance(xs[li], t[a[f][li]], g[f][li]) if k else D[f][li]
                ck, vk, ik, tch = _advance(walk, xs[li], x_next, t[a[f][li]] + (k + 1) * h[li], Dk, g[f][li],
                                           vs[li], h[li], cfg, pot)
                touched[a[f][li]] |= tch
                acc[li] += ik
                xs[li] = x_next
                vs[li] = vk
                stopped = ck != 0
                new_code[f[li[stopped]]] = ck[stopped]
                live[li[stopped]] = False
                if not live.any():
                    break
            x_new[f] = xs
            v_new[f] = vs
            integral[f] = acc
        X[a] = x_new
        t[a] += dt
        v_now[a] = v_new
        functional[a] += integral
        if t_max is not None:
            over = (new_code == 0) & (t[a] >= t_max - 1e-12)
            new_code[over] = TIMEOUT
        done = new_code != 0
        code[a[done]] = np.where(new_code[done] == ESCAPED_FLAG, ESCAPED, new_code[done])
        alive[a[done]] = False
        step += 1
    return PathRecord(code, t, X, functional, touched)


def _advance(walk, x0, x1, t1, D0, g, v0, h, cfg, pot):
    code = walk.check(x0, x1, t1, D0, g)
    tch = np.zeros(len(x1), dtype=bool)
    if pot is None:
        return code, np.zeros(len(x1)), np.zeros(len(x1)), tch
    reach = np.linalg.norm(x1 - x0, axis=1)
    near = walk.support.lower_distance(x0) <= reach + 1e-12
    v1 = pot(x1, near)
    tch[near] = walk.support.contains(x1[near])
    return code, v1, 0.5 * (v0 + v1) * h, tch


def run(walk, cfg: SimConfig) -> PathRecord:
    """Simulate all paths block by block (in parallel when ``workers > 1``)."""
    n_blocks = -(-cfg.n_paths // cfg.block_size)
    workers = min(cfg.n_workers, n_blocks)
    if workers <= 1:
        parts = [_simulate_block(walk, cfg, b) for b in range(n_blocks)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_block, [walk] * n_blocks, [cfg] * n_blocks, range(n_blocks)))
    return PathRecord.concat(parts)


# --------------------------------------------------------------------------
# estimators


def _unit(theta, d):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d,) or not np.linalg.norm(theta) > 0:
        raise DomainError("direction must be a nonzero vector of length d")
    return theta / np.linalg.norm(theta)


def simulate_X(x0, cfg: SimConfig, d: int, t_end: float) -> PathRecord:
    """Positions of the Bessel-drift process at time ``t_end`` (no obstacles)."""
    x0 = np.asarray(x0, float)
    if x0.shape != (d,):
        raise DomainError(f"start point must have {d} coordinates")
    walk = Walk(d, x0, None, group_size=cfg.n_paths, radial_horizon=np.inf)
    return run(walk, _with(cfg, t_max=t_end))


def simulate_G(x0, theta, cfg: SimConfig, t_end: float) -> PathRecord:
    """Positions of ``x0 + t theta + B_t`` at time ``t_end`` (no obstacles)."""
    x0 = np.asarray(x0, float)
    theta = _unit(theta, len(x0))
    walk = Walk(len(x0), x0, theta, group_size=cfg.n_paths, horizon_offset=np.inf)
    return run(walk, _with(cfg, t_max=t_end))


def _with(cfg, **kw):
    data = asdict(cfg)
    data.update(kw)
    return SimConfig(**data)


def hit_probability(set_: SetSpec, x0, theta, cfg: SimConfig) -> Estimate:
    """Fraction of paths from ``x0`` that reach the set before the horizon.

    ``theta`` is a drift direction for ``G`` or the string ``"bessel"`` for ``X``.
    """
    d = set_.dimension
    x0 = np.asarray(x0, float)
    if x0.shape != (d,):
        raise DomainError(f"start point must have {d} coordinates")
    if set_.empty:
        return Estimate(0.0, 0.0, cfg.n_paths, cfg.echo(), {"outcomes": {"escaped": cfg.n_paths}})
    if set_.contains(x0[None, :])[0]:
        raise DomainError("start point lies inside the set")
    direction = None if isinstance(theta, str) and theta == "bessel" else _unit(theta, d)
    walk = Walk(d, x0, direction, group_size=cfg.n_paths, obstacle=set_, horizon_offset=cfg.horizon_offset)
    rec = run(walk, cfg)
    est = Estimate.from_samples(rec.code == HIT, cfg, outcomes=_tally(rec.code))
    if cfg.keep_paths:
        est.paths = rec
    return est


def _tally(code):
    vals, counts = np.unique(code, return_counts=True)
    return {OUTCOMES[int(v)]: int(c) for v, c in zip(vals, counts)}


def hit_probability_angles(set_: SetSpec, angles, cfg: SimConfig, x0=None) -> list[Estimate]:
    """Planar hitting probabilities for drift directions ``(cos a, sin a)``, one batch.

    Paths ``[m * n_paths, (m + 1) * n_paths)`` use angle ``m``; each angle's
    estimate uses its own ``n_paths`` paths.
    """
    if set_.dimension != 2:
        raise DomainError("angle sweeps are planar")
    angles = np.asarray(angles, float)
    x0 = np.zeros(2) if x0 is None else np.asarray(x0, float)
    dirs = np.stack([np.cos(angles), np.sin(angles)], 1)
    per = cfg.n_paths
    total = _with(cfg, n_paths=per * len(angles))
    walk = Walk(2, x0, dirs, group_size=per, obstacle=set_, horizon_offset=cfg.horizon_offset)
    rec = run(walk, total)
    out = []
    for m in range(len(angles)):
        sl = slice(m * per, (m + 1) * per)
        out.append(Estimate.from_samples(rec.code[sl] == HIT, cfg, angle=float(angles[m])))
    return out


def feynman_kac(V: PotentialSpec, x0, mode, cfg: SimConfig, d: int | None = None) -> Estimate:
    """``E exp(-1/2 int_0^inf V)`` along ``G`` (``mode`` a direction) or ``X`` (``mode="sphere"``).

    The per-path weights, and whether each path entered the support of ``V``,
    are returned in ``extra`` for pathwise comparisons.
    """
    x0 = np.asarray(x0, float)
    d = d or len(x0)
    if V.dimension not in (None, d):
        raise DomainError("potential and start point dimensions differ")
    if V.zero:
        ones = np.ones(cfg.n_paths)
        return Estimate(1.0, 0.0, cfg.n_paths, cfg.echo(), {"weights": ones, "touched": np.zeros(cfg.n_paths, bool)})
    direction = None if isinstance(mode, str) else _unit(mode, d)
    if isinstance(mode, str) and mode not in ("sphere", "bessel"):
        raise DomainError("mode must be a direction vector or 'sphere'")
    walk = Walk(d, x0, direction, group_size=cfg.n_paths, potential=V, horizon_offset=cfg.horizon_offset)
    rec = run(walk, cfg)
    weights = np.exp(-0.5 * rec.functional)
    est = Estimate.from_samples(weights, cfg, weights=weights, touched=rec.touched,
                                outcomes=_tally(rec.code))
    if cfg.keep_paths:
        est.paths = rec
    return est


def sweeping_mass(set_: SetSpec, cfg: SimConfig, rho: float = 20.0) -> Estimate:
    """Mass of the sweeping of transverse Lebesgue measure onto the set.

    Integrates the hitting probability from ``(0, y')`` over ``|y'| <= rho``
    with one path per stratified start point; a Gaussian bound for
    ``|y'| > rho`` is added to the error bar.
    """
    d = set_.dimension
    if set_.empty:
        return Estimate(0.0, 0.0, cfg.n_paths, cfg.echo(), {"tail_bound": 0.0})
    lo, hi = set_.bbox()
    if lo[0] <= 1:
        raise DomainError("the set must lie in {x1 > 1}")
    n = cfg.n_paths
    rng = start_stream(cfg.seed)
    starts = np.zeros((n, d))
    if d == 3:
        # equal-area rings, one start point per ring, uniform angle
        r = rho * np.sqrt((np.arange(n) + rng.random(n)) / n)
        phi = 2 * math.pi * rng.random(n)
        starts[:, 1] = r * np.cos(phi)
        starts[:, 2] = r * np.sin(phi)
        area = math.pi * rho * rho
    elif d == 2:
        starts[:, 1] = -rho + 2 * rho * (np.arange(n) + rng.random(n)) / n
        area = 2 * rho
    else:
        raise DomainError("sweeping is implemented for d in {2, 3}")
    walk = Walk(d, starts, np.eye(d)[0], group_size=1, obstacle=set_, horizon_offset=cfg.horizon_offset)
    walk.horizon = np.full(1, walk.horizon.max())
    walk.directions = np.eye(d)[:1]
    rec = run(walk, cfg)
    est = Estimate.from_samples(rec.code == HIT, cfg, scale=area)
    tail = sweeping_tail_bound(set_, rho)
    est.extra.update({"tail_bound": tail, "rho": rho, "area": area})
    if tail > 0.5 * est.value:
        raise DomainError(f"rho={rho} too small: tail bound {tail:.3g} exceeds half the estimate {est.value:.3g}")
    est.std_error += tail
    return est


def sweeping_tail_bound(set_: SetSpec, rho: float) -> float:
    """Gaussian bound on the hitting integral over ``|y'| > rho``.

    A path must drift laterally by ``|y'| - R`` (``R`` the lateral radius of
    the set) during a time of order ``tau = x1_max + 3 sqrt(x1_max)``.
    """
    lo, hi = set_.bbox()
    d = set_.dimension
    lateral = float(np.max(np.linalg.norm(np.stack([lo[1:], hi[1:]]), axis=1)))
    tau = hi[0] + 3 * math.sqrt(hi[0])

    def density(r):
        return math.exp(-max(r - lateral, 0.0) ** 2 / (2 * tau)) * (2 * math.pi * r if d == 3 else 2.0)

    val, _ = integrate.quad(density, rho, np.inf)
    return float(val)


def harmonic_measure_tube(half_width, R: float, cfg: SimConfig, d: int = 2, section="box",
                          target_half_width=None, x0=None) -> Estimate:
    """Probability that ``G`` leaves the tube through its far end ``x1 = R`` (inside the target)."""
    walk = TubeWalk(d, half_width, R, section, target_half_width, x0)
    rec = run(walk, cfg)
    est = Estimate.from_samples(rec.code == HIT, cfg, outcomes=_tally(rec.code))
    if cfg.keep_paths:
        est.paths = rec
    return est


def transition_check(x, y, t: float, cfg: SimConfig, radius: float = 0.25) -> Estimate:
    """Ratio of the simulated density of ``X_t`` near ``y`` to the comparison density."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = len(x)
    if np.linalg.norm(x) < 3 or np.linalg.norm(y) < 3:
        raise DomainError("both points must satisfy |x|, |y| >= 3")
    reference = specfun.transition_density(x, y, t, d)
    ball_vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d
    if reference * ball_vol * cfg.n_paths < 1e-3:
        return Estimate(float("nan"), float("nan"), cfg.n_paths, cfg.echo(),
                        {"skipped": True, "reference": reference, "reason": "deep tail"})
    rec = simulate_X(x, cfg, d, t)
    inside = np.linalg.norm(rec.point - y, axis=1) <= radius
    hits = int(inside.sum())
    if hits == 0:
        return Estimate(float("nan"), float("nan"), cfg.n_paths, cfg.echo(),
                        {"undefined_ratio": True, "reference": reference})
    scale = 1.0 / (ball_vol * reference)
    return Estimate.from_samples(inside, cfg, scale=scale, hits=hits, reference=reference)
