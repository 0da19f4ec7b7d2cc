"""Modified Bessel functions of the first kind, the radial drift field and the
comparison transition density of the drifted diffusion.

The Bessel routines work with exponentially scaled quantities
``I_nu(r) * exp(-r)`` throughout, so arguments far beyond the double
overflow threshold stay representable.  Small arguments use the power series,
large ones the Hankel asymptotic expansion; the crossover sits at
``r = 15 * (1 + nu)`` where both agree to roughly machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_MAX_TERMS = 600
_TINY = 1e-17


def crossover(nu: float) -> float:
    """Argument above which the asymptotic expansion replaces the series."""
    return 15.0 * (1.0 + nu)


def _series_scaled(nu, r):
    """Series for I_nu(r) e^{-r} and I'_nu(r) e^{-r}; ``r`` is a positive array."""
    u = 0.25 * r * r
    term = np.ones_like(r)
    total = np.ones_like(r)
    dtotal = np.full_like(r, nu)  # sum of (2k + nu) * term_k
    for k in range(1, _MAX_TERMS):
        term = term * u / (k * (k + nu))
        total += term
        dtotal += (2 * k + nu) * term
        if np.all(term <= _TINY * total):
            break
    log_pref = nu * np.log(0.5 * r) - r - math.lgamma(nu + 1.0)
    pref = np.exp(log_pref)
    return pref * total, pref * dtotal / r


def _asymptotic_scaled(nu, r):
    """Hankel expansion of I_nu(r) e^{-r} and I'_nu(r) e^{-r} for large ``r``."""
    mu = 4.0 * nu * nu
    inv8r = 1.0 / (8.0 * r)
    value = np.ones_like(r)
    deriv = np.ones_like(r)
    prod = np.ones_like(r)  # prod_{j<=k} (mu - (2j-1)^2) / (j! (8r)^j)
    prev_v = np.full_like(r, np.inf)
    prev_d = np.full_like(r, np.inf)
    active_v = np.ones(r.shape, dtype=bool)
    active_d = np.ones(r.shape, dtype=bool)
    for k in range(1, _MAX_TERMS):
        sign = -1.0 if k % 2 else 1.0
        dterm = sign * prod * (mu + 4.0 * k * k - 1.0) * inv8r / k
        prod = prod * (mu - (2 * k - 1) ** 2) * inv8r / k
        vterm = sign * prod
        # stop each sum at its smallest term (optimal truncation)
        grow_v = np.abs(vterm) >= prev_v
        grow_d = np.abs(dterm) >= prev_d
        active_v &= ~grow_v
        active_d &= ~grow_d
        value = np.where(active_v, value + vterm, value)
        deriv = np.where(active_d, deriv + dterm, deriv)
        prev_v = np.where(active_v, np.abs(vterm), prev_v)
        prev_d = np.where(active_d, np.abs(dterm), prev_d)
        active_v &= np.abs(vterm) > _TINY * np.abs(value)
        active_d &= np.abs(dterm) > _TINY * np.abs(deriv)
        if not (active_v.any() or active_d.any()):
            break
    norm = 1.0 / np.sqrt(2.0 * np.pi * r)
    return norm * value, norm * deriv


def bessel_i_scaled(nu: float, r) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(I_nu(r) e^{-r}, I'_nu(r) e^{-r})`` elementwise for ``r >= 0``."""
    if nu < 0:
        raise DomainError(f"order must be nonnegative, got {nu}")
    r = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise DomainError("argument must be finite and nonnegative")
    flat = r.ravel()
    value = np.empty_like(flat)
    deriv = np.empty_like(flat)
    zero = flat == 0.0
    value[zero] = 1.0 if nu == 0 else 0.0
    if nu == 0 or nu > 1:
        deriv[zero] = 0.0
    elif nu == 1:
        deriv[zero] = 0.5
    else:
        deriv[zero] = np.inf
    big = flat >= crossover(nu)
    small = ~zero & ~big
    if small.any():
        value[small], deriv[small] = _series_scaled(nu, flat[small])
    if big.any():
        value[big], deriv[big] = _asymptotic_scaled(nu, flat[big])
    return value.reshape(r.shape), deriv.reshape(r.shape)


@dataclass(frozen=True)
class BesselEval:
    """Value and derivative of ``I_nu`` at ``r``, stored with the factor ``e^{-r}``."""

    nu: float
    r: float
    scaled_value: float
    scaled_derivative: float

    def _unscale(self, x: float) -> float:
        if x == 0.0 or math.isinf(x):
            return x
        out = math.exp(self.r + math.log(x)) if x > 0 else float("nan")
        if math.isinf(out):
            raise OverflowError(f"I_{self.nu}({self.r}) overflows; use the scaled fields")
        return out

    @property
    def value(self) -> float:
        return self._unscale(self.scaled_value)

    @property
    def derivative(self) -> float:
        return self._unscale(self.scaled_derivative)

    @property
    def log_value(self) -> float:
        return math.log(self.scaled_value) + self.r


def bessel_i(nu: float, r: float) -> BesselEval:
    """Evaluate ``I_nu(r)`` and ``I'_nu(r)`` for a scalar argument."""
    v, dv = bessel_i_scaled(nu, np.array([float(r)]))
    return BesselEval(float(nu), float(r), float(v[0]), float(dv[0]))


def order(d: int) -> float:
    """Bessel order ``(d - 2) / 2`` attached to dimension ``d``."""
    if int(d) != d or d < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {d}")
    return (d - 2) / 2.0


def drift_gain(r, d: int) -> np.ndarray:
    """Scalar ``g(r)`` with ``p(x) = g(|x|) x``; equals ``I_{nu+1}(r) / (r I_nu(r))``."""
    nu = order(d)
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    out = np.empty_like(flat)
    big = flat >= crossover(nu)
    small = ~big
    if small.any():
        u = 0.25 * flat[small] ** 2
        c = np.ones_like(u)
        num = np.full_like(u, 1.0 / (nu + 1.0))
        den = np.ones_like(u)
        for k in range(1, _MAX_TERMS):
            c = c * u / (k * (k + nu))
            num += c / (k + nu + 1.0)
            den += c
            if np.all(c <= _TINY * den):
                break
        out[small] = 0.5 * num / den
    if big.any():
        rb = flat[big]
        lo, _ = _asymptotic_scaled(nu, rb)
        hi, _ = _asymptotic_scaled(nu + 1.0, rb)
        out[big] = hi / (lo * rb)
    return out.reshape(r.shape)


def drift(x, d: int | None = None) -> np.ndarray:
    """Drift ``p(x)`` of the diffusion; ``x`` has shape ``(..., d)``.

    The field is radial with magnitude ``I'_nu/I_nu - nu/r``, which is written
    as ``I_{nu+1}/I_nu`` to avoid cancellation; ``p(0) = 0``.
    """
    x = np.asarray(x, dtype=float)
    if d is None:
        d = x.shape[-1]
    if x.shape[-1] != d:
        raise DomainError(f"point has {x.shape[-1]} coordinates, expected {d}")
    r = np.linalg.norm(x, axis=-1)
    return drift_gain(r, d)[..., None] * x


def q_residual(x, d: int, h: float) -> float:
    """``|p|^2 + div p - 1`` with the divergence taken by central differences."""
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DomainError(f"point must have shape ({d},)")
    if not np.linalg.norm(x) > 10 * h:
        raise DomainError("point too close to the origin for the stencil")
    eye = np.eye(d) * h
    plus = drift(x + eye, d)
    minus = drift(x - eye, d)
    div = float(np.trace(plus - minus)) / (2 * h)
    p = drift(x, d)
    return float(p @ p) + div - 1.0


def transition_density(x, y, t: float, d: int | None = None):
    """Comparison density ``(2 pi t)^{-d/2} (|x|/|y|)^{(d-1)/2} exp(...)``.

    The exponent is ``-|x-y|^2/(2t) - t/2 + |y| - |x|``.  ``x`` and ``y``
    broadcast against each other along leading axes.
    """
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if d is None:
        d = x.shape[-1]
    rx = np.linalg.norm(x, axis=-1)
    ry = np.linalg.norm(y, axis=-1)
    sq = np.sum((x - y) ** 2, axis=-1)
    expo = -sq / (2 * t) - t / 2 + ry - rx
    out = (2 * np.pi * t) ** (-d / 2) * (rx / ry) ** ((d - 1) / 2) * np.exp(expo)
    return out if np.ndim(out) else float(out)
