"""Exponential integral, U(x) = e^x E1(x), its inverse, and a bracketed root solver.

All functions accept a scalar or an array. Scalars come back as ``float``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061

_SERIES_MAX_TERMS = 60
_CF_MAX_TERMS = 500
_CF_TOL = 4e-16
_TINY = 1e-300
# below this many elements the pure-float loops beat numpy's per-call overhead
_SCALAR_CUTOFF = 64


class RootNotBracketedError(ValueError):
    """Residual has the same sign at both ends of the search interval."""


class RootSolveError(RuntimeError):
    """Bisection ran out of iterations; carries the final bracket."""

    def __init__(self, message, lo, hi):
        super().__init__(message)
        self.lo = lo
        self.hi = hi


@dataclass(frozen=True)
class RootSolveSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_bisections: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_bisections < 1:
            raise ValueError("max_bisections must be >= 1")


DEFAULT_SETTINGS = RootSolveSettings()


def _as_positive_array(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"{name} must be strictly positive, got {x!r}")
    return arr


def _wrap(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _series_e1(x):
    """E1 by its power series; used for 0 < x <= 1."""
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, _SERIES_MAX_TERMS + 1):
        term = term * (-x) / k
        total = total + term / k
    return -EULER_GAMMA - np.log(x) - total


def _lentz(b0, a_of, b_of):
    """Modified Lentz evaluation of b0 + a1/(b1 + a2/(b2 + ...)) elementwise."""
    f = np.where(b0 == 0, _TINY, b0)
    c = f.copy()
    d = np.zeros_like(f)
    done = np.zeros(f.shape, dtype=bool)
    for k in range(1, _CF_MAX_TERMS + 1):
        a = a_of(k)
        b = b_of(k)
        d = b + a * d
        d = np.where(d == 0, _TINY, d)
        c = b + a / c
        c = np.where(c == 0, _TINY, c)
        d = 1.0 / d
        delta = c * d
        f = np.where(done, f, f * delta)
        done |= np.abs(delta - 1.0) < _CF_TOL
        if done.all():
            break
    return f


def _cf_level(x, level):
    # K_level = (x + 2*level + 1) - (level+1)^2 / K_{level+1}; e^x E1(x) = 1 / K_0
    return _lentz(
        x + 2 * level + 1,
        lambda k: np.full_like(x, -float((level + k) ** 2)),
        lambda k: x + 2 * (level + k) + 1,
    )


def _u_array(x):
    if x.size <= _SCALAR_CUTOFF:
        return np.array([_u_scalar(v) for v in x.ravel().tolist()]).reshape(x.shape)
    out = np.empty_like(x)
    small = x <= 1.0
    if small.any():
        xs = x[small]
        out[small] = np.exp(xs) * _series_e1(xs)
    if (~small).any():
        out[~small] = 1.0 / _cf_level(x[~small], 0)
    return out


def exp_integral_e1(x):
    """E1(x) = integral from 1 to infinity of exp(-x t) / t dt, for x > 0."""
    arr = np.atleast_1d(_as_positive_array(x))
    out = np.empty_like(arr)
    small = arr <= 1.0
    if small.any():
        out[small] = _series_e1(arr[small])
    if (~small).any():
        xl = arr[~small]
        out[~small] = np.exp(-xl) / _cf_level(xl, 0)
    return _wrap(out.reshape(np.shape(x)), x)


def u_of(x):
    """U(x) = exp(x) * E1(x), computed without overflow for large x."""
    arr = np.atleast_1d(_as_positive_array(x))
    return _wrap(_u_array(arr).reshape(np.shape(x)), x)


def one_minus_x_u(x):
    """1 - x U(x), which lies in (0, 1) for every x > 0.

    For x > 1 the difference is formed from the continued-fraction tail so it
    keeps full relative precision as x grows (where x U(x) -> 1).
    """
    arr = np.atleast_1d(_as_positive_array(x))
    if arr.size <= _SCALAR_CUTOFF:
        out = np.array([_one_minus_x_u_scalar(v) for v in arr.ravel().tolist()])
        return _wrap(out.reshape(np.shape(x)), x)
    out = np.empty_like(arr)
    small = arr <= 1.0
    if small.any():
        xs = arr[small]
        out[small] = 1.0 - xs * _u_array(xs)
    if (~small).any():
        xl = arr[~small]
        tail = 1.0 / _cf_level(xl, 1)
        out[~small] = (1.0 - tail) / (xl + 1.0 - tail)
    return _wrap(out.reshape(np.shape(x)), x)


def u_inverse_bracket(y):
    """Certified bracket [2/(e^{2y}-1), 1/(e^y-1)] containing U^{-1}(y)."""
    y = np.asarray(y, dtype=float)
    return 2.0 / np.expm1(2.0 * y), 1.0 / np.expm1(y)


def _u_scalar(x):
    if x <= 1.0:
        total = 0.0
        term = 1.0
        for k in range(1, _SERIES_MAX_TERMS + 1):
            term *= -x / k
            total += term / k
            if abs(term) < 1e-17 * abs(total):
                break
        return math.exp(x) * (-EULER_GAMMA - math.log(x) - total)
    return 1.0 / _cf_level_scalar(x, 0)


def _cf_level_scalar(x, level):
    f = x + 2 * level + 1
    c = f
    d = 0.0
    for k in range(1, _CF_MAX_TERMS + 1):
        a = -float((level + k) ** 2)
        b = x + 2 * (level + k) + 1
        d = b + a * d
        if d == 0.0:
            d = _TINY
        c = b + a / c
        if c == 0.0:
            c = _TINY
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < _CF_TOL:
            break
    return f


def _one_minus_x_u_scalar(x):
    if x <= 1.0:
        return 1.0 - x * _u_scalar(x)
    tail = 1.0 / _cf_level_scalar(x, 1)
    return (1.0 - tail) / (x + 1.0 - tail)


def _u_inverse_scalar(y, settings):
    lo = 2.0 / math.expm1(2.0 * y)
    hi = 1.0 / math.expm1(y)
    t_lo, t_hi = math.log(lo), math.log(hi)
    t = 0.5 * (t_lo + t_hi)
    for _ in range(settings.max_bisections):
        x = math.exp(t)
        f = _u_scalar(x) - y
        if f == 0.0:
            return x
        if f > 0.0:
            t_lo = t
        else:
            t_hi = t
        # Newton in log x: d U(e^t) / dt = -(1 - x U(x))
        t_new = t + f / _one_minus_x_u_scalar(x)
        if not (t_lo < t_new < t_hi):
            t_new = 0.5 * (t_lo + t_hi)
        if abs(t_new - t) <= settings.rel_tol or t_hi - t_lo <= settings.rel_tol:
            return math.exp(t_new)
        t = t_new
    raise RootSolveError("u_inverse did not converge", math.exp(t_lo), math.exp(t_hi))


def u_inverse(y, settings: RootSolveSettings = DEFAULT_SETTINGS):
    """Solve U(x) = y for x > 0.

    The search never leaves the analytic bracket [2/(e^{2y}-1), 1/(e^y-1)].
    Each step is a Newton step in log x when it lands strictly inside the
    current bracket and a bisection of the (log) bracket otherwise.
    """
    arr = np.atleast_1d(_as_positive_array(y, "y"))
    flat = arr.ravel()
    out = np.array([_u_inverse_scalar(float(v), settings) for v in flat])
    resid = np.abs(_u_array(out) - flat)
    if np.any(resid > np.maximum(settings.abs_tol, 1e-12 * flat)):
        bad = int(np.argmax(resid))
        raise RootSolveError("u_inverse residual above tolerance", out[bad], out[bad])
    return _wrap(out.reshape(np.shape(y)), y)


def inv_u_recip(y, settings: RootSolveSettings = DEFAULT_SETTINGS):
    """1 / U^{-1}(y) with the limit value 0 at y = 0."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise ValueError("y must be nonnegative")
    out = np.zeros(np.shape(arr))
    pos = arr > 0
    if np.any(pos):
        out[pos] = 1.0 / np.atleast_1d(u_inverse(arr[pos], settings))
    return _wrap(out, y)


def d_inv_u_recip(y, settings: RootSolveSettings = DEFAULT_SETTINGS):
    """d/dy [1 / U^{-1}(y)] = 1 / (x [1 - x U(x)]) at x = U^{-1}(y)."""
    arr = np.atleast_1d(_as_positive_array(y, "y"))
    x = np.atleast_1d(u_inverse(arr, settings))
    out = 1.0 / (x * np.atleast_1d(one_minus_x_u(x)))
    return _wrap(out.reshape(np.shape(y)), y)


def bisect_root(residual, lo, hi, settings: RootSolveSettings = DEFAULT_SETTINGS):
    """Root of a monotone scalar function on [lo, hi].

    Returns ``(x, lo, hi)``: the root estimate and the final bracket. Raises
    :class:`RootNotBracketedError` when both ends share a sign.
    """
    f_lo = residual(lo)
    if f_lo == 0:
        return lo, lo, lo
    f_hi = residual(hi)
    if f_hi == 0:
        return hi, hi, hi
    if (f_lo > 0) == (f_hi > 0):
        raise RootNotBracketedError(
            f"no bracket: residual({lo})={f_lo:.6g}, residual({hi})={f_hi:.6g}"
        )
    for _ in range(settings.max_bisections):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return mid, lo, hi
        f_mid = residual(mid)
        if abs(f_mid) <= settings.abs_tol or hi - lo <= settings.rel_tol * abs(mid):
            return mid, lo, hi
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    raise RootSolveError("bisection did not converge", lo, hi)
