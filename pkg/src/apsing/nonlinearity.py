"""Smooth scalar nonlinearities with derivatives up to third order.

Three built-in families, each with exact closed-form antiderivatives so the
operator, heights and all functionals can be evaluated without quadrature on
the real line:

* ``sigmoid_bump``: slope rises from m to M through a logistic profile, with
  an optional Gaussian bump carving a non-convexity into the slope;
* ``wiggle``: slope equal to a reference level plus an odd cubic-Gaussian
  ripple, crossing the level at three known points;
* ``poly_clamped``: slope equal to a base level plus a polynomial damped by
  a Gaussian envelope.

A :class:`HypothesisReport` records which structural conditions a family
satisfies on a scan window, together with numeric witnesses.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, expit

from .errors import InconclusiveScanError, NotFoundError, RangeViolationError

#: uniform lower bound required of max(|f'-mu1|, |f''|, |f'''|) on the scan
GENERICITY_GAP = 1e-6

#: second derivative must decay below this at ten window radii
TAIL_FLATNESS = 1e-4


@dataclass(frozen=True)
class Nonlinearity:
    """Evaluators for f and its first three derivatives, plus slope bounds.

    ``m`` and ``M`` are the essential bounds of f' (the closure of its range).
    ``window`` is the default scan interval used by the hypothesis checkers.
    """

    family: str
    params: dict
    m: float
    M: float
    window: tuple
    value: Callable = field(repr=False)
    d1: Callable = field(repr=False)
    d2: Callable = field(repr=False)
    d3: Callable = field(repr=False)

    def to_dict(self):
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return make_nonlinearity(d["family"], **d["params"])


def _scan_range_check(d1, m, M, window, tol=1e-9):
    xs = np.linspace(window[0], window[1], 10_000)
    vals = d1(xs)
    if vals.min() < m - tol or vals.max() > M + tol:
        raise RangeViolationError(
            f"slope leaves [{m}, {M}]: scan range "
            f"[{vals.min():.6g}, {vals.max():.6g}]"
        )


def construct_sigmoid_bump(m, M, bump_center, bump_width, bump_height):
    """Slope m + (M-m)*logistic(x) + bump_height*exp(-((x-c)/w)^2).

    A negative ``bump_height`` carves a dip into the rising slope, producing
    inflections while keeping the slope inside [m, M]; the constructor scans
    and refuses parameters that leave the band.
    """
    if not m < M:
        raise ValueError("requires m < M")
    if bump_width <= 0:
        raise ValueError("bump_width must be positive")
    dm = M - m
    c, wd, hb = float(bump_center), float(bump_width), float(bump_height)

    def value(x):
        x = np.asarray(x, dtype=float)
        soft = np.logaddexp(0.0, x)          # exact antiderivative of logistic
        g = 0.5 * math.sqrt(math.pi) * wd * erf((x - c) / wd)
        return m * x + dm * soft + hb * g

    def d1(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / wd
        return m + dm * expit(x) + hb * np.exp(-(z**2))

    def d2(x):
        x = np.asarray(x, dtype=float)
        s = expit(x)
        z = (x - c) / wd
        return dm * s * (1 - s) + hb * np.exp(-(z**2)) * (-2.0 * z / wd)

    def d3(x):
        x = np.asarray(x, dtype=float)
        s = expit(x)
        z = (x - c) / wd
        return dm * s * (1 - s) * (1 - 2 * s) + hb * np.exp(-(z**2)) * (
            4.0 * z**2 - 2.0
        ) / wd**2

    radius = max(12.0, abs(c) + 10.0 * wd)
    window = (-radius, radius)
    _scan_range_check(d1, m, M, window)
    return Nonlinearity(
        family="sigmoid_bump",
        params={
            "m": m,
            "M": M,
            "bump_center": bump_center,
            "bump_width": bump_width,
            "bump_height": bump_height,
        },
        m=float(m),
        M=float(M),
        window=window,
        value=value,
        d1=d1,
        d2=d2,
        d3=d3,
    )


def construct_wiggle(mu_k, amplitude, center, width):
    """Slope mu_k + amplitude * z (z^2 - 1) exp(-z^2) with z = (x-center)/width.

    The slope equals mu_k exactly at center and at center +- width, with
    curvature of opposite signs there, so the level mu_k is crossed by a
    usable pair of points. The third derivative vanishes at the center
    crossing and is positive (for amplitude > 0) at the left crossing.
    """
    if width <= 0:
        raise ValueError("width must be positive")
    A, c, wd, mu = float(amplitude), float(center), float(width), float(mu_k)

    def value(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / wd
        return mu * x - 0.5 * A * wd * z**2 * np.exp(-(z**2))

    def d1(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / wd
        return mu + A * z * (z**2 - 1.0) * np.exp(-(z**2))

    def d2(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / wd
        return (A / wd) * (-2.0 * z**4 + 5.0 * z**2 - 1.0) * np.exp(-(z**2))

    def d3(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / wd
        return (A / wd**2) * 2.0 * z * (2.0 * z**4 - 9.0 * z**2 + 6.0) * np.exp(
            -(z**2)
        )

    # extrema of z(z^2-1)exp(-z^2) sit at z^2 = (5 +- sqrt(17))/4
    zs = np.sqrt((5.0 + np.array([-1.0, 1.0]) * math.sqrt(17.0)) / 4.0)
    ripple = float(np.max(np.abs(zs * (zs**2 - 1.0) * np.exp(-(zs**2)))))
    window = (c - 8.0 * wd, c + 8.0 * wd)
    return Nonlinearity(
        family="wiggle",
        params={"mu_k": mu_k, "amplitude": amplitude, "center": center, "width": width},
        m=mu - abs(A) * ripple,
        M=mu + abs(A) * ripple,
        window=window,
        value=value,
        d1=d1,
        d2=d2,
        d3=d3,
    )


def _gauss_moment_antiderivatives(z, degree):
    """I_k(z) = integral of t^k exp(-t^2) dt up to a constant, k = 0..degree."""
    out = [0.5 * math.sqrt(math.pi) * erf(z)]
    if degree >= 1:
        out.append(-0.5 * np.exp(-(z**2)))
    for k in range(2, degree + 1):
        out.append(-0.5 * z ** (k - 1) * np.exp(-(z**2)) + 0.5 * (k - 1) * out[k - 2])
    return out


def construct_poly_clamped(base, coeffs, center=0.0, scale=1.0):
    """Slope base + p(z) exp(-z^2) with z = (x-center)/scale, p from coeffs.

    ``coeffs`` are polynomial coefficients in increasing degree. The Gaussian
    envelope clamps the slope to the base level away from the center; the
    antiderivative is exact via Gaussian moment recursion.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    cs = np.asarray(coeffs, dtype=float)
    if cs.ndim != 1 or cs.size == 0:
        raise ValueError("coeffs must be a non-empty 1D sequence")
    b, c, sc = float(base), float(center), float(scale)
    p = np.polynomial.Polynomial(cs)
    dp = p.deriv()
    ddp = dp.deriv()
    deg = cs.size - 1

    def value(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / sc
        moments = _gauss_moment_antiderivatives(z, deg)
        acc = sum(ck * mk for ck, mk in zip(cs, moments))
        return b * x + sc * acc

    def d1(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / sc
        return b + p(z) * np.exp(-(z**2))

    def d2(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / sc
        return (dp(z) - 2.0 * z * p(z)) * np.exp(-(z**2)) / sc

    def d3(x):
        x = np.asarray(x, dtype=float)
        z = (x - c) / sc
        return (
            (ddp(z) - 4.0 * z * dp(z) + (4.0 * z**2 - 2.0) * p(z))
            * np.exp(-(z**2))
            / sc**2
        )

    window = (c - 8.0 * sc, c + 8.0 * sc)
    xs = np.linspace(window[0], window[1], 20_000)
    vals = d1(xs)
    return Nonlinearity(
        family="poly_clamped",
        params={"base": base, "coeffs": list(map(float, cs)), "center": center, "scale": scale},
        m=float(min(vals.min(), b)),
        M=float(max(vals.max(), b)),
        window=window,
        value=value,
        d1=d1,
        d2=d2,
        d3=d3,
    )


_FAMILIES = {
    "sigmoid_bump": construct_sigmoid_bump,
    "wiggle": construct_wiggle,
    "poly_clamped": construct_poly_clamped,
}


def make_nonlinearity(family, **params):
    try:
        ctor = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown nonlinearity family {family!r}") from None
    return ctor(**params)


@dataclass
class HypothesisReport:
    """Flags and numeric witnesses for the structural conditions on f."""

    h1: bool
    h2: bool
    h3: bool
    h4: bool
    hk: bool
    k: int
    window: tuple
    witnesses: dict
    details: dict

    def to_dict(self):
        return {
            "h1": self.h1,
            "h2": self.h2,
            "h3": self.h3,
            "h4": self.h4,
            "hk": self.hk,
            "k": self.k,
            "window": list(self.window),
            "witnesses": {k: v for k, v in self.witnesses.items()},
            "details": dict(self.details),
        }


def _sign_change_roots(fn, xs, max_roots=64):
    vals = fn(xs)
    roots = []
    # an exact zero on a grid point counts only when isolated (a transversal
    # crossing that happened to land on the grid, not a flat numeric plateau)
    zero = vals == 0.0
    for i in np.nonzero(zero)[0]:
        if 0 < i < len(xs) - 1 and vals[i - 1] != 0.0 and vals[i + 1] != 0.0:
            roots.append(float(xs[i]))
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    for i in idx[:max_roots]:
        roots.append(brentq(lambda x: float(fn(x)), xs[i], xs[i + 1], xtol=1e-13))
    roots.sort()
    span = max(xs[-1] - xs[0], 1e-300)
    out = []
    for r in roots:
        if not out or r - out[-1] > 1e-9 * span:
            out.append(r)
    return out[:max_roots]


def _level_crossings(f, level, xs):
    return _sign_change_roots(lambda x: f.d1(x) - level, xs)


def _check_flags(f, mu1, mu2, window, k, mu_k, n_scan):
    xs = np.linspace(window[0], window[1], n_scan)
    d1v, d2v, d3v = f.d1(xs), f.d2(xs), f.d3(xs)
    radius = 0.5 * (window[1] - window[0])
    x_tail = 10.0 * radius
    mid = 0.5 * (window[0] + window[1])
    slope_lo = float(f.d1(mid - x_tail))
    slope_hi = float(f.d1(mid + x_tail))
    tail_flat = max(abs(float(f.d2(mid - x_tail))), abs(float(f.d2(mid + x_tail))))

    h1 = bool(
        f.m < mu1 < f.M < mu2
        and d1v.min() >= f.m - 1e-9
        and d1v.max() <= f.M + 1e-9
    )
    gap = float(np.min(np.maximum.reduce([np.abs(d1v - mu1), np.abs(d2v), np.abs(d3v)])))
    h2 = gap >= GENERICITY_GAP

    inflections = _sign_change_roots(f.d2, xs)
    h3 = len(inflections) > 0

    eps = min(slope_hi - mu1, mu1 - slope_lo)
    h4 = bool(eps > 0 and tail_flat <= TAIL_FLATNESS)

    crossings = [c for c in _level_crossings(f, mu_k, xs)
                 if abs(float(f.d2(c))) >= GENERICITY_GAP]
    hk = False
    pair = None
    if len(crossings) >= 2:
        # prefer a pair with nonnegative third derivative at both points
        best = None
        for i in range(len(crossings)):
            for j in range(i + 1, len(crossings)):
                a, b = crossings[i], crossings[j]
                if float(f.d2(a)) * float(f.d2(b)) < 0:
                    good3 = min(float(f.d3(a)), float(f.d3(b))) >= -1e-9
                    if best is None or (good3 and not best[0]):
                        best = (good3, (a, b))
        if best is not None:
            hk = True
            pair = best[1]

    witnesses = {}
    if h3:
        witnesses["x_star"] = float(inflections[0])
        witnesses["inflections"] = [float(r) for r in inflections]
    if hk:
        witnesses["x_mu"] = float(pair[0])
        witnesses["y_mu"] = float(pair[1])
    if h4:
        witnesses["eps"] = float(eps)
    witnesses["slope_left_tail"] = slope_lo
    witnesses["slope_right_tail"] = slope_hi

    details = {
        "genericity_gap": gap,
        "tail_flatness": tail_flat,
        "scan_points": n_scan,
        "mu_k": float(mu_k),
        "slope_scan_min": float(d1v.min()),
        "slope_scan_max": float(d1v.max()),
    }
    return (h1, h2, h3, h4, hk), witnesses, details


def check_hypotheses(f, mu1, mu2, window=None, k=1, mu_k=None, n_scan=10_001):
    """Certify the structural conditions of f on a scan window.

    The scan is deterministic; flags come with witnesses (inflection point,
    slope-level crossing pair, tail margin). A coarse/fine scan disagreement
    raises :class:`InconclusiveScanError` instead of returning silently.
    """
    window = tuple(window if window is not None else f.window)
    if not window[1] > window[0]:
        raise ValueError("empty scan window")
    mu_k = mu1 if mu_k is None else float(mu_k)

    flags, witnesses, details = _check_flags(f, mu1, mu2, window, k, mu_k, n_scan)
    flags_coarse, _, _ = _check_flags(f, mu1, mu2, window, k, mu_k, max(513, n_scan // 4))
    if flags != flags_coarse:
        raise InconclusiveScanError(
            f"scan flags unstable under refinement: {flags_coarse} vs {flags}"
        )
    h1, h2, h3, h4, hk = flags
    return HypothesisReport(
        h1=h1, h2=h2, h3=h3, h4=h4, hk=hk, k=k,
        window=window, witnesses=witnesses, details=details,
    )


def find_inflection(f, window=None, n_scan=10_001):
    """First zero of f'' on the window with nonvanishing f'''."""
    window = tuple(window if window is not None else f.window)
    xs = np.linspace(window[0], window[1], n_scan)
    for root in _sign_change_roots(f.d2, xs):
        if abs(float(f.d2(root))) <= 1e-10 and abs(float(f.d3(root))) > 1e-8:
            return float(root)
    raise NotFoundError("no inflection with transversal third derivative found")


def find_almost_critical(f, mu1, side, tol=1e-4, margin=None, window=None,
                         max_doublings=16):
    """A point where f' sits strictly on one side of mu1 and f'' is nearly zero.

    Realized either at an interior extremum of f' on the requested side or in
    a far tail where the curvature has decayed below ``tol``.
    """
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    window = tuple(window if window is not None else f.window)
    sgn = 1.0 if side == "above" else -1.0
    if margin is None:
        avail = (f.M - mu1) if side == "above" else (mu1 - f.m)
        if avail <= 0:
            raise NotFoundError(f"slope range never reaches the {side} side of mu1")
        margin = 0.25 * avail

    xs = np.linspace(window[0], window[1], 10_001)
    candidates = []
    for root in _sign_change_roots(f.d2, xs):
        if sgn * (float(f.d1(root)) - mu1) >= margin:
            candidates.append((abs(float(f.d2(root))), float(root)))
    candidates = [c for c in candidates if c[0] <= tol]
    if candidates:
        return min(candidates)[1]

    mid = 0.5 * (window[0] + window[1])
    radius = 0.5 * (window[1] - window[0])
    x_dir = 1.0 if side == "above" else -1.0
    # tails: slope limits exist for every family, so march outward
    for _ in range(max_doublings):
        x = mid + x_dir * radius
        if sgn * (float(f.d1(x)) - mu1) >= margin and abs(float(f.d2(x))) <= tol:
            return float(x)
        x = mid - x_dir * radius
        if sgn * (float(f.d1(x)) - mu1) >= margin and abs(float(f.d2(x))) <= tol:
            return float(x)
        radius *= 2.0
    raise NotFoundError(
        f"no almost-critical point with f' {side} mu1 within the search horizon"
    )
