"""Fibers: curves in the domain inverted from vertical lines in the image.

The image space splits orthogonally into the line spanned by the free ground
mode psi_1 and its complement W. For fixed z in W the solutions of
proj_W(F(u)) = z form a curve u(t) = w(z, t) + t psi_1 parameterized by the
vertical coordinate t. The height h(u) = <F(u), psi_1> restricted to a fiber
carries the critical-point structure of F: its derivative in t vanishes
exactly where the lowest eigenvalue of the linearization does.

Fiber points are found by damped Newton with bordered linear solves;
traces use continuation in t with adaptive step halving.
"""

from dataclasses import dataclass, field

import numpy as np

from ._cache import free_modes, operator_for
from .domain import GridFunction
from .errors import ContinuationStallError, NoConvergenceError
from .spectral import bordered_solve, eigenpair_potential

NEWTON_TOL = 1e-9
MAX_NEWTON = 60
MAX_BACKTRACK = 30


def ground_mode(domain):
    """Free ground eigenvalue and positive normalized mode (cached)."""
    (mu1, psi1), = free_modes(domain, 1)
    return mu1, psi1


def project_z(g, L=None):
    """Split g = z + s psi_1 with z orthogonal to the ground mode."""
    L = L or operator_for(g.domain)
    mu1, psi1 = ground_mode(g.domain)
    s = L.w0 * float(g.values @ psi1.values)
    z = GridFunction(g.values - s * psi1.values, g.domain)
    return z, s


def height(u, f, L=None):
    """Vertical coordinate of the image: <A u - f(u), psi_1>."""
    L = L or operator_for(u.domain)
    _, psi1 = ground_mode(u.domain)
    return L.w0 * float((L.apply(u.values) - f.value(u.values)) @ psi1.values)


def height_components(u, f, L=None):
    """Both height formulas: the direct pairing and mu_1 t - <f(u), psi_1>.

    They agree (to solver tolerance) whenever u = w + t psi_1 with w
    orthogonal to psi_1, which every fiber point satisfies.
    """
    L = L or operator_for(u.domain)
    mu1, psi1 = ground_mode(u.domain)
    direct = L.w0 * float((L.apply(u.values) - f.value(u.values)) @ psi1.values)
    t = L.w0 * float(u.values @ psi1.values)
    linear = mu1 * t - L.w0 * float(f.value(u.values) @ psi1.values)
    return direct, linear


@dataclass(frozen=True)
class FiberPoint:
    """One solved point u = w + t psi_1 on the fiber over z."""

    z: GridFunction
    t: float
    w: GridFunction
    u: GridFunction
    h: float
    lambda1: float
    newton_residual: float


@dataclass
class FiberTrace:
    """Ordered fiber points at increasing t plus located critical parameters."""

    z: GridFunction
    points: list = field(default_factory=list)
    critical_ts: list = field(default_factory=list)

    @property
    def ts(self):
        return np.array([p.t for p in self.points])

    @property
    def heights(self):
        return np.array([p.h for p in self.points])

    @property
    def lambdas(self):
        return np.array([p.lambda1 for p in self.points])

    def rows(self):
        """CSV rows (t, h, lambda1, newton_residual, w_norm)."""
        w0 = self.z.domain.cell_measure
        for p in self.points:
            yield (float(p.t), float(p.h), float(p.lambda1),
                   float(p.newton_residual),
                   float(np.sqrt(w0) * np.linalg.norm(p.w.values)))


def _solve_w_component(z_vals, t, w_init, f, L, psi, tol, max_iter):
    """Damped Newton for proj_W(F(w + t psi)) = z; returns (w, residual)."""
    w0 = L.w0
    c = psi * np.sqrt(w0)
    wv = w_init.copy()
    wv = wv - (w0 * float(wv @ psi)) * psi

    def residual(wv):
        u = wv + t * psi
        g = L.apply(u) - f.value(u)
        return g - (w0 * float(g @ psi)) * psi - z_vals

    r = residual(wv)
    rn = float(np.sqrt(w0) * np.linalg.norm(r))
    for _ in range(max_iter):
        if rn <= tol:
            return wv, rn
        u = wv + t * psi
        T = L.shifted(f.d1(u))
        dw, _ = bordered_solve(T, 0.0, c, -r)
        step = 1.0
        for _ in range(MAX_BACKTRACK):
            trial = wv + step * dw
            rt = residual(trial)
            rtn = float(np.sqrt(w0) * np.linalg.norm(rt))
            if rtn < rn:
                wv, r, rn = trial, rt, rtn
                break
            step *= 0.5
        else:
            raise NoConvergenceError(
                f"fiber Newton stalled at t={t:.6g}, residual {rn:.3e}",
                residual=rn,
            )
    if rn <= tol:
        return wv, rn
    raise NoConvergenceError(
        f"fiber Newton did not reach tolerance at t={t:.6g}: {rn:.3e}",
        residual=rn,
    )


def fiber_solve(z, t, w_init=None, f=None, L=None, tol=NEWTON_TOL,
                max_iter=MAX_NEWTON, compute_lambda=True):
    """Solve for the fiber point over z at vertical coordinate t."""
    L = L or operator_for(z.domain)
    mu1, psi1 = ground_mode(z.domain)
    w0 = L.w0
    zv = z.values
    s = w0 * float(zv @ psi1.values)
    if abs(s) > 1e-8:
        raise ValueError(f"z must be orthogonal to the ground mode, got <z,psi>={s:.2e}")
    zv = zv - s * psi1.values
    winit = np.zeros_like(zv) if w_init is None else np.asarray(w_init, dtype=float)

    wv, rn = _solve_w_component(zv, t, winit, f, L, psi1.values, tol, max_iter)
    uv = wv + t * psi1.values
    u = GridFunction(uv, z.domain)
    h = L.w0 * float((L.apply(uv) - f.value(uv)) @ psi1.values)
    lam1 = np.nan
    if compute_lambda:
        lam1 = eigenpair_potential(L, f.d1(uv), k=1).lam
    return FiberPoint(z=z, t=t, w=GridFunction(wv, z.domain), u=u, h=h,
                      lambda1=lam1, newton_residual=rn)


def trace_fiber(z, t_lo, t_hi, f, L=None, step_cap=None, tol=NEWTON_TOL,
                compute_lambda=True):
    """Continuation along the fiber from t_lo to t_hi with adaptive steps."""
    if not t_hi > t_lo:
        raise ValueError("requires t_lo < t_hi")
    L = L or operator_for(z.domain)
    span = t_hi - t_lo
    cap = step_cap if step_cap is not None else 0.05 * span
    dt_min = 1e-8 * span

    trace = FiberTrace(z=z)
    pt = fiber_solve(z, t_lo, None, f, L, tol=tol, compute_lambda=compute_lambda)
    trace.points.append(pt)
    t, w_prev = t_lo, pt.w.values
    dt = cap
    while t < t_hi - 1e-12 * span:
        dt = min(dt, t_hi - t)
        try:
            nxt = fiber_solve(z, t + dt, w_prev, f, L, tol=tol,
                              compute_lambda=compute_lambda)
        except NoConvergenceError:
            dt *= 0.5
            if dt < dt_min:
                raise ContinuationStallError(
                    f"step size underflow at t={t:.6g}"
                ) from None
            continue
        trace.points.append(nxt)
        t, w_prev = t + dt, nxt.w.values
        dt = min(cap, dt * 1.5)
    return trace


def fiber_critical_points(trace, f, L=None, tol_lambda=1e-9, tol_t=1e-10):
    """Bisect the eigenvalue sign changes along a trace down to critical points.

    At each critical parameter the kernel direction is checked to be a
    positive multiple of the fiber tangent (their pairing must be positive).
    """
    L = L or operator_for(trace.z.domain)
    mu1, psi1 = ground_mode(trace.z.domain)
    w0 = L.w0
    ts, lams = trace.ts, trace.lambdas
    out = []
    for i in range(len(ts) - 1):
        if not lams[i] * lams[i + 1] < 0:
            continue
        a, b = ts[i], ts[i + 1]
        la = lams[i]
        wa = trace.points[i].w.values
        pt = trace.points[i]
        while b - a > tol_t and abs(pt.lambda1) > tol_lambda:
            mid = 0.5 * (a + b)
            pt = fiber_solve(trace.z, mid, wa, f, L)
            if la * pt.lambda1 <= 0:
                b = mid
            else:
                a, la, wa = mid, pt.lambda1, pt.w.values
        # tangent via centered difference of the solved w-component
        eps = max(1e-6, 1e-6 * (ts[-1] - ts[0]))
        before = fiber_solve(trace.z, pt.t - eps, pt.w.values, f, L,
                             compute_lambda=False)
        after = fiber_solve(trace.z, pt.t + eps, pt.w.values, f, L,
                            compute_lambda=False)
        du = (after.u.values - before.u.values) / (2.0 * eps)
        phi = eigenpair_potential(L, f.d1(pt.u.values), k=1).phi.values
        if w0 * float(phi @ du) <= 0:
            raise NoConvergenceError(
                "kernel direction not aligned with the fiber tangent"
            )
        out.append((pt.t, pt))
    trace.critical_ts = [t for t, _ in out]
    return out
