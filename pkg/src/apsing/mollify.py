"""Smoothing of two-valued profiles with restoration of the zero constraints.

Gaussian smoothing destroys the exact vanishing of the eigenvalue functionals
at a balanced two-valued base point. The restoration moves the smoothed
profile inside a low-dimensional probe subspace to zero them again:

* one constraint (the eigenvalue): scalar root-find along a single direction
  whose pairing with the eigenvalue gradient is bounded away from zero;
* two constraints (eigenvalue and delta): planar Newton on the coefficients
  of two probe directions, with exact Jacobian from the gradient formulas and
  a sign-map refinement fallback when Newton leaves its basin.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from ._cache import operator_for
from .domain import GridFunction
from .errors import JacobianSingularError, NoBracketError, NoConvergenceError
from .spectral import (
    functional_values,
    gradient_probe_matrix,
    independence_of,
    lambda_phi,
)

RESTORE_TOL_LAMBDA = 1e-9
RESTORE_TOL_PAIR = 1e-8

#: sign-map resolution of the fallback refinement
DEGREE_GRID = 17


@dataclass
class MollifyResult:
    """Smoothed profile with correction coefficients and final residuals."""

    u: GridFunction
    sigma: Optional[float]
    coefficients: tuple
    lam: float
    delta: Optional[float]
    iterations: int
    second_diff_max: float
    independence: Optional[float] = None
    fallback_used: bool = False

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "coefficients": list(self.coefficients),
            "lambda": self.lam,
            "delta": self.delta,
            "iterations": self.iterations,
            "second_diff_max": self.second_diff_max,
            "independence": self.independence,
            "fallback_used": self.fallback_used,
        }


def smooth(ubar, sigma, domain=None):
    """Gaussian smoothing respecting the boundary closure.

    Dirichlet extends by zero, Neumann reflects, periodic wraps; the kernel
    has unit mass, so the reflecting and wrapping closures preserve the mean
    exactly.
    """
    if isinstance(ubar, GridFunction):
        vals, domain = ubar.values, ubar.domain
    else:
        vals = np.asarray(ubar, dtype=float)
        if domain is None:
            raise ValueError("domain required for raw arrays")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if domain.dim == 1:
        kern = kernels.gaussian_kernel(sigma, domain.spacings[0])
        out = kernels.smooth_1d(vals, kern, domain.bc)
    else:
        hx, hy = domain.spacings
        out = kernels.smooth_2d(
            vals, domain.n, domain.n,
            kernels.gaussian_kernel(sigma, hx),
            kernels.gaussian_kernel(sigma, hy),
            domain.bc,
        )
    return GridFunction(out, domain)


def second_difference_max(u, L=None):
    """Sup norm of interior second differences (smoothness proxy).

    Boundary closures are excluded: a Dirichlet zero-extension makes the
    stencil jump at the edge for any profile with nonzero boundary values,
    which says nothing about the interior regularity being proxied.
    """
    domain = u.domain
    if domain.dim == 1:
        h = domain.spacings[0]
        d2 = np.diff(u.values, n=2) / h**2
        return float(np.max(np.abs(d2))) if d2.size else 0.0
    hx, hy = domain.spacings
    grid = u.values.reshape(domain.n, domain.n)
    d2x = np.diff(grid, n=2, axis=1) / hx**2
    d2y = np.diff(grid, n=2, axis=0) / hy**2
    return float(max(np.max(np.abs(d2x)), np.max(np.abs(d2y))))


def restore_lambda_zero(u0, f, direction, L=None, k=1, ball_radius=None,
                        tol=RESTORE_TOL_LAMBDA, max_bisect=200):
    """Scalar root-find of the eigenvalue along one probe direction.

    The probe bracket expands inside a ball around u0; failure to change sign
    there raises :class:`NoBracketError`. A solution with nonpositive delta
    raises :class:`NoConvergenceError` carrying the offending value.
    """
    L = L or operator_for(u0.domain)
    d = direction.values if isinstance(direction, GridFunction) else np.asarray(direction)
    dn = np.sqrt(L.w0) * np.linalg.norm(d)
    if dn == 0:
        raise NoBracketError("zero probe direction")
    d = d / dn
    if ball_radius is None:
        spread = float(u0.values.max() - u0.values.min())
        ball_radius = 0.2 * max(spread, 1.0)

    def lam_at(t):
        return lambda_phi(GridFunction(u0.values + t * d, u0.domain), f, k=k, L=L).lam

    g0 = lam_at(0.0)
    evals = 1
    if abs(g0) <= tol:
        t_root, lam_root = 0.0, g0
    else:
        bracket = None
        step = ball_radius / 16.0
        while step <= ball_radius and bracket is None:
            for t in (step, -step):
                gt = lam_at(t)
                evals += 1
                if g0 * gt < 0:
                    bracket = (0.0, g0, t, gt)
                    break
            step *= 2.0
        if bracket is None:
            raise NoBracketError(
                f"eigenvalue kept its sign on the probe ball (radius {ball_radius:.3g})"
            )
        a, ga, b, gb = bracket
        t_root, lam_root, gm = a, ga, ga
        for _ in range(max_bisect):
            mid = 0.5 * (a + b)
            gm = lam_at(mid)
            evals += 1
            if abs(gm) <= tol:
                t_root, lam_root = mid, gm
                break
            if ga * gm < 0:
                b, gb = mid, gm
            else:
                a, ga = mid, gm
        else:
            raise NoConvergenceError(
                f"eigenvalue bisection stalled at {gm:.3e}", residual=gm
            )

    u = GridFunction(u0.values + t_root * d, u0.domain)
    fv = functional_values(u, f, k=k, L=L)
    if fv.delta <= 0:
        raise NoConvergenceError(
            f"delta lost its sign inside the ball: {fv.delta:.6g}",
            residual=fv.delta,
        )
    return MollifyResult(
        u=u, sigma=None, coefficients=(float(t_root), 0.0),
        lam=lam_root, delta=fv.delta, iterations=evals,
        second_diff_max=second_difference_max(u, L),
    )


def _pair_values(u0, f, v1, v2, a, b, k, L):
    u = GridFunction(u0.values + a * v1 + b * v2, u0.domain)
    fv = functional_values(u, f, k=k, need_tau=True, L=L)
    return u, fv


def _degree_refine(u0, f, v1, v2, box, k, L, tol, max_depth=24):
    """Sign-map refinement: locate a cell where both components change sign."""
    (a_lo, a_hi), (b_lo, b_hi) = box
    evals = 0
    for depth in range(max_depth):
        aa = np.linspace(a_lo, a_hi, DEGREE_GRID)
        bb = np.linspace(b_lo, b_hi, DEGREE_GRID)
        lam = np.empty((DEGREE_GRID, DEGREE_GRID))
        dl = np.empty((DEGREE_GRID, DEGREE_GRID))
        best = (np.inf, None)
        for i, a in enumerate(aa):
            for j, b in enumerate(bb):
                u, fv = _pair_values(u0, f, v1, v2, a, b, k, L)
                evals += 1
                lam[i, j], dl[i, j] = fv.lam, fv.delta
                norm = float(np.hypot(fv.lam, fv.delta))
                if norm < best[0]:
                    best = (norm, (a, b, u, fv))
        if best[0] <= tol:
            return best[1], evals
        found = None
        for i in range(DEGREE_GRID - 1):
            for j in range(DEGREE_GRID - 1):
                cl = lam[i:i + 2, j:j + 2]
                cd = dl[i:i + 2, j:j + 2]
                if cl.min() < 0 < cl.max() and cd.min() < 0 < cd.max():
                    found = (i, j)
                    break
            if found:
                break
        if found is None:
            raise NoConvergenceError(
                f"no sign-change cell in the probe box (best {best[0]:.3e})",
                residual=best[0],
            )
        i, j = found
        a_lo, a_hi = aa[i], aa[i + 1]
        b_lo, b_hi = bb[j], bb[j + 1]
    raise NoConvergenceError("sign-map refinement exhausted its depth budget")


def restore_nonfold(u0, f, v1, v2, L=None, k=1, ball_radius=None,
                    tol=RESTORE_TOL_PAIR, max_newton=30):
    """Planar Newton on probe coefficients zeroing both eigenvalue functionals.

    The Jacobian pairs the exact gradients against the probes; a singular
    probe matrix raises :class:`JacobianSingularError`. If Newton fails to
    contract, a sign-map refinement over the probe box takes over before
    giving up.
    """
    L = L or operator_for(u0.domain)
    w0 = L.w0
    v1 = v1.values if isinstance(v1, GridFunction) else np.asarray(v1, float)
    v2 = v2.values if isinstance(v2, GridFunction) else np.asarray(v2, float)
    n1 = np.sqrt(w0) * np.linalg.norm(v1)
    n2 = np.sqrt(w0) * np.linalg.norm(v2)
    if n1 == 0 or n2 == 0:
        raise JacobianSingularError("zero probe direction")
    v1, v2 = v1 / n1, v2 / n2
    if ball_radius is None:
        spread = float(u0.values.max() - u0.values.min())
        ball_radius = 0.2 * max(spread, 1.0)

    a = b = 0.0
    u, fv = _pair_values(u0, f, v1, v2, a, b, k, L)
    res = float(np.hypot(fv.lam, fv.delta))
    fallback = False
    iters = 0
    for iters in range(1, max_newton + 1):
        if res <= tol:
            break
        M = gradient_probe_matrix(fv, (GridFunction(v1, u0.domain),
                                       GridFunction(v2, u0.domain)), w0)
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] < 1e-12 * max(1.0, sv[0]):
            raise JacobianSingularError(
                f"probe Jacobian singular (singular values {sv[0]:.2e}, {sv[-1]:.2e})"
            )
        step = np.linalg.solve(M, -np.array([fv.lam, fv.delta]))
        alpha = 1.0
        improved = False
        for _ in range(20):
            ta, tb = a + alpha * step[0], b + alpha * step[1]
            if np.hypot(ta, tb) > ball_radius:
                alpha *= 0.5
                continue
            tu, tfv = _pair_values(u0, f, v1, v2, ta, tb, k, L)
            tres = float(np.hypot(tfv.lam, tfv.delta))
            if tres < res:
                a, b, u, fv, res = ta, tb, tu, tfv, tres
                improved = True
                break
            alpha *= 0.5
        if not improved:
            fallback = True
            break
    if res > tol:
        fallback = True
    if fallback and res > tol:
        half = ball_radius / np.sqrt(2.0)
        (a, b, u, fv), extra = _degree_refine(
            u0, f, v1, v2, ((-half, half), (-half, half)), k, L, tol
        )
        res = float(np.hypot(fv.lam, fv.delta))
        iters += extra
        if res > tol:
            raise NoConvergenceError(
                f"restoration residual {res:.3e} above {tol:.1e}", residual=res
            )

    indep = independence_of(
        fv, (GridFunction(v1, u0.domain), GridFunction(v2, u0.domain)), w0
    )
    return MollifyResult(
        u=u, sigma=None, coefficients=(float(a), float(b)),
        lam=fv.lam, delta=fv.delta, iterations=iters,
        second_diff_max=second_difference_max(u, L),
        independence=indep, fallback_used=fallback,
    )
