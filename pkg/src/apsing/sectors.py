"""Two-valued potentials on sector partitions and the balancing searches.

A sector of opening angle theta, translated to an interior point p, splits the
domain in two pieces. A two-valued function takes one value on each piece.
The lowest eigenvalue of the associated linear operator is strictly monotone
in each plateau value and in the angle, so a unique balancing angle makes it
vanish whenever the plateau slopes straddle the free ground eigenvalue.

On the grid the split is represented by per-cell coverage fractions: every
cell is fully on one side except the cells cut by the moving boundary, whose
fraction of covered area is exact. Nodewise composition with any scalar
function g is then the cell average of g over the genuinely two-valued
profile, g(l) * coverage + g(r) * (1 - coverage), which keeps the eigenvalue
a continuous strictly monotone function of theta and makes the balancing
residual solvable to tolerance rather than stalling on a nodal staircase.

In 1D the sector is, by convention, the leftmost subinterval holding the
angular fraction theta / 2 pi of the total measure.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._cache import free_modes, operator_for
from .domain import GridFunction
from .errors import (
    DegenerateEigenvalueError,
    NoConvergenceError,
    OutOfDomainError,
    StageFailureError,
)
from .nonlinearity import find_almost_critical
from .spectral import (
    eigenpair_potential,
    functional_values_potential,
    independence_of,
)

TWO_PI = 2.0 * math.pi

BALANCE_TOL_LAMBDA = 1e-9
BALANCE_TOL_THETA = 1e-10
NONFOLD_TOL = 1e-8
INDEPENDENCE_TOL = 1e-6


# ---------------------------------------------------------------------------
# sector geometry

def _coverage_1d(domain, theta):
    a, b = domain.bounds
    cut = a + (theta / TWO_PI) * (b - a)
    x = domain.coords()
    h = domain.spacings[0]
    return np.clip((cut - (x - 0.5 * h)) / h, 0.0, 1.0)


def _ray_exit(domain, p, alpha):
    """Where the ray from p at angle alpha leaves the rectangle."""
    ax, bx, ay, by = domain.bounds
    px, py = p
    dx, dy = math.cos(alpha), math.sin(alpha)
    rho = math.inf
    if dx > 1e-300:
        rho = min(rho, (bx - px) / dx)
    elif dx < -1e-300:
        rho = min(rho, (ax - px) / dx)
    if dy > 1e-300:
        rho = min(rho, (by - py) / dy)
    elif dy < -1e-300:
        rho = min(rho, (ay - py) / dy)
    return (px + rho * dx, py + rho * dy)


def _wedge_polygon(domain, p, theta):
    from shapely.geometry import Polygon

    ax, bx, ay, by = domain.bounds
    px, py = p
    corners = [(bx, by), (ax, by), (ax, ay), (bx, ay)]
    args = [math.atan2(cy - py, cx - px) % TWO_PI for cx, cy in corners]
    inside = sorted(
        (a_, c) for a_, c in zip(args, corners) if 0.0 < a_ < theta
    )
    verts = [(px, py), _ray_exit(domain, p, 0.0)] \
        + [c for _, c in inside] + [_ray_exit(domain, p, theta)]
    poly = Polygon(verts)
    if not poly.is_valid:
        poly = poly.buffer(0.0)
    return poly


def _point_seg_dist(pts, s0, s1):
    d = np.asarray(s1) - np.asarray(s0)
    L2 = float(d @ d)
    rel = pts - np.asarray(s0)
    t = np.clip(rel @ d / max(L2, 1e-300), 0.0, 1.0)
    proj = np.asarray(s0) + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1)


def _coverage_2d(domain, p, theta):
    from shapely.geometry import box

    pts = domain.coords()
    px, py = p
    ang = np.arctan2(pts[:, 1] - py, pts[:, 0] - px) % TWO_PI
    at_apex = np.hypot(pts[:, 1] - py, pts[:, 0] - px) < 1e-14
    inside = (ang <= theta) | at_apex
    cov = inside.astype(float)

    wedge = _wedge_polygon(domain, p, theta)
    hx, hy = domain.spacings
    diag = 0.5 * math.hypot(hx, hy)
    seg0 = ((px, py), _ray_exit(domain, p, 0.0))
    segt = ((px, py), _ray_exit(domain, p, theta))
    near = (
        (_point_seg_dist(pts, *seg0) <= diag)
        | (_point_seg_dist(pts, *segt) <= diag)
    )
    cell_area = hx * hy
    for i in np.nonzero(near)[0]:
        cx, cy = pts[i]
        cell = box(cx - 0.5 * hx, cy - 0.5 * hy, cx + 0.5 * hx, cy + 0.5 * hy)
        cov[i] = wedge.intersection(cell).area / cell_area
    return cov


def default_apex(domain):
    """Interior node closest to the domain center (2D only)."""
    if domain.dim == 1:
        return None
    ax, bx, ay, by = domain.bounds
    pts = domain.coords()
    i = int(np.argmin((pts[:, 0] - 0.5 * (ax + bx)) ** 2
                      + (pts[:, 1] - 0.5 * (ay + by)) ** 2))
    return (float(pts[i, 0]), float(pts[i, 1]))


def sector_coverage(domain, p, theta):
    """Per-cell covered-area fractions of the translated sector."""
    if theta <= 0.0:
        return np.zeros(domain.num_nodes)
    if theta >= TWO_PI:
        return np.ones(domain.num_nodes)
    if domain.dim == 1:
        return _coverage_1d(domain, theta)
    p = p or default_apex(domain)
    return _coverage_2d(domain, p, theta)


def sector_indicator(domain, p, theta):
    """Nodal 0/1 indicator of the translated sector (no cell fractions)."""
    if theta <= 0.0:
        return GridFunction(np.zeros(domain.num_nodes), domain)
    if theta >= TWO_PI:
        return GridFunction(np.ones(domain.num_nodes), domain)
    if domain.dim == 1:
        a, b = domain.bounds
        cut = a + (theta / TWO_PI) * (b - a)
        return GridFunction((domain.coords() <= cut).astype(float), domain)
    p = p or default_apex(domain)
    pts = domain.coords()
    ang = np.arctan2(pts[:, 1] - p[1], pts[:, 0] - p[0]) % TWO_PI
    at_apex = np.hypot(pts[:, 1] - p[1], pts[:, 0] - p[0]) < 1e-14
    return GridFunction(((ang <= theta) | at_apex).astype(float), domain)


@dataclass(frozen=True)
class SectorPotential:
    """Two-valued profile: value ``left`` on the sector, ``right`` outside."""

    domain: object
    p: Optional[tuple]
    theta: float
    left: float
    right: float
    coverage: np.ndarray

    def compose(self, g):
        """Cell-averaged nodal values of g applied to the two-valued profile."""
        return float(g(self.left)) * self.coverage \
            + float(g(self.right)) * (1.0 - self.coverage)

    @property
    def realized(self):
        return GridFunction(
            self.left * self.coverage + self.right * (1.0 - self.coverage),
            self.domain,
        )

    @property
    def measure_fraction(self):
        return float(self.coverage.mean())

    def to_dict(self):
        return {
            "p": list(self.p) if self.p is not None else None,
            "theta": self.theta,
            "left": self.left,
            "right": self.right,
            "measure_fraction": self.measure_fraction,
        }


def make_sector_potential(domain, left, right, theta, p=None):
    return SectorPotential(
        domain=domain, p=p if domain.dim == 2 else None, theta=float(theta),
        left=float(left), right=float(right),
        coverage=sector_coverage(domain, p, theta),
    )


# ---------------------------------------------------------------------------
# balancing

def _lambda_at(L, domain, p, L_val, R_val, theta, k=1):
    cov = sector_coverage(domain, p, theta)
    q = L_val * cov + R_val * (1.0 - cov)
    return eigenpair_potential(L, q, k=k).lam


def endpoint_lambda(L_val, R_val, domain):
    """Eigenvalues of the two constant extremes (theta = 0 and 2 pi).

    Returns (mu1 - R, mu1 - L) and cross-checks both against the eigensolver.
    """
    L = operator_for(domain)
    (mu1, _), = free_modes(domain, 1)
    at0 = mu1 - R_val
    at2pi = mu1 - L_val
    chk0 = eigenpair_potential(L, np.full(domain.num_nodes, R_val), k=1).lam
    chk1 = eigenpair_potential(L, np.full(domain.num_nodes, L_val), k=1).lam
    if abs(chk0 - at0) > 1e-9 or abs(chk1 - at2pi) > 1e-9:
        raise NoConvergenceError(
            f"constant-potential identity violated: {chk0 - at0:.2e}, {chk1 - at2pi:.2e}"
        )
    return at0, at2pi


def balance_theta(L_val, R_val, domain, p=None,
                  tol_lambda=BALANCE_TOL_LAMBDA, tol_theta=BALANCE_TOL_THETA,
                  max_iter=200):
    """Angle at which the two-valued potential has vanishing ground eigenvalue.

    Requires the plateau values to straddle the free ground eigenvalue
    (weakly on one side); the boundary cases return the endpoint angles.
    """
    L = operator_for(domain)
    (mu1, _), = free_modes(domain, 1)
    eq = 1e-9 * max(1.0, abs(mu1))
    if abs(L_val - mu1) <= eq:
        return TWO_PI
    if abs(R_val - mu1) <= eq:
        return 0.0
    if not ((L_val < mu1 < R_val) or (R_val < mu1 < L_val)):
        raise OutOfDomainError(
            f"plateau values ({L_val:.6g}, {R_val:.6g}) do not straddle mu1={mu1:.6g}"
        )
    if domain.dim == 2:
        p = p or default_apex(domain)

    lo, hi = 0.0, TWO_PI
    g_lo = mu1 - R_val
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = _lambda_at(L, domain, p, L_val, R_val, mid)
        if abs(g_mid) <= tol_lambda:
            return mid
        if g_lo * g_mid < 0:
            hi = mid
        else:
            lo, g_lo = mid, g_mid
        if hi - lo <= tol_theta:
            mid = 0.5 * (lo + hi)
            g_mid = _lambda_at(L, domain, p, L_val, R_val, mid)
            if abs(g_mid) <= tol_lambda:
                return mid
            raise NoConvergenceError(
                f"balance residual {g_mid:.3e} above {tol_lambda:.1e} "
                f"at bracket width {hi - lo:.1e}",
                residual=g_mid,
            )
    raise NoConvergenceError("balance bisection exhausted its budget")


def balanced_two_valued(f, left, right, domain, p=None):
    """Balance the potential of the two-valued profile with values (left, right)."""
    theta = balance_theta(float(f.d1(left)), float(f.d1(right)), domain, p=p)
    return make_sector_potential(domain, left, right, theta, p=p)


# ---------------------------------------------------------------------------
# nonfold searches

@dataclass(frozen=True)
class NonfoldCandidate:
    """A two-valued base point with vanishing eigenvalue functionals."""

    potential: SectorPotential
    lam: float
    delta: float
    independence: float
    witnesses: dict
    k: int = 1

    def to_dict(self):
        return {
            "potential": self.potential.to_dict(),
            "lambda": self.lam,
            "delta": self.delta,
            "independence": self.independence,
            "witnesses": dict(self.witnesses),
            "k": self.k,
        }


def potential_functionals(pot, f, k=1, need_tau=False):
    """Functional bundle at a two-valued base point (cell-averaged composition)."""
    L = operator_for(pot.domain)
    return functional_values_potential(
        L,
        pot.compose(f.d1),
        pot.compose(f.d2),
        q3=pot.compose(f.d3) if need_tau else None,
        k=k,
        need_tau=need_tau,
    )


def _probe_pair(pot):
    cov = pot.coverage
    dom = pot.domain
    if 0.02 < pot.theta < TWO_PI - 0.02:
        return (GridFunction(cov.copy(), dom),
                GridFunction(1.0 - cov, dom))
    mid = sector_coverage(dom, pot.p, math.pi)
    return (GridFunction(mid, dom), GridFunction(1.0 - mid, dom))


def _candidate(pot, f, k, witnesses):
    L = operator_for(pot.domain)
    fv = potential_functionals(pot, f, k=k, need_tau=True)
    indep = independence_of(fv, _probe_pair(pot), L.w0)
    return NonfoldCandidate(
        potential=pot, lam=fv.lam, delta=fv.delta,
        independence=indep, witnesses=witnesses, k=k,
    )


def _scan_roots(fn, lo, hi, n=4001):
    from .nonlinearity import _sign_change_roots

    xs = np.linspace(lo, hi, n)
    return _sign_change_roots(fn, xs)


def _dominant_negative_curvature(f, x_star, direction, window, mu1):
    """Strongest negative-curvature point past an inflection, clear of mu1.

    Scans the monotone stretch of f'' starting at x_star in the given
    direction (up to the next curvature zero or the window edge) and picks
    the most negative f'' subject to the slope keeping a safe margin to the
    free ground eigenvalue; a strong plateau value makes the restored height
    valley deep instead of grazing its flanking fold.
    """
    margin = 0.02 * max(f.M - f.m, 1.0)
    lo, hi = window
    edge = hi if direction > 0 else lo
    others = [z for z in _scan_roots(f.d2, lo, hi)
              if (z - x_star) * direction > 1e-9]
    if others:
        edge = min(others, key=lambda z: abs(z - x_star))
    a, b = sorted((x_star + direction * 1e-9, edge))
    xs = np.linspace(a, b, 800)
    d2v = f.d2(xs)
    d1v = f.d1(xs)
    ok = (d2v < -1e-6) & (np.abs(d1v - mu1) >= margin)
    if not np.any(ok):
        return None
    return float(xs[ok][np.argmin(d2v[ok])])


def find_positive_delta_nonfold(f, domain):
    """Balanced two-valued base point with vanishing eigenvalue and positive delta.

    Recipe: a point of negative curvature near an inflection supplies the
    dominant plateau; an almost-critical tail point on the opposite side of
    the ground eigenvalue supplies the other; the sector angle balances the
    eigenvalue, and the near-zero curvature of the tail leaves delta with the
    sign of the negative-curvature plateau contribution.
    """
    (mu1, _), (mu2, _) = free_modes(domain, 2)
    p = default_apex(domain)

    inflections = _scan_roots(f.d2, *f.window)
    if not inflections:
        raise StageFailureError(
            "inflection", "no curvature sign change on the scan window",
            diagnostics={"window": list(f.window)},
        )

    attempts = []
    for x_star in inflections:
        for direction in (-1.0, 1.0):
            x_near = _dominant_negative_curvature(f, x_star, direction,
                                                  f.window, mu1)
            if x_near is None:
                continue
            s = float(f.d1(x_near)) - mu1
            if abs(s) < 1e-6:
                continue
            side = "above" if s < 0 else "below"
            for tol_tail in (1e-4, 1e-5, 1e-6):
                try:
                    x_tail = find_almost_critical(f, mu1, side, tol=tol_tail)
                except Exception as exc:
                    attempts.append({"x_star": x_star, "side": side,
                                     "stage": "almost-critical", "error": str(exc)})
                    break
                try:
                    pot = balanced_two_valued(f, x_near, x_tail, domain, p=p)
                except OutOfDomainError as exc:
                    attempts.append({"x_star": x_star, "side": side,
                                     "stage": "balance", "error": str(exc)})
                    break
                cand = _candidate(pot, f, 1, {
                    "x_star": float(x_star), "l": float(x_near),
                    "r": float(x_tail), "tail_curvature_tol": tol_tail,
                })
                if cand.delta > 0 and abs(cand.lam) <= NONFOLD_TOL:
                    return cand
                attempts.append({"x_star": x_star, "side": side,
                                 "stage": "delta-positive",
                                 "lambda": cand.lam, "delta": cand.delta})
    raise StageFailureError(
        "delta-positive", "no candidate achieved positive delta",
        diagnostics={"attempts": attempts},
    )


def _delta_of_pair(f, left, right, domain, p, k=1):
    pot = balanced_two_valued(f, left, right, domain, p=p)
    fv = potential_functionals(pot, f, k=k)
    return fv, pot


def _monotonic_intervals(f, x_star, window):
    """Maximal intervals around an inflection on which f'' keeps one sign."""
    zeros = sorted(_scan_roots(f.d2, *window))
    lo, hi = window
    left = lo
    right = hi
    for z in zeros:
        if z < x_star - 1e-12:
            left = max(left, z)
        elif z > x_star + 1e-12:
            right = min(right, z)
    return (left, x_star), (x_star, right)


def find_regular_nonfold(f, domain):
    """Two-valued common zero of both eigenvalue functionals with independent gradients.

    One plateau is pinned at a zero of f''' inside a monotone stretch of the
    slope; the other is swept through the opposite stretch, driving delta
    through zero while the angle rebalances the eigenvalue at every step.
    """
    (mu1, _), (mu2, _) = free_modes(domain, 2)
    p = default_apex(domain)
    window = f.window

    inflections = _scan_roots(f.d2, *window)
    if not inflections:
        raise StageFailureError(
            "inflection", "no curvature sign change on the scan window",
            diagnostics={"window": list(window)},
        )

    attempts = []
    for x_star in inflections:
        I_minus, I_plus = _monotonic_intervals(f, x_star, window)
        for side_l, side_r in ((I_minus, I_plus), (I_plus, I_minus)):
            if side_l[1] - side_l[0] < 1e-9 or side_r[1] - side_r[0] < 1e-9:
                continue
            ell_candidates = _scan_roots(f.d3, side_l[0] + 1e-12, side_l[1] - 1e-12)
            for ell in ell_candidates:
                if abs(float(f.d2(ell))) < 1e-8:
                    continue
                s_l = float(f.d1(ell)) - mu1
                if abs(s_l) < 1e-6:
                    continue
                try:
                    cand = _sweep_opposite(f, domain, p, ell, s_l, side_r, x_star)
                except StageFailureError as exc:
                    attempts.append({"x_star": x_star, "ell": ell,
                                     "stage": exc.stage,
                                     "diagnostics": exc.diagnostics})
                    continue
                if cand is not None:
                    return cand
    raise StageFailureError(
        "delta-bracket", "no opposite interval produced a delta sign change",
        diagnostics={"attempts": attempts},
    )


def _sweep_opposite(f, domain, p, ell, s_l, interval, x_star):
    """Bisect the moving plateau over the opposite interval on the sign of delta."""
    (mu1, _), = free_modes(domain, 1)
    lo, hi = interval
    crossings = _scan_roots(lambda x: f.d1(x) - mu1, lo, hi)
    if not crossings:
        return None
    # the slope is monotone on the interval, so the crossing is unique
    y_mu = min(crossings, key=lambda c: abs(c - x_star))
    want = -np.sign(s_l)
    span = hi - lo
    # the sub-segment with the wanted slope sign lies on one side of y_mu
    if np.sign(float(f.d1(min(y_mu + 1e-6 * span, hi))) - mu1) == want:
        r_edge, edge_is_window = hi, abs(hi - f.window[1]) < 1e-9
    elif np.sign(float(f.d1(max(y_mu - 1e-6 * span, lo))) - mu1) == want:
        r_edge, edge_is_window = lo, abs(lo - f.window[0]) < 1e-9
    else:
        return None

    fv_a, _ = _delta_of_pair(f, ell, y_mu, domain, p)
    d_a = fv_a.delta

    if edge_is_window:
        side = "above" if want > 0 else "below"
        try:
            r_b = find_almost_critical(f, mu1, side, tol=1e-5)
        except Exception as exc:
            raise StageFailureError("almost-critical", str(exc)) from exc
    else:
        r_b = r_edge
    fv_b, _ = _delta_of_pair(f, ell, r_b, domain, p)
    d_b = fv_b.delta

    if d_a * d_b > 0:
        raise StageFailureError(
            "no-sign-change",
            "delta has equal signs at the sweep endpoints",
            diagnostics={"delta_at_y_mu": d_a, "delta_at_far_end": d_b,
                         "y_mu": float(y_mu), "far_end": float(r_b)},
        )

    a, b, da = (y_mu, r_b, d_a) if y_mu < r_b else (r_b, y_mu, d_b)
    fv_mid, pot_mid, mid = None, None, 0.5 * (a + b)
    for _ in range(80):
        mid = 0.5 * (a + b)
        fv_mid, pot_mid = _delta_of_pair(f, ell, mid, domain, p)
        if abs(fv_mid.delta) <= NONFOLD_TOL:
            break
        if da * fv_mid.delta < 0:
            b = mid
        else:
            a, da = mid, fv_mid.delta
    else:
        raise StageFailureError(
            "delta-bisection", f"delta stalled at {fv_mid.delta:.3e}",
            diagnostics={"delta": fv_mid.delta},
        )
    cand = _candidate(pot_mid, f, 1, {
        "x_star": float(x_star), "l": float(ell), "r": float(mid),
        "y_mu": float(y_mu), "f3_at_l": float(f.d3(ell)),
    })
    if abs(cand.lam) > NONFOLD_TOL or abs(cand.delta) > NONFOLD_TOL:
        raise StageFailureError(
            "residuals", "candidate residuals above tolerance",
            diagnostics={"lambda": cand.lam, "delta": cand.delta},
        )
    if cand.independence <= INDEPENDENCE_TOL:
        raise StageFailureError(
            "independence", "gradient probe matrix nearly singular",
            diagnostics={"independence": cand.independence},
        )
    return cand


def find_nonfold_Hk(f, domain, k):
    """Nonfold from a pair of slope-level crossings of the k-th free eigenvalue.

    Both plateau values share the slope mu_k, so the k-th eigenvalue vanishes
    for every angle; the angle is then bisected on delta_k alone, whose signs
    at the constant endpoints are opposite (or both vanish, in which case the
    constant profile already qualifies).
    """
    from .nonlinearity import check_hypotheses

    modes = free_modes(domain, k + 1)
    mu = [m for m, _ in modes]
    gap = mu[k] - mu[k - 1] if k == 1 else min(mu[k] - mu[k - 1], mu[k - 1] - mu[k - 2])
    if gap < 1e-8:
        raise DegenerateEigenvalueError(
            f"free eigenvalue {k} is not simple (gap {gap:.2e})", gap=gap
        )
    mu_k = mu[k - 1]
    mu2 = mu[1]
    report = check_hypotheses(f, mu[0], mu2, k=k, mu_k=mu_k)
    if not report.hk:
        raise StageFailureError(
            "hypothesis-hk", "no slope-level crossing pair with opposite curvature",
            diagnostics=report.to_dict(),
        )
    x_mu, y_mu = report.witnesses["x_mu"], report.witnesses["y_mu"]

    psi_k = modes[k - 1][1]
    if domain.dim == 2:
        pts = domain.coords()
        i = int(np.argmax(np.abs(psi_k.values)))
        p = (float(pts[i, 0]), float(pts[i, 1]))
    else:
        p = None

    def delta_at(theta):
        pot = make_sector_potential(domain, x_mu, y_mu, theta, p=p)
        fv = potential_functionals(pot, f, k=k)
        return fv, pot

    fv0, pot0 = delta_at(0.0)
    fv1, pot1 = delta_at(TWO_PI)
    witnesses = {"x_mu": float(x_mu), "y_mu": float(y_mu),
                 "f3_at_x_mu": float(f.d3(x_mu)), "f3_at_y_mu": float(f.d3(y_mu))}

    if abs(fv0.delta) <= NONFOLD_TOL:
        return _candidate(pot0, f, k, witnesses)
    if abs(fv1.delta) <= NONFOLD_TOL:
        return _candidate(pot1, f, k, witnesses)
    if fv0.delta * fv1.delta > 0:
        raise StageFailureError(
            "delta-endpoints", "endpoint deltas share a sign",
            diagnostics={"delta_0": fv0.delta, "delta_2pi": fv1.delta},
        )
    a, b, da = 0.0, TWO_PI, fv0.delta
    for _ in range(80):
        mid = 0.5 * (a + b)
        fv, pot = delta_at(mid)
        if abs(fv.delta) <= NONFOLD_TOL:
            cand = _candidate(pot, f, k, witnesses)
            if abs(cand.lam) > BALANCE_TOL_LAMBDA * 10:
                raise StageFailureError(
                    "lambda-residual", f"eigenvalue residual {cand.lam:.3e}",
                    diagnostics={"lambda": cand.lam},
                )
            return cand
        if da * fv.delta < 0:
            b = mid
        else:
            a, da = mid, fv.delta
    raise StageFailureError(
        "delta-bisection", "delta bisection exhausted its budget",
        diagnostics={"last_delta": fv.delta},
    )
