"""Critical point classification, preimage censuses and certificate pipelines.

The classification reads four numbers at a critical point: the eigenvalue,
delta (transversality of the eigenvalue level), the independence of the two
gradients, and tau (transversality of the delta level along the kernel
direction). Folds have nonzero delta; common zeros of both functionals with
independent gradients are regular degeneracies, and a nonzero tau there
certifies the cubic local structure with its one-to-three preimage transition.

Censuses count solutions of F(u) = y. Every solution lies on the fiber over
the horizontal part of y, so counting reduces to height-level crossings along
one fiber, each polished by a full Newton solve; random ball starts are added
as an independent sweep for robustness.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._cache import free_modes, operator_for
from .domain import GridFunction
from .errors import (
    ApsingError,
    NoConvergenceError,
    OutOfDomainError,
    StageFailureError,
)
from .fibers import fiber_solve, ground_mode, project_z, trace_fiber
from .mollify import restore_lambda_zero, restore_nonfold, smooth
from .nonlinearity import check_hypotheses
from .sectors import (
    find_nonfold_Hk,
    find_positive_delta_nonfold,
    find_regular_nonfold,
    sector_coverage,
)
from .spectral import (
    functional_values,
    independence_of,
)

TOL_CRITICAL = 1e-8
TOL_FOLD = 1e-6
TOL_TAU = 1e-6
TOL_IND = 1e-6
PREIMAGE_TOL = 1e-8
SEPARATION_REL = 1e-2

KIND_FOLD = "Fold"
KIND_REGULAR_NONFOLD = "RegularNonfold"
KIND_CUSP = "Cusp"
KIND_COLLAPSING = "CollapsingCandidate"
KIND_DEGENERATE = "Degenerate"


def _thread_count():
    raw = os.environ.get("AP_THREADS", "")
    try:
        n = int(raw)
        return max(1, n)
    except ValueError:
        return os.cpu_count() or 1


@dataclass
class SingularityCertificate:
    """Machine-checkable record of a classified critical point."""

    kind: str
    u: GridFunction
    lam: float
    delta: float
    tau_value: float
    independence: float
    local_counts: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    census: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    k: int = 1

    def to_dict(self):
        return {
            "kind": self.kind,
            "k": self.k,
            "lambda": self.lam,
            "delta": self.delta,
            "tau": self.tau_value,
            "independence": self.independence,
            "local_counts": [[s, c] for s, c in self.local_counts],
            "residuals": dict(self.residuals),
            "tolerances": dict(self.tolerances),
            "census": dict(self.census),
            "stages": dict(self.stages),
            "u": self.u.values.tolist(),
        }


@dataclass
class PreimageCertificate:
    """Right-hand side with distinct, residual-checked solutions."""

    y: GridFunction
    solutions: list
    residuals: list
    ts: list
    z: GridFunction
    pairwise_min_distance: float
    separation_threshold: float
    h_star: Optional[float] = None
    dropped_starts: int = 0
    meta: dict = field(default_factory=dict)
    trace: Optional[object] = None        # FiberTrace, not serialized

    @property
    def count(self):
        return len(self.solutions)

    def to_dict(self):
        return {
            "count": self.count,
            "residuals": list(self.residuals),
            "ts": list(self.ts),
            "pairwise_min_distance": self.pairwise_min_distance,
            "separation_threshold": self.separation_threshold,
            "h_star": self.h_star,
            "dropped_starts": self.dropped_starts,
            "meta": dict(self.meta),
            "y": self.y.values.tolist(),
            "solutions": [s.values.tolist() for s in self.solutions],
        }


def classify_critical_point(u, f, k=1, probes=None, L=None,
                            tol=TOL_CRITICAL, tol_fold=TOL_FOLD,
                            tol_tau=TOL_TAU, tol_ind=TOL_IND):
    """Decision tree on (|delta|, independence, |tau|) at a critical point."""
    L = L or operator_for(u.domain)
    fv = functional_values(u, f, k=k, need_tau=True, L=L)
    if abs(fv.lam) > tol:
        raise OutOfDomainError(
            f"not a critical point: eigenvalue {fv.lam:.3e} exceeds {tol:.1e}"
        )
    if probes is None:
        w0 = L.w0
        gl = fv.grad_lambda.values
        gd = fv.grad_delta.values
        probes = (GridFunction(gl, u.domain), GridFunction(gd, u.domain))
    indep = independence_of(fv, probes, L.w0)

    if abs(fv.delta) > tol_fold:
        kind = KIND_FOLD
    elif abs(fv.delta) <= tol:
        if indep <= tol_ind:
            kind = KIND_DEGENERATE
        elif abs(fv.tau) > tol_tau:
            kind = KIND_CUSP
        else:
            kind = KIND_COLLAPSING
    else:
        kind = KIND_DEGENERATE

    return SingularityCertificate(
        kind=kind, u=u, lam=fv.lam, delta=fv.delta, tau_value=fv.tau,
        independence=indep, k=k,
        residuals={"lambda": fv.lam, "delta": fv.delta},
        tolerances={"tol": tol, "tol_fold": tol_fold,
                    "tol_tau": tol_tau, "tol_ind": tol_ind},
    )


def _newton_full(y_vals, init, f, L, tol, max_iter=80):
    """Damped Newton for A u - f(u) = y; returns (u, residual) or None."""
    w0 = L.w0
    u = np.asarray(init, dtype=float).copy()

    def res(u):
        return L.apply(u) - f.value(u) - y_vals

    r = res(u)
    rn = np.sqrt(w0) * np.linalg.norm(r)
    from scipy.sparse.linalg import splu

    for _ in range(max_iter):
        if rn <= tol:
            return u, rn
        T = L.shifted(f.d1(u))
        try:
            du = splu(T).solve(-r)
        except RuntimeError:
            return None
        step = 1.0
        for _ in range(30):
            trial = u + step * du
            rt = res(trial)
            rtn = np.sqrt(w0) * np.linalg.norm(rt)
            if rtn < rn:
                u, r, rn = trial, rt, rtn
                break
            step *= 0.5
        else:
            return None
    return (u, rn) if rn <= tol else None


def newton_preimages(y, inits, f, L=None, tol=PREIMAGE_TOL,
                     separation_rel=SEPARATION_REL):
    """Solve F(u) = y from each start, deduplicate, and certify the set."""
    L = L or operator_for(y.domain)
    w0 = L.w0
    yv = y.values
    _, psi1 = ground_mode(y.domain)

    init_arrays = [
        i.values if isinstance(i, GridFunction) else np.asarray(i, float)
        for i in inits
    ]
    workers = min(_thread_count(), max(1, len(init_arrays)))
    if workers > 1 and len(init_arrays) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(
                lambda a: _newton_full(yv, a, f, L, tol), init_arrays
            ))
    else:
        results = [_newton_full(yv, a, f, L, tol) for a in init_arrays]

    converged = [r for r in results if r is not None]
    dropped = len(results) - len(converged)

    sols = []
    for u, rn in converged:
        sols.append((u, rn))
    scale = max((np.sqrt(w0) * np.linalg.norm(u) for u, _ in sols), default=1.0)
    threshold = separation_rel * max(scale, 1e-12)
    unique = []
    for u, rn in sols:
        dup = False
        for v, vrn in unique:
            if np.sqrt(w0) * np.linalg.norm(u - v) < threshold:
                dup = True
                break
        if not dup:
            unique.append((u, rn))
    unique.sort(key=lambda ur: w0 * float(ur[0] @ psi1.values))

    zy, _ = project_z(y, L)
    solutions = [GridFunction(u, y.domain) for u, _ in unique]
    residuals = [float(rn) for _, rn in unique]
    ts = [w0 * float(u.values @ psi1.values) for u in solutions]
    dists = []
    for i in range(len(solutions)):
        for j in range(i + 1, len(solutions)):
            dists.append(np.sqrt(w0) * np.linalg.norm(
                solutions[i].values - solutions[j].values))
    return PreimageCertificate(
        y=y, solutions=solutions, residuals=residuals, ts=ts, z=zy,
        pairwise_min_distance=float(min(dists)) if dists else np.inf,
        separation_threshold=float(threshold),
        dropped_starts=dropped,
    )


def _height_crossings(trace, level):
    """Bracketed t-intervals where the trace height crosses the level."""
    ts, hs = trace.ts, trace.heights
    out = []
    for i in range(len(ts) - 1):
        if (hs[i] - level) * (hs[i + 1] - level) < 0:
            out.append((ts[i], ts[i + 1], trace.points[i].w.values))
    return out


def _adjacent_fold(z, t_from, direction, expected_sign, f, L, w_start,
                   dt0=None, max_steps=200):
    """March along the fiber to the next eigenvalue zero and bisect it.

    Starting just past a degenerate parameter where the eigenvalue vanishes,
    the eigenvalue first takes ``expected_sign``; the next sign change is the
    adjacent fold. Returns the solved fold point.
    """
    scale = max(1.0, abs(t_from))
    dt = dt0 if dt0 is not None else 1e-3 * scale
    t_prev, w_prev = t_from, w_start
    lam_prev = 0.0
    seen_expected = False
    for _ in range(max_steps):
        t_next = t_prev + direction * dt
        pt = fiber_solve(z, t_next, w_prev, f, L)
        if not seen_expected:
            if np.sign(pt.lambda1) == expected_sign:
                seen_expected = True
            elif abs(pt.lambda1) > 1e-6 and dt > 1e-6 * scale:
                dt *= 0.5          # overshot the thin window; look closer
                continue
        elif np.sign(pt.lambda1) == -expected_sign:
            a, b = (t_prev, t_next) if direction > 0 else (t_next, t_prev)
            la = lam_prev if direction > 0 else pt.lambda1
            wv = w_prev if direction > 0 else pt.w.values
            fold = pt
            for _ in range(80):
                mid = 0.5 * (a + b)
                fold = fiber_solve(z, mid, wv, f, L)
                if abs(fold.lambda1) <= 1e-10:
                    break
                if la * fold.lambda1 <= 0:
                    b = mid
                else:
                    a, la, wv = mid, fold.lambda1, fold.w.values
            return fold
        t_prev, w_prev, lam_prev = t_next, pt.w.values, pt.lambda1
        dt = min(dt * 1.4, 0.2 * scale)
    raise NoConvergenceError(
        f"no adjacent fold in direction {direction:+.0f} from t={t_from:.4g}"
    )


def _march_below_level(z, t_from, direction, level, f, L, w_start,
                       dt0=0.05, max_steps=300):
    """March outward until the height drops below the level; bracket it."""
    t_prev, w_prev = t_from, w_start
    h_prev = fiber_solve(z, t_from, w_start, f, L, compute_lambda=False).h
    dt = dt0
    for _ in range(max_steps):
        t_next = t_prev + direction * dt
        pt = fiber_solve(z, t_next, w_prev, f, L, compute_lambda=False)
        if pt.h < level:
            if direction > 0:
                return (t_prev, t_next, w_prev)
            return (t_next, t_prev, pt.w.values)
        t_prev, w_prev, h_prev = t_next, pt.w.values, pt.h
        dt = min(dt * 1.3, 1.0)
    raise NoConvergenceError(
        f"height never fell below {level:.4g} in direction {direction:+.0f}"
    )


def _refine_crossing(trace_z, bracket, level, f, L, tol_h=1e-10, max_iter=200):
    a, b, w_warm = bracket
    pa = fiber_solve(trace_z, a, w_warm, f, L, compute_lambda=False)
    ga = pa.h - level
    pt = pa
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        pt = fiber_solve(trace_z, mid, pt.w.values, f, L, compute_lambda=False)
        gm = pt.h - level
        if abs(gm) <= tol_h or (b - a) < 1e-14 * max(1.0, abs(a) + abs(b)):
            return pt
        if ga * gm < 0:
            b = mid
        else:
            a, ga = mid, gm
    return pt


def _pipeline_sigma(domain):
    """Smoothing width for the certificate pipelines, fixed in physical units.

    A width proportional to the grid spacing would make the smoothed base
    point a different continuum object at every resolution and the certified
    level would drift at first order under refinement; pinning the width to
    the domain extent keeps the drift at the discretization order.
    """
    if domain.dim == 1:
        a, b = domain.bounds
        return 1.5e-2 * (b - a)
    ax, bx, ay, by = domain.bounds
    return 1.5e-2 * min(bx - ax, by - ay)


def four_preimage_certificate(f, domain, seed=0, tol=PREIMAGE_TOL, sigma=None):
    """End-to-end pipeline certifying a right-hand side with four preimages.

    Builds a base point where the height has a strict local minimum along its
    fiber, confirms flanking maxima, picks the midpoint level, and polishes
    the four crossings into solutions of the full equation.
    """
    L = operator_for(domain)
    mu1, psi1 = ground_mode(domain)
    w0 = L.w0

    cand = find_positive_delta_nonfold(f, domain)

    sig = sigma if sigma is not None else _pipeline_sigma(domain)
    stage = "mollify"
    try:
        u0 = smooth(cand.potential.realized, sig)
        direction = smooth(
            GridFunction(cand.potential.coverage.copy(), domain), sig
        )
        restored = restore_lambda_zero(u0, f, direction, L=L)
    except ApsingError as exc:
        raise StageFailureError(stage, str(exc),
                                diagnostics={"candidate": cand.to_dict()}) from exc

    u_m = restored.u
    stage = "fiber"
    z, _ = project_z(
        GridFunction(L.apply(u_m.values) - f.value(u_m.values), domain), L
    )
    t_m = w0 * float(u_m.values @ psi1.values)
    w_m = u_m.values - t_m * psi1.values
    h0 = fiber_solve(z, t_m, w_m, f, L, compute_lambda=False).h

    # the restored point has vanishing eigenvalue and positive delta, so the
    # eigenvalue is negative just below t_m and positive just above; the
    # adjacent zeros are the flanking fold maxima of the height
    try:
        fold_left = _adjacent_fold(z, t_m, -1.0, -1.0, f, L, w_m)
        fold_right = _adjacent_fold(z, t_m, +1.0, +1.0, f, L, w_m)
    except ApsingError as exc:
        raise StageFailureError(stage, str(exc),
                                diagnostics={"t_m": t_m, "h_m": h0}) from exc
    h1, h2 = fold_left.h, fold_right.h
    if not (h1 > h0 and h2 > h0):
        raise StageFailureError(
            stage, "flanking folds do not rise above the local minimum",
            diagnostics={"h0": h0, "h1": h1, "h2": h2},
        )
    h_star = 0.5 * (h0 + min(h1, h2))

    stage = "crossings"
    # inner crossings: the height is monotone between consecutive critical
    # parameters; outer crossings: march until the height sinks below level
    brackets = [
        (fold_left.t, t_m, fold_left.w.values),
        (t_m, fold_right.t, w_m),
    ]
    try:
        brackets.insert(0, _march_below_level(
            z, fold_left.t, -1.0, h_star, f, L, fold_left.w.values))
        brackets.append(_march_below_level(
            z, fold_right.t, +1.0, h_star, f, L, fold_right.w.values))
    except ApsingError as exc:
        raise StageFailureError(stage, str(exc),
                                diagnostics={"h_star": h_star}) from exc
    crossing_points = [_refine_crossing(z, br, h_star, f, L) for br in brackets]
    if len(crossing_points) < 4:
        raise StageFailureError(
            stage, f"only {len(crossing_points)} height crossings",
            diagnostics={"h0": h0, "h1": h1, "h2": h2, "h_star": h_star},
        )

    stage = "polish"
    y = GridFunction(z.values + h_star * psi1.values, domain)
    rng = np.random.default_rng(seed)
    ball = [p.u.values for p in crossing_points]
    spread = max(1.0, max(np.sqrt(w0) * np.linalg.norm(b) for b in ball))
    extra = [
        ball[i % len(ball)] + 0.05 * spread * rng.standard_normal(domain.num_nodes)
        for i in range(8)
    ]
    cert = newton_preimages(y, ball + extra, f, L, tol=tol)
    if cert.count < 4:
        raise StageFailureError(
            stage, f"only {cert.count} distinct solutions survived polishing",
            diagnostics={"h_star": h_star, "residuals": cert.residuals},
        )
    cert.h_star = h_star
    cert.meta.update({
        "t_crossings": [p.t for p in crossing_points],
        "h_flank": [h1, h2],
        "h_min": h0,
        "base_candidate": cand.to_dict(),
        "restoration": restored.to_dict(),
        "seed": seed,
    })
    span_lo = crossing_points[0].t - 0.5
    span_hi = crossing_points[-1].t + 0.5
    cert.trace = trace_fiber(z, span_lo, span_hi, f, L,
                             step_cap=(span_hi - span_lo) / 120.0)
    return cert


def _unfold_direction(u_c, f, fv, L):
    """Horizontal image direction with the strongest eigenvalue response.

    Moving the horizontal coordinate of the target by dz shifts the fiber
    point through the inverse of the restricted linearization, so the
    eigenvalue response to dz is the pairing of dz with the projected
    eigenvalue gradient under that inverse. Choosing dz along the projected
    gradient makes the response a positive quadratic form: this is the
    direction in which the cubic height profile of nearby fibers unfolds
    fastest.
    """
    w0 = L.w0
    _, psi1 = ground_mode(u_c.domain)
    g = fv.grad_lambda.values
    g = g - (w0 * float(g @ psi1.values)) * psi1.values
    gn = np.sqrt(w0) * np.linalg.norm(g)
    if gn < 1e-14:
        raise NoConvergenceError("projected eigenvalue gradient vanishes")
    return g / gn


def _horn_tangent(u_c, f, fv, L):
    """Measure the image-side tangent of the cusp horn.

    Strategy: push the horizontal coordinate along the unfolding direction by
    a small test amount on the side where the eigenvalue profile along the
    fiber acquires two zeros, locate the resulting fold pair, and aim at the
    midpoint of their heights. Returns (direction, s_scale, t_extent,
    details): a unit image direction such that sweeping along +direction
    enters the three-preimage wedge, the amplitude at which the wedge was
    measured, and the fold-pair half-width in the fiber parameter.
    """
    w0 = L.w0
    _, psi1 = ground_mode(u_c.domain)
    d_z = _unfold_direction(u_c, f, fv, L)
    y_c_vals = L.apply(u_c.values) - f.value(u_c.values)
    h0 = w0 * float(y_c_vals @ psi1.values)
    z_c = GridFunction(y_c_vals - h0 * psi1.values, u_c.domain)
    t_c = w0 * float(u_c.values @ psi1.values)
    w_c = u_c.values - t_c * psi1.values
    ball = 0.5 * max(np.sqrt(w0) * np.linalg.norm(u_c.values), 1.0)

    # curvature of the eigenvalue along the central fiber
    dt = 0.1 * ball
    lam_p = fiber_solve(z_c, t_c + dt, w_c, f, L).lambda1
    lam_m = fiber_solve(z_c, t_c - dt, w_c, f, L).lambda1
    a_t2 = (lam_p + lam_m) / (2.0 * dt**2)

    # response of the eigenvalue to the horizontal push
    s0 = 0.01
    zp = GridFunction(z_c.values + s0 * d_z.copy(), u_c.domain)
    zm = GridFunction(z_c.values - s0 * d_z.copy(), u_c.domain)
    lam_zp = fiber_solve(zp, t_c, w_c, f, L).lambda1
    lam_zm = fiber_solve(zm, t_c, w_c, f, L).lambda1
    b_s = (lam_zp - lam_zm) / (2.0 * s0)
    if abs(a_t2) < 1e-10 or abs(b_s) < 1e-10:
        raise NoConvergenceError(
            f"degenerate unfolding response: a={a_t2:.3e}, b={b_s:.3e}"
        )
    side = -np.sign(a_t2 * b_s)

    # aim the fold pair extent at a fraction of the census ball
    s_nominal = (0.15 * ball) ** 2 * abs(a_t2 / b_s)
    for factor in (1.0, 4.0, 0.25, 16.0, 0.0625):
        s_signed = side * s_nominal * factor
        t_ext = np.sqrt(abs(s_signed * b_s / a_t2))
        t_half = 3.0 * t_ext
        z_t = GridFunction(z_c.values + s_signed * d_z, u_c.domain)
        try:
            tr = trace_fiber(z_t, t_c - t_half, t_c + t_half, f, L,
                             step_cap=t_ext / 6.0)
        except ApsingError:
            continue
        lams = tr.lambdas
        flips = np.nonzero(lams[:-1] * lams[1:] < 0)[0]
        if len(flips) < 2:
            continue
        crit_hs = []
        for i in (flips[0], flips[-1]):
            a_t, b_t = tr.ts[i], tr.ts[i + 1]
            la = lams[i]
            wv = tr.points[i].w.values
            pt = tr.points[i]
            for _ in range(60):
                mid = 0.5 * (a_t + b_t)
                pt = fiber_solve(z_t, mid, wv, f, L)
                if abs(pt.lambda1) <= 1e-10:
                    break
                if la * pt.lambda1 <= 0:
                    b_t = mid
                else:
                    a_t, la, wv = mid, pt.lambda1, pt.w.values
            crit_hs.append(pt.h)
        h_mid = 0.5 * (crit_hs[0] + crit_hs[1])
        gap = abs(crit_hs[0] - crit_hs[1])
        if gap < 1e-9:
            continue
        slope = (h_mid - h0) / s_signed
        tangent = side * (d_z + slope * psi1.values)
        tn = np.sqrt(w0) * np.linalg.norm(tangent)
        details = {
            "a_t2": float(a_t2), "b_s": float(b_s), "side": float(side),
            "s_test": float(s_signed), "fold_heights": [float(v) for v in crit_hs],
            "height_slope": float(slope), "fold_gap": float(gap),
            "t_extent": float(t_ext),
        }
        return tangent / tn, abs(s_signed) * tn, t_ext, details
    raise NoConvergenceError("no horizontal push produced a fold pair")


def _census_at(y, u_c, f, L, ball_radius, rng, n_random=40, t_resolution=None,
               separation_rel=None):
    """Count distinct preimages near u_c, fiber crossings first.

    ``t_resolution`` refines the trace step so that fold pairs tighter than
    the default continuation step are still resolved; the deduplication
    threshold shrinks with it so nearly coalescing preimages stay distinct.
    """
    w0 = L.w0
    _, psi1 = ground_mode(y.domain)
    zy, level = project_z(y, L)
    t_c = w0 * float(u_c.values @ psi1.values)
    t_half = max(1.2 * ball_radius, 0.25)
    step = t_half / 40.0
    if t_resolution is not None:
        step = min(step, t_resolution)
    trace = trace_fiber(zy, t_c - t_half, t_c + t_half, f, L,
                        step_cap=step, compute_lambda=False)
    seeds = [
        _refine_crossing(zy, br, level, f, L).u.values
        for br in _height_crossings(trace, level)
    ]
    seeds += [
        u_c.values + ball_radius * 0.5 * rng.standard_normal(y.domain.num_nodes)
        for _ in range(n_random)
    ]
    if separation_rel is None:
        separation_rel = SEPARATION_REL
    cert = newton_preimages(y, seeds, f, L, separation_rel=separation_rel)
    near = [
        (s, r, t) for s, r, t in zip(cert.solutions, cert.residuals, cert.ts)
        if np.sqrt(w0) * np.linalg.norm(s.values - u_c.values) <= ball_radius
    ]
    return len(near), cert


def cusp_certificate(f, domain, k=1, route="auto", seed=0, sweep_scale=None,
                     sweep_sigma=None):
    """Pipeline: two-valued degенerate point, smoothing with restoration,
    classification, and a preimage census across the cubic transition.

    The census sweeps right-hand sides along the image-side tangent of the
    critical-value curve; on one side of the degenerate image the local count
    is one, on the other it is three.
    """
    L = operator_for(domain)
    w0 = L.w0

    stage = "nonfold"
    if route not in ("auto", "hk", "regular"):
        raise ValueError("route must be auto, hk or regular")
    cand = None
    if route in ("auto", "hk"):
        try:
            cand = find_nonfold_Hk(f, domain, k)
        except (StageFailureError, ApsingError):
            if route == "hk":
                raise
    if cand is None:
        if k != 1:
            raise StageFailureError(
                stage, "higher-mode certificates need the level-crossing route"
            )
        cand = find_regular_nonfold(f, domain)

    stage = "mollify"
    sig = sweep_sigma if sweep_sigma is not None else _pipeline_sigma(domain)
    pot = cand.potential
    try:
        u0 = smooth(pot.realized, sig)
        v1 = smooth(GridFunction(pot.coverage.copy(), domain), sig)
        if 0.02 < pot.theta < 2.0 * np.pi - 0.02:
            v2 = smooth(GridFunction(1.0 - pot.coverage, domain), sig)
        else:
            mid_cov = sector_coverage(domain, pot.p, np.pi)
            v1 = smooth(GridFunction(mid_cov, domain), sig)
            v2 = smooth(GridFunction(1.0 - mid_cov, domain), sig)
        restored = restore_nonfold(u0, f, v1, v2, L=L, k=k)
    except ApsingError as exc:
        raise StageFailureError(stage, str(exc),
                                diagnostics={"candidate": cand.to_dict()}) from exc

    stage = "classify"
    u_c = restored.u
    cert = classify_critical_point(u_c, f, k=k, probes=(v1, v2), L=L)
    cert.stages = {
        "nonfold": cand.to_dict(),
        "restoration": restored.to_dict(),
    }

    if cert.kind == KIND_COLLAPSING:
        cert.census["collapse_report"] = detect_collapsing_fiber(u_c, f, L)
        return cert
    if cert.kind != KIND_CUSP:
        return cert
    if k != 1:
        return cert

    stage = "census"
    fv = functional_values(u_c, f, k=k, need_tau=True, L=L)
    try:
        d_img, s_scale, t_ext, tangent_info = _horn_tangent(u_c, f, fv, L)
    except ApsingError as exc:
        raise StageFailureError(stage, str(exc)) from exc
    y_c = GridFunction(L.apply(u_c.values) - f.value(u_c.values), domain)
    rng = np.random.default_rng(seed)
    u_scale = max(np.sqrt(w0) * np.linalg.norm(u_c.values), 1.0)
    # localize to the measured fold extent: preimages of other global branches
    # must stay outside the counting ball
    ball_radius = min(0.5 * u_scale, 3.5 * t_ext)
    scale = sweep_scale if sweep_scale is not None else s_scale
    sep_rel = min(SEPARATION_REL, 0.1 * t_ext / u_scale)

    counts = []
    census_rows = []
    for attempt in range(4):
        counts, census_rows = [], []
        svals = scale * np.array([-1.0, -0.6, -0.3, 0.3, 0.6, 1.0])
        for s in svals:
            y_s = GridFunction(y_c.values + s * d_img, domain)
            n_near, _ = _census_at(y_s, u_c, f, L, ball_radius, rng,
                                   t_resolution=t_ext / 6.0,
                                   separation_rel=sep_rel)
            counts.append(n_near)
            census_rows.append({"s": float(s), "count": int(n_near)})
        if (1 in counts) and (3 in counts):
            break
        scale *= 0.4
    cert.local_counts = [(row["s"], row["count"]) for row in census_rows]
    cert.census = {
        "rows": census_rows,
        "direction": d_img.tolist(),
        "ball_radius": ball_radius,
        "sweep_scale": scale,
        "t_extent": t_ext,
        "separation_rel": sep_rel,
        "tangent": tangent_info,
        "seed": seed,
    }
    if not ((1 in counts) and (3 in counts)):
        raise StageFailureError(
            stage, "census did not realize both one and three preimages",
            diagnostics={"counts": counts, "sweep_scale": scale,
                         "tangent": tangent_info},
        )
    return cert


def three_preimage_certificate(f, domain, k=1, seed=0, cert=None):
    """Polish a census row with at least three local preimages into solutions.

    When the family also has the off-to-minus-infinity height behavior, the
    fiber is traced globally and the extra far crossing joins the solution
    set, giving a fourth preimage.
    """
    if cert is None:
        cert = cusp_certificate(f, domain, k=k, seed=seed)
    if cert.kind != KIND_CUSP:
        raise OutOfDomainError(f"expected a cusp certificate, got {cert.kind}")

    L = operator_for(domain)
    w0 = L.w0
    mu1, psi1 = ground_mode(domain)
    u_c = cert.u
    fv = functional_values(u_c, f, k=k, need_tau=True, L=L)
    rows = [r for r in cert.census.get("rows", []) if r["count"] >= 3]
    if not rows:
        raise StageFailureError("census", "no sweep row with three local preimages")
    row = max(rows, key=lambda r: r["count"])

    if "direction" in cert.census:
        d_img = np.asarray(cert.census["direction"], dtype=float)
    else:
        d_img, _, _, _ = _horn_tangent(u_c, f, fv, L)
    y_c = GridFunction(L.apply(u_c.values) - f.value(u_c.values), domain)
    y = GridFunction(y_c.values + row["s"] * d_img, domain)

    rng = np.random.default_rng(seed)
    ball_radius = cert.census.get("ball_radius",
                                  0.5 * max(np.sqrt(w0) * np.linalg.norm(u_c.values), 1.0))
    t_ext = cert.census.get("t_extent", ball_radius / 10.0)
    sep_rel = cert.census.get("separation_rel", SEPARATION_REL)
    zy, level = project_z(y, L)
    t_c = w0 * float(u_c.values @ psi1.values)

    fine_step = t_ext / 6.0
    report = check_hypotheses(f, mu1, free_modes(domain, 2)[1][0])
    if report.h4:
        # global trace: the height sinks on both ends, exposing far crossings
        halfwidth = max(3.0, 4.0 * ball_radius)
        trace = None
        for _ in range(6):
            trace = trace_fiber(zy, t_c - halfwidth, t_c + halfwidth, f, L,
                                step_cap=halfwidth / 60.0, compute_lambda=False)
            hs = trace.heights
            if hs[0] < level and hs[-1] < level:
                break
            halfwidth *= 1.7
        brackets = _height_crossings(trace, level)
    else:
        t_half = max(1.2 * ball_radius, 0.25)
        trace = trace_fiber(zy, t_c - t_half, t_c + t_half, f, L,
                            step_cap=t_half / 40.0, compute_lambda=False)
        brackets = _height_crossings(trace, level)
    # refine the local cluster at fold resolution
    local = trace_fiber(zy, t_c - 3.0 * t_ext, t_c + 3.0 * t_ext, f, L,
                        step_cap=fine_step, compute_lambda=False)
    brackets += _height_crossings(local, level)
    seeds = [_refine_crossing(zy, br, level, f, L).u.values for br in brackets]
    seeds += [
        u_c.values + 0.5 * ball_radius * rng.standard_normal(domain.num_nodes)
        for _ in range(20)
    ]
    out = newton_preimages(y, seeds, f, L, separation_rel=sep_rel)
    if out.count < 3:
        raise StageFailureError(
            "polish", f"only {out.count} solutions survived polishing",
            diagnostics={"row": row},
        )
    out.meta.update({"census_row": row, "from_cusp": True, "seed": seed})
    return out


def collapse_flags_from_samples(heights, lambdas, tol_h=1e-6, tol_lambda=1e-6):
    """Pure detector rule: both observables flat along the fiber window."""
    heights = np.asarray(heights, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    h_var = float(heights.max() - heights.min()) if heights.size else np.inf
    l_var = float(lambdas.max() - lambdas.min()) if lambdas.size else np.inf
    return {
        "h_variation": h_var,
        "lambda_variation": l_var,
        "flagged": bool(h_var <= tol_h and l_var <= tol_lambda),
        "tol_h": tol_h,
        "tol_lambda": tol_lambda,
    }


def detect_collapsing_fiber(u_nf, f, L=None, t_halfwidth=None,
                            tol_h=1e-6, tol_lambda=1e-6, precondition_tol=1e-6):
    """Trace the fiber through a degenerate point and test for constant height.

    The alternative branch of the dichotomy: a fiber sent to a single point.
    Requires the base point to actually zero both functionals.
    """
    L = L or operator_for(u_nf.domain)
    w0 = L.w0
    fv = functional_values(u_nf, f, L=L)
    if np.hypot(fv.lam, fv.delta) > precondition_tol:
        raise OutOfDomainError(
            f"not a degenerate critical point: |(lam, delta)| = "
            f"{np.hypot(fv.lam, fv.delta):.3e}"
        )
    _, psi1 = ground_mode(u_nf.domain)
    z, t0 = project_z(
        GridFunction(L.apply(u_nf.values) - f.value(u_nf.values), u_nf.domain), L
    )
    t_c = w0 * float(u_nf.values @ psi1.values)
    half = t_halfwidth if t_halfwidth is not None else max(0.5, 0.25 * abs(t_c))
    trace = trace_fiber(z, t_c - half, t_c + half, f, L, step_cap=half / 20.0)
    report = collapse_flags_from_samples(trace.heights, trace.lambdas,
                                         tol_h=tol_h, tol_lambda=tol_lambda)
    report.update({
        "window": [t_c - half, t_c + half],
        "n_points": len(trace.points),
    })
    return report
