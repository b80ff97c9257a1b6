"""Eigenvalue functionals of the linearized operator and their gradients.

For a potential q, the operator v -> A v - q v has a simple lowest eigenvalue
with a positive eigenfunction. This module computes the k-th eigenpair
(lam_k, phi_k), the first-order functional delta_k (derivative of lam_k along
phi_k), the auxiliary orthogonal solve w, the second-order functional tau_k,
and the pair map (lam_k, delta_k) used to locate folds and their degeneracies.

The gradient formulas are exact at the discrete level:

    grad_lam(u)   = -f''(u) phi^2
    grad_delta(u) = -f'''(u) phi^3 - 3 w f''(u) phi
    w             = restriction-solve of (A - f'(u) - lam)^-1 on phi-orthogonals
                    applied to the projection of f''(u) phi^2

so finite-difference checks converge at second order down to solver noise.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._cache import free_modes, operator_for
from ._eigs import smallest_eigenpairs
from .domain import GridFunction
from .errors import DegenerateEigenvalueError, NoConvergenceError

#: an eigenvalue is treated as simple when its gap exceeds this fraction of
#: the free ground gap
SIMPLICITY_FRACTION = 1e-6

EIG_TOL = 1e-10
W_SOLVE_TOL = 1e-9


@dataclass(frozen=True)
class EigenPair:
    """The k-th eigenpair of A - diag(q), weighted-normalized."""

    k: int
    lam: float
    phi: GridFunction
    residual: float
    gap: float


@dataclass(frozen=True)
class FunctionalValues:
    """Bundle of eigenvalue functionals evaluated at one base point."""

    lam: float
    delta: float
    grad_lambda: GridFunction
    tau: Optional[float] = None
    grad_delta: Optional[GridFunction] = None
    w: Optional[GridFunction] = None


def _as_potential(q):
    if isinstance(q, GridFunction):
        return q.values, q.domain
    raise TypeError("expected a GridFunction potential")


def eigenpair(q, k=1, L=None, tol=EIG_TOL):
    """k-th eigenpair of v -> A v - q v with simplicity guard.

    The eigenfunction is normalized in the weighted norm; for k = 1 its sign
    is fixed positive, for k > 1 it is aligned with the k-th free mode.
    """
    qv, domain = _as_potential(q)
    L = L or operator_for(domain)
    return eigenpair_potential(L, qv, k=k, tol=tol)


def eigenpair_potential(L, qv, k=1, tol=EIG_TOL):
    if k < 1:
        raise ValueError("mode index starts at 1")
    count = k + 1
    # the topmost mode only estimates the gap; full precision is not needed
    # there (and is unreachable inside near-degenerate clusters)
    vals, vecs, residuals = smallest_eigenpairs(L, qv, count, tol=tol,
                                                loose_last=True)
    lam = float(vals[k - 1])
    # the neighbor value carries its residual as a certified error bar
    gap_up = float(vals[k] - vals[k - 1] - residuals[k])
    gap_down = float(vals[k - 1] - vals[k - 2]) if k >= 2 else np.inf
    gap = min(gap_up, gap_down)

    free = free_modes(L.domain, 2)
    threshold = SIMPLICITY_FRACTION * (free[1][0] - free[0][0])
    if gap < threshold:
        raise DegenerateEigenvalueError(
            f"eigenvalue {k} gap {gap:.3e} below simplicity threshold "
            f"{threshold:.3e}",
            gap=gap,
        )

    v = vecs[:, k - 1] / np.sqrt(L.w0)
    if k == 1:
        if v.sum() < 0:
            v = -v
    else:
        ref = free_modes(L.domain, k)[k - 1][1].values
        if float(v @ ref) < 0:
            v = -v
    return EigenPair(k=k, lam=lam, phi=GridFunction(v, L.domain),
                     residual=float(residuals[k - 1]), gap=gap)


def lambda_phi(u, f, k=1, L=None, tol=EIG_TOL):
    """Eigenpair of the linearization at u (potential f'(u))."""
    L = L or operator_for(u.domain)
    return eigenpair_potential(L, f.d1(u.values), k=k, tol=tol)


def grad_lambda(u, f, k=1, pair=None, L=None):
    """Nodewise gradient of lam_k at u: -f''(u) phi_k^2."""
    L = L or operator_for(u.domain)
    pair = pair or lambda_phi(u, f, k=k, L=L)
    return GridFunction(-f.d2(u.values) * pair.phi.values**2, u.domain)


def delta(u, f, k=1, pair=None, L=None):
    """Derivative of lam_k along phi_k: the weighted integral -f''(u) phi^3."""
    L = L or operator_for(u.domain)
    pair = pair or lambda_phi(u, f, k=k, L=L)
    return delta_potential(L, f.d2(u.values), pair)


def delta_potential(L, q2, pair):
    return -L.w0 * float(np.sum(q2 * pair.phi.values**3))


def bordered_solve(T, lam, border_unit, rhs, rhs_border=0.0):
    """Solve the symmetric bordered system [[T - lam I, c], [c^T, 0]].

    ``border_unit`` must be Euclidean-normalized; the solution component is
    then exactly orthogonal to it. Returns (solution, multiplier).
    """
    n = T.shape[0]
    B = sp.bmat(
        [[T - lam * sp.identity(n, format="csc"), border_unit[:, None]],
         [border_unit[None, :], None]],
        format="csc",
    )
    try:
        sol = splu(B).solve(np.concatenate([rhs, [rhs_border]]))
    except RuntimeError as exc:
        raise NoConvergenceError(f"bordered factorization failed: {exc}") from exc
    return sol[:n], float(sol[n])


def solve_w(u, f, k=1, pair=None, L=None, tol=W_SOLVE_TOL):
    """Orthogonal component of the eigenvector derivative along phi_k.

    Solves (A - f'(u) - lam)_W w = proj_W(f''(u) phi^2) on the orthogonal
    complement W of phi via one bordered factorization, and verifies the
    orthogonality and residual contracts.
    """
    L = L or operator_for(u.domain)
    pair = pair or lambda_phi(u, f, k=k, L=L)
    return solve_w_potential(L, f.d1(u.values), f.d2(u.values), pair, tol=tol)


def solve_w_potential(L, q1, q2, pair, tol=W_SOLVE_TOL):
    w0 = L.w0
    phi = pair.phi.values
    c = phi * np.sqrt(w0)                      # Euclidean unit border
    rhs = q2 * phi**2
    rhs = rhs - (w0 * float(rhs @ phi)) * phi  # proj_W in the weighted product
    T = L.shifted(q1)
    wv, _ = bordered_solve(T, pair.lam, c, rhs)

    ortho = abs(w0 * float(wv @ phi))
    res = np.sqrt(w0) * float(
        np.linalg.norm(T @ wv - pair.lam * wv - rhs)
    )
    if ortho > 1e-10 or res > tol:
        raise NoConvergenceError(
            f"restricted solve failed: orthogonality {ortho:.2e}, residual {res:.2e}",
            residual=res,
        )
    return GridFunction(wv, L.domain)


def grad_delta(u, f, k=1, pair=None, w=None, L=None):
    """Nodewise gradient of delta_k: -f'''(u) phi^3 - 3 w f''(u) phi."""
    L = L or operator_for(u.domain)
    pair = pair or lambda_phi(u, f, k=k, L=L)
    w = w or solve_w(u, f, k=k, pair=pair, L=L)
    g = -f.d3(u.values) * pair.phi.values**3 \
        - 3.0 * w.values * f.d2(u.values) * pair.phi.values
    return GridFunction(g, u.domain)


def tau(u, f, k=1, pair=None, L=None):
    """Derivative of delta_k along phi_k (second-order transversality number)."""
    L = L or operator_for(u.domain)
    pair = pair or lambda_phi(u, f, k=k, L=L)
    gd = grad_delta(u, f, k=k, pair=pair, L=L)
    return L.w0 * float(gd.values @ pair.phi.values)


def Lambda_map(u, f, k=1, L=None):
    """The pair (lam_k(u), delta_k(u)) whose common zeros are nonfolds."""
    L = L or operator_for(u.domain)
    pair = lambda_phi(u, f, k=k, L=L)
    return pair.lam, delta(u, f, k=k, pair=pair, L=L)


def functional_values(u, f, k=1, need_tau=False, L=None):
    """Evaluate lam, delta, gradients (and optionally tau, w) in one pass."""
    L = L or operator_for(u.domain)
    return functional_values_potential(
        L, f.d1(u.values), f.d2(u.values),
        q3=f.d3(u.values) if need_tau else None,
        k=k, need_tau=need_tau,
    )


def functional_values_potential(L, q1, q2, q3=None, k=1, need_tau=False):
    """Functional bundle from raw potential vectors (f'(u), f''(u), f'''(u)).

    This entry point lets genuinely two-valued base points (with cell-averaged
    composition at the sector interface) reuse the same formulas.
    """
    domain = L.domain
    pair = eigenpair_potential(L, q1, k=k)
    phi = pair.phi.values
    glv = -np.asarray(q2, dtype=float) * phi**2
    dl = L.w0 * float(glv @ phi)
    gl = GridFunction(glv, domain)
    if not need_tau:
        return FunctionalValues(lam=pair.lam, delta=dl, grad_lambda=gl)
    if q3 is None:
        raise ValueError("q3 required when tau is requested")
    w = solve_w_potential(L, q1, q2, pair)
    gdv = -np.asarray(q3, dtype=float) * phi**3 - 3.0 * w.values * q2 * phi
    tv = L.w0 * float(gdv @ phi)
    return FunctionalValues(lam=pair.lam, delta=dl, grad_lambda=gl,
                            tau=tv, grad_delta=GridFunction(gdv, domain), w=w)


def gradient_probe_matrix(fv, probes, w0):
    """2x2 matrix of the two gradients paired against two probe directions."""
    if fv.grad_delta is None:
        raise ValueError("functional bundle lacks grad_delta")
    M = np.empty((2, 2))
    for j, v in enumerate(probes):
        vv = v.values if isinstance(v, GridFunction) else np.asarray(v, float)
        nn = np.sqrt(w0) * np.linalg.norm(vv)
        if nn == 0:
            return np.zeros((2, 2))
        vv = vv / nn
        M[0, j] = w0 * float(fv.grad_lambda.values @ vv)
        M[1, j] = w0 * float(fv.grad_delta.values @ vv)
    return M


def independence_of(fv, probes, w0):
    """Smallest singular value of the probe matrix (gradient independence)."""
    return float(np.linalg.svd(gradient_probe_matrix(fv, probes, w0),
                               compute_uv=False)[-1])
