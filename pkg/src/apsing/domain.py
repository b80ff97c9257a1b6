"""Uniform grids for intervals and rectangles and the discrete negative Laplacian.

The operator is the standard 3-point (1D) or 5-point (2D) stencil with one of
three boundary closures:

* Dirichlet: interior nodes only, zero extension outside;
* Neumann: cell-centered nodes with mirrored ghost values;
* periodic: cell-centered nodes with wrapped indices.

All three closures give an exactly symmetric matrix. Quadrature is the cell
measure (midpoint rule), so the weighted inner product is a constant multiple
of the Euclidean one and matches the stencil's order of accuracy.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DomainMismatchError, UnsupportedResolutionError

BOUNDARY_CONDITIONS = ("dirichlet", "neumann", "periodic")

#: refuse grids beyond this many nodes (memory cap for dense-ish solves)
MAX_NODES = 250_000


def _axis_nodes(a, b, n, bc):
    if bc == "dirichlet":
        h = (b - a) / (n + 1)
        return a + h * (1.0 + np.arange(n)), h
    h = (b - a) / n
    return a + h * (0.5 + np.arange(n)), h


@dataclass(frozen=True)
class Domain:
    """An interval or an axis-aligned rectangle with a uniform grid.

    ``n`` is the node count per axis. For Dirichlet conditions nodes are the
    interior points with spacing length/(n+1); otherwise nodes are cell
    centers with spacing length/n.
    """

    kind: str                      # "interval" | "rectangle"
    bounds: tuple                  # (a, b) or (ax, bx, ay, by)
    bc: str
    n: int

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.n < 8:
            raise ValueError("resolution must be at least 8 nodes per axis")
        if self.kind == "interval":
            a, b = self.bounds
            if not b > a:
                raise ValueError("interval requires b > a")
        else:
            ax, bx, ay, by = self.bounds
            if not (bx > ax and by > ay):
                raise ValueError("rectangle requires bx > ax and by > ay")
        if self.num_nodes > MAX_NODES:
            raise UnsupportedResolutionError(
                f"{self.num_nodes} nodes exceed the cap of {MAX_NODES}"
            )

    @property
    def dim(self):
        return 1 if self.kind == "interval" else 2

    @property
    def num_nodes(self):
        return self.n if self.kind == "interval" else self.n * self.n

    @property
    def spacings(self):
        if self.kind == "interval":
            a, b = self.bounds
            return (_axis_nodes(a, b, self.n, self.bc)[1],)
        ax, bx, ay, by = self.bounds
        return (
            _axis_nodes(ax, bx, self.n, self.bc)[1],
            _axis_nodes(ay, by, self.n, self.bc)[1],
        )

    @property
    def cell_measure(self):
        """Quadrature weight of a single node (uniform across the grid)."""
        return float(np.prod(self.spacings))

    def coords(self):
        """Node coordinates: shape (N,) in 1D, (N, 2) in 2D (row-major in y)."""
        if self.kind == "interval":
            a, b = self.bounds
            return _axis_nodes(a, b, self.n, self.bc)[0]
        ax, bx, ay, by = self.bounds
        xs = _axis_nodes(ax, bx, self.n, self.bc)[0]
        ys = _axis_nodes(ay, by, self.n, self.bc)[0]
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def to_dict(self):
        return {
            "kind": self.kind,
            "bounds": list(self.bounds),
            "bc": self.bc,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["bounds"]), d["bc"], int(d["n"]))


@dataclass(frozen=True)
class GridFunction:
    """Nodal values of a function on a :class:`Domain`."""

    values: np.ndarray
    domain: Domain

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.domain.num_nodes,):
            raise DomainMismatchError(
                f"expected {self.domain.num_nodes} values, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function contains non-finite entries")

    @classmethod
    def constant(cls, c, domain):
        return cls(np.full(domain.num_nodes, float(c)), domain)

    @classmethod
    def from_callable(cls, fn, domain):
        pts = domain.coords()
        if domain.dim == 1:
            return cls(np.asarray(fn(pts), dtype=float), domain)
        return cls(np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float), domain)


def _assemble_1d(n, h, bc):
    inv = 1.0 / h**2
    main = np.full(n, 2.0 * inv)
    off = np.full(n - 1, -inv)
    A = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc == "neumann":
        A[0, 0] = inv
        A[n - 1, n - 1] = inv
    elif bc == "periodic":
        A[0, n - 1] = -inv
        A[n - 1, 0] = -inv
    return A.tocsr()


@dataclass
class DiscreteLaplacian:
    """Symmetric realization of the negative Laplacian plus quadrature weights."""

    domain: Domain
    matrix: sp.csr_matrix
    weights: np.ndarray = field(repr=False)

    @property
    def w0(self):
        """Uniform per-node quadrature weight."""
        return self.domain.cell_measure

    def apply(self, values):
        """Matrix-free stencil application (hot path, numba-backed)."""
        d = self.domain
        if d.dim == 1:
            return kernels.laplacian_apply_1d(values, d.spacings[0], d.bc)
        hx, hy = d.spacings
        return kernels.laplacian_apply_2d(values, d.n, d.n, hx, hy, d.bc)

    def shifted(self, q):
        """Sparse matrix of v -> A v - q v for a potential vector q."""
        return (self.matrix - sp.diags(np.asarray(q, dtype=float))).tocsc()


def build_laplacian(domain):
    """Assemble the stencil matrix and quadrature weights for a domain."""
    n, bc = domain.n, domain.bc
    if domain.dim == 1:
        A = _assemble_1d(n, domain.spacings[0], bc)
    else:
        hx, hy = domain.spacings
        Ax = _assemble_1d(n, hx, bc)
        Ay = _assemble_1d(n, hy, bc)
        eye = sp.identity(n, format="csr")
        A = (sp.kron(eye, Ax) + sp.kron(Ay, eye)).tocsr()
    w = np.full(domain.num_nodes, domain.cell_measure)
    return DiscreteLaplacian(domain, A, w)


def inner_product(u, v):
    """Quadrature-weighted inner product of two grid functions."""
    if isinstance(u, GridFunction):
        if not isinstance(v, GridFunction) or u.domain != v.domain:
            raise DomainMismatchError("inner product requires a shared domain")
        return u.domain.cell_measure * float(u.values @ v.values)
    raise TypeError("inner_product expects GridFunction arguments")


def dot(w0, a, b):
    """Weighted inner product on raw arrays (internal fast path)."""
    return w0 * float(a @ b)


def norm(w0, a):
    return float(np.sqrt(w0) * np.linalg.norm(a))


def apply_F(u, f, L):
    """Evaluate the semilinear operator A u - f(u) nodewise."""
    if u.domain != L.domain:
        raise DomainMismatchError("u and operator live on different domains")
    return GridFunction(L.apply(u.values) - f.value(u.values), u.domain)


def apply_jacobian(u, f, L, v):
    """Evaluate the linearization A v - f'(u) v at the base point u."""
    if u.domain != L.domain or v.domain != L.domain:
        raise DomainMismatchError("arguments live on different domains")
    return GridFunction(L.apply(v.values) - f.d1(u.values) * v.values, u.domain)


def free_eigenpairs(L, count, tol=1e-10, gap_tol=1e-6):
    """Lowest eigenpairs of the free operator, weighted-orthonormal, psi_1 > 0.

    Raises :class:`DegenerateEigenvalueError` when the ground gap falls below
    ``gap_tol`` (the ground state must be simple for the vertical splitting).
    """
    from ._eigs import smallest_eigenpairs
    from .errors import DegenerateEigenvalueError

    vals, vecs, residuals = smallest_eigenpairs(L, None, max(count + 1, 2),
                                                tol=tol, loose_last=True)
    if vals[1] - vals[0] - residuals[1] < gap_tol:
        raise DegenerateEigenvalueError(
            f"ground gap {vals[1] - vals[0]:.3e} below {gap_tol:.1e}",
            gap=float(vals[1] - vals[0]),
        )
    scale = 1.0 / np.sqrt(L.w0)
    out = []
    for k in range(count):
        v = vecs[:, k] * scale
        if v.sum() < 0:
            v = -v
        out.append((float(vals[k]), GridFunction(v, L.domain)))
    return out
