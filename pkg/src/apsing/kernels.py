"""Hot stencil and convolution kernels.

Two interchangeable backends: numba-jitted loops (default) and pure numpy.
Set the environment variable ``AP_NO_NUMBA=1`` before import to force the
numpy path; ``apsing.kernels.BACKEND`` records which one is active.
"""

import os

import numpy as np

_want_numba = os.environ.get("AP_NO_NUMBA", "0") not in ("1", "true", "yes")

if _want_numba:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        HAS_NUMBA = False
else:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# loop implementations (jitted when numba is active)

def _lap1d_dirichlet(u, out, inv_h2):
    n = u.shape[0]
    for i in range(n):
        left = u[i - 1] if i > 0 else 0.0
        right = u[i + 1] if i < n - 1 else 0.0
        out[i] = (2.0 * u[i] - left - right) * inv_h2


def _lap1d_neumann(u, out, inv_h2):
    n = u.shape[0]
    for i in range(n):
        left = u[i - 1] if i > 0 else u[0]
        right = u[i + 1] if i < n - 1 else u[n - 1]
        out[i] = (2.0 * u[i] - left - right) * inv_h2


def _lap1d_periodic(u, out, inv_h2):
    n = u.shape[0]
    for i in range(n):
        out[i] = (2.0 * u[i] - u[i - 1] - u[(i + 1) % n]) * inv_h2


def _lap2d(u, out, nx, ny, inv_hx2, inv_hy2, bc):
    # bc: 0 Dirichlet (zero-extend), 1 Neumann (mirror), 2 periodic (wrap)
    for j in range(ny):
        for i in range(nx):
            c = u[j, i]
            if i > 0:
                xl = u[j, i - 1]
            else:
                xl = 0.0 if bc == 0 else (c if bc == 1 else u[j, nx - 1])
            if i < nx - 1:
                xr = u[j, i + 1]
            else:
                xr = 0.0 if bc == 0 else (c if bc == 1 else u[j, 0])
            if j > 0:
                yl = u[j - 1, i]
            else:
                yl = 0.0 if bc == 0 else (c if bc == 1 else u[ny - 1, i])
            if j < ny - 1:
                yr = u[j + 1, i]
            else:
                yr = 0.0 if bc == 0 else (c if bc == 1 else u[0, i])
            out[j, i] = (2.0 * c - xl - xr) * inv_hx2 + (2.0 * c - yl - yr) * inv_hy2


def _convolve1d(u, kern, out, bc):
    # symmetric kernel of odd length; bc codes as above
    n = u.shape[0]
    m = kern.shape[0] // 2
    for i in range(n):
        acc = 0.0
        for k in range(-m, m + 1):
            j = i + k
            if 0 <= j < n:
                v = u[j]
            elif bc == 0:
                v = 0.0
            elif bc == 1:
                v = u[-j - 1] if j < 0 else u[2 * n - 1 - j]
            else:
                v = u[j % n]
            acc += kern[k + m] * v
        out[i] = acc


if HAS_NUMBA:
    _lap1d_dirichlet = njit(cache=True)(_lap1d_dirichlet)
    _lap1d_neumann = njit(cache=True)(_lap1d_neumann)
    _lap1d_periodic = njit(cache=True)(_lap1d_periodic)
    _lap2d = njit(cache=True)(_lap2d)
    _convolve1d = njit(cache=True)(_convolve1d)
else:
    # vectorized fallbacks, same signatures
    def _lap1d_dirichlet(u, out, inv_h2):  # noqa: F811
        out[:] = 2.0 * u
        out[:-1] -= u[1:]
        out[1:] -= u[:-1]
        out *= inv_h2

    def _lap1d_neumann(u, out, inv_h2):  # noqa: F811
        out[:] = 2.0 * u
        out[:-1] -= u[1:]
        out[1:] -= u[:-1]
        out[0] -= u[0]
        out[-1] -= u[-1]
        out *= inv_h2

    def _lap1d_periodic(u, out, inv_h2):  # noqa: F811
        out[:] = (2.0 * u - np.roll(u, 1) - np.roll(u, -1)) * inv_h2

    def _pad2d(u, bc):
        mode = {0: "constant", 1: "edge", 2: "wrap"}[bc]
        return np.pad(u, 1, mode=mode)

    def _lap2d(u, out, nx, ny, inv_hx2, inv_hy2, bc):  # noqa: F811
        p = _pad2d(u, bc)
        out[:, :] = (2.0 * u - p[1:-1, :-2] - p[1:-1, 2:]) * inv_hx2
        out += (2.0 * u - p[:-2, 1:-1] - p[2:, 1:-1]) * inv_hy2

    def _convolve1d(u, kern, out, bc):  # noqa: F811
        n, m = u.shape[0], kern.shape[0] // 2
        if bc == 0:
            p = np.pad(u, m, mode="constant")
        elif bc == 1:
            p = np.pad(u, m, mode="symmetric")
        else:
            p = np.pad(u, m, mode="wrap")
        out[:] = np.convolve(p, kern[::-1], mode="valid")[:n]


_BC_CODE = {"dirichlet": 0, "neumann": 1, "periodic": 2}


def laplacian_apply_1d(u, h, bc):
    """Apply the 3-point negative Laplacian with the given closure."""
    out = np.empty_like(u)
    code = _BC_CODE[bc]
    if code == 0:
        _lap1d_dirichlet(u, out, 1.0 / h**2)
    elif code == 1:
        _lap1d_neumann(u, out, 1.0 / h**2)
    else:
        _lap1d_periodic(u, out, 1.0 / h**2)
    return out


def laplacian_apply_2d(u_flat, nx, ny, hx, hy, bc):
    """Apply the 5-point negative Laplacian; input flattened row-major (y, x)."""
    u = u_flat.reshape(ny, nx)
    out = np.empty_like(u)
    _lap2d(u, out, nx, ny, 1.0 / hx**2, 1.0 / hy**2, _BC_CODE[bc])
    return out.ravel()


def gaussian_kernel(sigma, h):
    """Discrete Gaussian of width sigma on spacing h, mass exactly one."""
    m = max(1, int(np.ceil(4.0 * sigma / h)))
    t = np.arange(-m, m + 1) * h
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def smooth_1d(u, kern, bc):
    out = np.empty_like(u)
    _convolve1d(u, kern, out, _BC_CODE[bc])
    return out


def smooth_2d(u_flat, nx, ny, kern_x, kern_y, bc):
    u = u_flat.reshape(ny, nx)
    code = _BC_CODE[bc]
    tmp = np.empty_like(u)
    for j in range(ny):
        _convolve1d(u[j], kern_x, tmp[j], code)
    out = np.empty_like(u)
    col = np.empty(ny)
    for i in range(nx):
        _convolve1d(np.ascontiguousarray(tmp[:, i]), kern_y, col, code)
        out[:, i] = col
    return out.ravel()
