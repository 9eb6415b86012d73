"""Small dense symmetric linear algebra for Gram-matrix bookkeeping.

Every function accepts arrays with arbitrary leading batch axes, so the same
code path serves a single agent, a group of agents, or a stack of independent
runs. Matrices are the trailing two axes, vectors the trailing axis.
"""

import numpy as np
import scipy.linalg

from fedban.errors import DimensionMismatch, NegativeQuadraticForm, NotPositiveDefinite

# Quadratic forms below this are treated as rounding noise rather than a
# non-PSD input.
QUAD_FORM_TOL = 1e-12

# min eigenvalue >= -PSD_REL_TOL * trace counts as PSD.
PSD_REL_TOL = 1e-10


def _check_square(m):
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {m.shape}")
    return m


def cholesky(m):
    """Lower Cholesky factor of ``m``; raises NotPositiveDefinite on failure."""
    m = _check_square(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def logdet(m):
    """Natural log-determinant of a positive definite matrix (or stack)."""
    chol = cholesky(m)
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    return 2.0 * np.sum(np.log(diag), axis=-1)


def solve_psd(v, u):
    """Solve ``v @ theta = u`` through the Cholesky factor of ``v``."""
    v = _check_square(v)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionMismatch(f"matrix {v.shape} vs vector {u.shape}")
    chol = cholesky(v)
    if v.ndim == 2 and u.ndim == 1:
        return scipy.linalg.cho_solve((chol, True), u)
    chol, u = np.broadcast_arrays(chol, u[..., None])
    y = np.linalg.solve(chol, u)
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]


def inverse_factor(m):
    """Return ``W = L^{-1}`` for ``m = L L^T``, so that ``m^{-1} = W^T W``.

    ``||x||_{m^{-1}} = ||W x||``, which is how the UCB bonus is evaluated for
    many actions at once.
    """
    chol = cholesky(m)
    return np.linalg.inv(chol), chol


def ellipsoid_norm(x, m):
    """sqrt(x^T m x) for PSD ``m``."""
    m = _check_square(m)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.shape[-1]:
        raise DimensionMismatch(f"matrix {m.shape} vs vector {x.shape}")
    quad = np.einsum("...i,...ij,...j->...", x, m, x)
    if np.any(quad < -QUAD_FORM_TOL):
        raise NegativeQuadraticForm(f"x^T m x = {np.min(quad)!r} < 0")
    return np.sqrt(np.maximum(quad, 0.0))


def rank_one_update(g, x):
    """g + x x^T."""
    g = _check_square(g)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.shape[-1]:
        raise DimensionMismatch(f"matrix {g.shape} vs vector {x.shape}")
    return g + x[..., :, None] * x[..., None, :]


def symmetrize(n):
    """(n + n^T) / sqrt(2).

    For iid N(0, s^2) input the off-diagonal entries of the result have
    variance s^2 and the diagonal entries 2 s^2.
    """
    n = _check_square(n)
    return (n + np.swapaxes(n, -1, -2)) / np.sqrt(2.0)


def min_eigenvalue(m):
    m = _check_square(m)
    return np.linalg.eigvalsh(m)[..., 0]


def is_psd(m, rel_tol=PSD_REL_TOL):
    m = _check_square(m)
    trace = np.trace(m, axis1=-2, axis2=-1)
    return min_eigenvalue(m) >= -rel_tol * np.abs(trace)
