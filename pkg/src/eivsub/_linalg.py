"""Small dense linear-algebra helpers shared by the estimators."""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import SingularSystemError

RCOND_MIN = 1e-12
# Row-block size below which a Gram product is formed in one BLAS call.
_BLOCK = 4096


def gram(w, weights=None):
    """Return ``sum_i weights_i * w_i w_i^T`` by pairwise block summation.

    Blocks of ``_BLOCK`` rows go through BLAS; block results are combined as a
    balanced binary tree, keeping rounding growth at O(log n) for n ~ 1e6.
    """
    n = w.shape[0]
    if n <= _BLOCK:
        if weights is None:
            return w.T @ w
        return (w * weights[:, None]).T @ w
    h = n // 2
    if weights is None:
        return gram(w[:h]) + gram(w[h:])
    return gram(w[:h], weights[:h]) + gram(w[h:], weights[h:])


def cross(w, y, weights=None):
    """Return ``sum_i weights_i * w_i y_i`` by the same pairwise scheme."""
    n = w.shape[0]
    if n <= _BLOCK:
        if weights is None:
            return w.T @ y
        return w.T @ (weights * y)
    h = n // 2
    if weights is None:
        return cross(w[:h], y[:h]) + cross(w[h:], y[h:])
    return cross(w[:h], y[:h], weights[:h]) + cross(w[h:], y[h:], weights[h:])


class Factorization:
    """LU factorization of a square matrix with a 1-norm rcond estimate."""

    def __init__(self, a, name, *, ridge=False, hint=None):
        a = np.array(a, dtype=np.float64)
        self.ridged = False
        self.lu_piv, self.rcond = self._factor(a)
        if not self.rcond >= RCOND_MIN:
            if not ridge:
                raise SingularSystemError(name, self.rcond, hint)
            p = a.shape[0]
            eps = 1e-8 * max(np.trace(a) / p, np.finfo(float).tiny)
            self.lu_piv, self.rcond = self._factor(a + eps * np.eye(p))
            self.ridged = True
            if not self.rcond >= RCOND_MIN:
                raise SingularSystemError(name, self.rcond, hint)

    @staticmethod
    def _factor(a):
        if not np.all(np.isfinite(a)):
            return None, 0.0
        anorm = np.abs(a).sum(axis=0).max()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(a, check_finite=False)
        if anorm == 0.0:
            return (lu, piv), 0.0
        rcond, info = lapack.dgecon(lu, anorm, norm="1")
        return (lu, piv), float(rcond) if info == 0 else 0.0

    def solve(self, b):
        return sla.lu_solve(self.lu_piv, b, check_finite=False)


def solve_checked(a, b, name, *, ridge=False, hint=None):
    """Solve ``a x = b``; return ``(x, rcond)`` or raise SingularSystemError."""
    fac = Factorization(a, name, ridge=ridge, hint=hint)
    return fac.solve(b), fac.rcond


def symmetrize(a):
    return 0.5 * (a + a.T)


def clip_psd(a):
    """Project a symmetric matrix onto the PSD cone by eigenvalue clipping.

    Returns the projected matrix and whether any eigenvalue was clipped.
    """
    a = symmetrize(a)
    vals, vecs = np.linalg.eigh(a)
    if vals.min() >= 0.0:
        return a, False
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * vals) @ vecs.T), True
