"""Small dense real linear algebra.

Vectors and matrices are plain float64 numpy arrays.  The direct solver is a
hand-written LU factorisation with partial pivoting working on Python floats,
which for the tiny systems met here (d = 3) is both faster than dispatching
to LAPACK and fully deterministic.
"""

import functools
import math

import numpy as np

from .errors import SingularMatrix, ValidationError

PIVOT_EPS = 1e-14
TOL_SOLVE = 1e-10


def as_vector(a, name="vector"):
    v = np.asarray(a, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-d array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries")
    return v


def as_matrix(A, dim=None, name="matrix"):
    M = np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {M.shape}")
    if dim is not None and M.shape[0] != dim:
        raise ValidationError(f"{name} must be {dim}x{dim}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    return M


def _check_same_length(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")


def dot(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_same_length(a, b)
    return float(a @ b)


def norm(a):
    if type(a) is not np.ndarray:
        a = np.asarray(a, dtype=float)
    return math.sqrt(float(a @ a))


@functools.lru_cache(maxsize=None)
def _identity(d):
    eye = np.eye(d)
    eye.flags.writeable = False
    return eye


def identity(d):
    """Read-only cached ``d x d`` identity."""
    return _identity(int(d))


def outer(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_same_length(a, b)
    return np.outer(a, b)


def lu_factor(A, pivot_eps=PIVOT_EPS):
    """LU-factorise ``A`` in place on a list-of-lists copy.

    Returns ``(lu, perm)`` where ``lu`` packs the unit-lower and upper factors
    and ``perm[i]`` is the original row now sitting at position ``i``.

    Raises
    ------
    SingularMatrix
        If a pivot falls below ``pivot_eps * max|A|``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    lu = A.tolist()
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    threshold = pivot_eps * scale
    perm = list(range(n))
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(lu[r][col]))
        pval = lu[piv][col]
        if scale == 0.0 or abs(pval) <= threshold:
            raise SingularMatrix(
                f"pivot {abs(pval):.3e} in column {col} below {threshold:.3e}"
            )
        if piv != col:
            lu[col], lu[piv] = lu[piv], lu[col]
            perm[col], perm[piv] = perm[piv], perm[col]
        row_c = lu[col]
        for r in range(col + 1, n):
            row_r = lu[r]
            f = row_r[col] / pval
            row_r[col] = f
            if f != 0.0:
                for c in range(col + 1, n):
                    row_r[c] -= f * row_c[c]
    return lu, perm


def lu_solve(lu, perm, b):
    n = len(lu)
    y = [b[p] for p in perm]
    for i in range(n):
        row = lu[i]
        s = y[i]
        for j in range(i):
            s -= row[j] * y[j]
        y[i] = s
    for i in range(n - 1, -1, -1):
        row = lu[i]
        s = y[i]
        for j in range(i + 1, n):
            s -= row[j] * y[j]
        y[i] = s / row[i]
    return y


def solve(A, b, pivot_eps=PIVOT_EPS, tol=TOL_SOLVE, check=True):
    """Solve ``A x = b`` by dense LU with partial pivoting.

    With ``check`` set the relative residual
    ``|Ax - b| / (|A| |x| + |b|)`` is verified against ``tol`` and a
    :class:`SingularMatrix` is raised if it is exceeded.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {A.shape}")
    if b.shape != (A.shape[0],):
        raise ValidationError(f"dimension mismatch: {A.shape} vs {b.shape}")
    rows = A.tolist()
    bl = b.tolist()
    lu, perm = lu_factor(A, pivot_eps)
    xl = lu_solve(lu, perm, bl)
    if check:
        res2 = 0.0
        a2 = 0.0
        for row, bi in zip(rows, bl):
            s = -bi
            for aij, xj in zip(row, xl):
                s += aij * xj
                a2 += aij * aij
            res2 += s * s
        # Frobenius norm bounds the spectral norm and avoids an SVD per call
        xn = math.sqrt(sum(v * v for v in xl))
        bn = math.sqrt(sum(v * v for v in bl))
        if math.sqrt(res2) > tol * (math.sqrt(a2) * xn + bn):
            raise SingularMatrix(
                f"relative residual {math.sqrt(res2):.3e} exceeds tolerance"
            )
    return np.array(xl)
