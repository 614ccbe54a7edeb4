"""Matrix-valued domain types and the closed-form orthogonal Procrustes solver.

Conventions: embedding clouds are row-stacked (n rows of dimension d), maps
act on the right (``X @ Q``), and the optimal orthogonal map between matched
clouds comes from the SVD of the d x d cross-covariance ``X.T @ Y``.
"""

import numpy as np

from .errors import InvalidInputError, NumericalError

# Testable orthogonality bound for QᵀQ - I in Frobenius norm.
ORTHOGONALITY_TOL = 1e-8


def _freeze(arr):
    out = np.array(arr, dtype=np.float64, copy=True, order="C")
    out.setflags(write=False)
    return out


def _as_matrix(x):
    """Accept a cloud/map wrapper or a raw 2-D array-like."""
    if isinstance(x, PointCloud):
        return x.data
    if isinstance(x, GaussianCloud):
        return x.means
    if isinstance(x, OrthogonalMap):
        return x.matrix
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


class PointCloud:
    """Immutable n x d stack of real embedding vectors."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(f"point cloud must be 2-D, got ndim={arr.ndim}")
        n, d = arr.shape
        if n < 1 or d < 1:
            raise InvalidInputError(f"point cloud must be at least 1x1, got {n}x{d}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("point cloud contains non-finite entries")
        self.data = _freeze(arr)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]

    def row(self, i):
        """Bounds-checked row access (no negative indexing)."""
        if not 0 <= i < self.n:
            raise InvalidInputError(f"row index {i} out of range for n={self.n}")
        return self.data[i]

    def __repr__(self):
        return f"PointCloud(n={self.n}, d={self.d})"


class GaussianCloud:
    """Immutable set of diagonal Gaussian embeddings: means + per-dimension
    variances, both n x d. Every variance entry must be strictly positive."""

    __slots__ = ("means", "variances")

    def __init__(self, means, variances):
        m = np.asarray(means, dtype=np.float64)
        v = np.asarray(variances, dtype=np.float64)
        if m.ndim != 2 or v.ndim != 2:
            raise InvalidInputError("means and variances must be 2-D matrices")
        if m.shape != v.shape:
            raise InvalidInputError(
                f"means shape {m.shape} != variances shape {v.shape}"
            )
        if m.shape[0] < 1 or m.shape[1] < 1:
            raise InvalidInputError(f"cloud must be at least 1x1, got {m.shape}")
        if not np.all(np.isfinite(m)) or not np.all(np.isfinite(v)):
            raise InvalidInputError("gaussian cloud contains non-finite entries")
        if not np.all(v > 0.0):
            raise InvalidInputError("all variance entries must be strictly positive")
        self.means = _freeze(m)
        self.variances = _freeze(v)

    @property
    def n(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]

    def mean_cloud(self):
        return PointCloud(self.means)

    def __repr__(self):
        return f"GaussianCloud(n={self.n}, d={self.d})"


class OrthogonalMap:
    """Immutable d x d matrix Q with ||QᵀQ - I||_F <= ORTHOGONALITY_TOL."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        q = np.asarray(matrix, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise InvalidInputError(f"orthogonal map must be square, got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise InvalidInputError("orthogonal map contains non-finite entries")
        err = orthogonality_error(q)
        if err > ORTHOGONALITY_TOL:
            raise InvalidInputError(
                f"matrix is not orthogonal: ||QtQ - I||_F = {err:.3e}"
            )
        self.matrix = _freeze(q)

    @property
    def d(self):
        return self.matrix.shape[0]

    def transpose(self):
        return OrthogonalMap(self.matrix.T)

    def __repr__(self):
        return f"OrthogonalMap(d={self.d})"


def orthogonality_error(q):
    """||QᵀQ - I||_F for a square matrix Q."""
    q = np.asarray(q, dtype=np.float64)
    return float(np.linalg.norm(q.T @ q - np.eye(q.shape[0])))


def project_orthogonal(m):
    """Nearest orthogonal matrix: U @ Vᵀ for the SVD M = U D Vᵀ.

    Among all orthogonal Q this maximizes Tr(Qᵀ M), i.e. it is the
    Frobenius-norm projection of M onto the orthogonal group.
    """
    arr = _as_matrix(m)
    if arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"projection needs a square matrix, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("cannot project a matrix with non-finite entries")
    try:
        u, _, vt = np.linalg.svd(arr)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD did not converge while projecting a {arr.shape[0]}x{arr.shape[1]} "
            f"matrix: {exc}",
            shape=arr.shape,
            frobenius_norm=float(np.linalg.norm(arr)),
        ) from exc
    return OrthogonalMap(u @ vt)


def solve_procrustes(x, y):
    """Orthogonal map Q minimizing ||X Q - Y||²_F for row-matched clouds."""
    xm = _as_matrix(x)
    ym = _as_matrix(y)
    if xm.shape != ym.shape:
        raise InvalidInputError(
            f"procrustes inputs must share shape, got {xm.shape} and {ym.shape}"
        )
    return project_orthogonal(xm.T @ ym)


def procrustes_residual(x, q, y):
    """Exact objective value ||X Q - Y||²_F."""
    xm = _as_matrix(x)
    ym = _as_matrix(y)
    qm = _as_matrix(q)
    if xm.shape != ym.shape:
        raise InvalidInputError(
            f"residual inputs must share shape, got {xm.shape} and {ym.shape}"
        )
    if qm.shape != (xm.shape[1], xm.shape[1]):
        raise InvalidInputError(
            f"map shape {qm.shape} incompatible with cloud dimension {xm.shape[1]}"
        )
    diff = xm @ qm - ym
    return float(np.sum(diff * diff))
