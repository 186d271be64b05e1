"""
Dense numerical kernels: l1-ball projection and spectral norms.

Everything here is a pure function on float64 numpy arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, InvalidArgument

EIGH_MAX_DIM = 4096


@dataclass(frozen=True)
class L1Ball:
    radius: float

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InvalidArgument(f"l1-ball radius must be >= 0, got {self.radius}")

    def project(self, v):
        return project_l1_ball(v, self.radius)

    def contains(self, v, rtol=1e-12):
        return float(np.abs(v).sum()) <= self.radius * (1 + rtol)


def _check_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{name} contains non-finite entries")


def project_l1_rows(V, r):
    """
    Project every row of `V` onto the l1 ball of radius `r`.

    Uses the sort-and-threshold method: for a row v with ||v||_1 > r the
    projection is sign(v) * max(|v| - tau, 0), where tau is read off the
    sorted magnitudes. Rows already inside the ball are returned unchanged.

    Parameters
    ----------
    V : ndarray, shape (m, d)
    r : float
        Radius, r >= 0.

    Returns
    -------
    ndarray, shape (m, d)
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise InvalidArgument(f"expected a 2-d array, got shape {V.shape}")
    r = float(r)
    if not np.isfinite(r) or r < 0:
        raise InvalidArgument(f"radius must be finite and >= 0, got {r}")
    _check_finite(V, "input")

    out = V.copy()
    absV = np.abs(V)
    norms = absV.sum(axis=1)
    outside = norms > r
    if not outside.any():
        return out
    if r == 0.0:
        out[outside] = 0.0
        return out

    A = absV[outside]
    d = A.shape[1]
    U = -np.sort(-A, axis=1)
    css = np.cumsum(U, axis=1)
    k = np.arange(1, d + 1, dtype=np.float64)
    # number of strictly positive entries after thresholding
    active = U - (css - r) / k > 0
    # the largest entry is always active; rounding can hide that for tiny r
    active[:, 0] = True
    n_active = d - np.argmax(active[:, ::-1], axis=1)
    rows = np.arange(A.shape[0])
    tau = (css[rows, n_active - 1] - r) / n_active
    P = np.maximum(A - tau[:, None], 0.0)

    # cumsum rounding can leave ||P||_1 a few ulps above r
    excess = P.sum(axis=1) - r
    for _ in range(4):
        bad = excess > 0
        if not bad.any():
            break
        nnz = np.maximum((P[bad] > 0).sum(axis=1), 1)
        tau[bad] += np.maximum(excess[bad] / nnz, np.spacing(tau[bad]))
        P[bad] = np.maximum(A[bad] - tau[bad][:, None], 0.0)
        excess = P.sum(axis=1) - r

    out[outside] = np.sign(V[outside]) * P
    return out


def project_l1_ball(v, r):
    """Euclidean projection of a vector onto {x : ||x||_1 <= r}."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidArgument(f"expected a vector, got shape {v.shape}")
    return project_l1_rows(v[None, :], r)[0]


def l1_threshold(v, r):
    """Soft-threshold level tau with sum(max(|v|-tau, 0)) = r, or 0 if inside the ball."""
    a = np.abs(np.asarray(v, dtype=np.float64))
    if a.sum() <= r:
        return 0.0
    if r <= 0:
        return float(a.max())
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, a.size + 1)
    active = u - (css - r) / k > 0
    active[0] = True
    n_active = k[active][-1]
    return float((css[n_active - 1] - r) / n_active)


def _start_vector(n):
    # all-ones plus index-dependent offsets; the pure ones vector lies in the
    # null space of W - J and would stall power iteration
    i = np.arange(n, dtype=np.float64)
    return 1.0 + 0.5 * np.sin(1.0 + i * 0.6180339887498949)


def power_iteration_norm(M, tol=1e-9, max_iter=None):
    """
    Largest singular value of `M` via power iteration on M^T M.

    Stops once the eigen-residual of M^T M is below tol times the estimate,
    or once the remaining error of the Rayleigh quotient, extrapolated from
    the geometric decay of its increments, is below tol times the estimate.
    The second rule handles nearly equal top singular values, where the
    quotient converges long before the iterate does.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[1]
    if max_iter is None:
        max_iter = max(10 * n, 1000)
    v = _start_vector(n)
    v /= np.linalg.norm(v)
    lam_prev, step_prev = None, None
    lam, resid = 0.0, np.inf
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        resid = float(np.linalg.norm(w - lam * v))
        if resid <= tol * max(lam, 1e-300):
            return float(np.sqrt(max(lam, 0.0)))
        if lam_prev is not None:
            # the Rayleigh quotient of a PSD power iteration is nondecreasing
            step = max(lam - lam_prev, 0.0)
            if step_prev is not None and step_prev > 0:
                q = step / step_prev
                if q < 1 and step * q / (1 - q) <= 0.1 * tol * lam:
                    return float(np.sqrt(lam))
            step_prev = step
        lam_prev = lam
        v = w / nw
    raise ConvergenceFailure(
        f"power iteration did not converge in {max_iter} iterations",
        estimate=float(np.sqrt(max(lam, 0.0))),
        residual=resid,
    )


def spectral_norm(M, tol=1e-9, method="auto"):
    """
    Operator 2-norm of a dense matrix.

    method : {"auto", "eigh", "gram", "power", "svd"}
        "auto" uses a symmetric eigendecomposition of M when M is symmetric,
        of the Gram matrix M^T M when it is not, and power iteration once
        the relevant dimension exceeds EIGH_MAX_DIM.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise InvalidArgument(f"expected a matrix, got shape {M.shape}")
    if not (0 < tol <= 1e-3):
        raise InvalidArgument(f"tol must lie in (0, 1e-3], got {tol}")
    _check_finite(M, "matrix")
    if M.size == 0 or not M.any():
        return 0.0

    if method == "auto":
        square = M.shape[0] == M.shape[1]
        if square and M.shape[0] <= EIGH_MAX_DIM and np.array_equal(M, M.T):
            method = "eigh"
        elif min(M.shape) <= EIGH_MAX_DIM:
            method = "gram"
        else:
            method = "power"

    if method == "eigh":
        if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-14):
            raise InvalidArgument("eigh path requires a symmetric matrix")
        return float(np.max(np.abs(np.linalg.eigvalsh(M))))
    if method == "gram":
        G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
        return float(np.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))
    if method == "svd":
        return float(np.linalg.norm(M, 2))
    if method == "power":
        return power_iteration_norm(M, tol=tol)
    raise InvalidArgument(f"unknown method {method!r}")
