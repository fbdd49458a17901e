"""Dense linear algebra and seeded randomness shared by the other modules.

Matrices are plain 2-d float64 numpy arrays (row-major); vectors are 1-d arrays.
"""

import numpy as np

from .errors import ContractError, NumericalError


def check_finite(a, name="array"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} contains non-finite entries")
    return a


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-d, got shape {a.shape}")
    return a


def matmul(a, b):
    """Matrix product with shape checking and a finiteness guarantee on the output."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"dimension mismatch: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul output")


# ---------------------------------------------------------------------------
# SVD


def _complete_orthonormal(q, ok):
    """Replace columns of `q` not flagged in `ok` by an orthonormal completion."""
    m, n = q.shape
    basis = [q[:, i] for i in range(n) if ok[i]]
    out = q.copy()
    e = 0
    for i in range(n):
        if ok[i]:
            continue
        while e < m:
            cand = np.zeros(m)
            cand[e] = 1.0
            e += 1
            for _ in range(2):  # re-orthogonalise once for stability
                for b in basis:
                    cand -= (b @ cand) * b
            nrm = np.linalg.norm(cand)
            if nrm > 1e-8:
                cand /= nrm
                basis.append(cand)
                out[:, i] = cand
                break
        else:
            raise NumericalError("could not complete orthonormal basis")
    return out


def svd_jacobi(a, max_sweeps=None, tol=1e-15):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns ``(u, s, vt)`` with ``s`` sorted descending. Raises
    :class:`NumericalError` if the off-diagonal mass does not vanish within
    ``max_sweeps`` sweeps (default ``100 * min(a.shape)``).
    """
    a = check_finite(as_matrix(a, "a"), "a")
    m, n = a.shape
    if m < n:
        u, s, vt = svd_jacobi(a.T, max_sweeps=max_sweeps, tol=tol)
        return vt.T, s, u.T
    if n == 0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, 0))
    if max_sweeps is None:
        max_sweeps = 100 * min(m, n)

    g = a.copy()
    v = np.eye(n)
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                gp = g[:, p]
                gq = g[:, q]
                alpha = gp @ gp
                beta = gq @ gq
                gamma = gp @ gq
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                g[:, [p, q]] = np.column_stack((c * gp - s * gq, s * gp + c * gq))
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    else:
        raise NumericalError(f"Jacobi SVD did not converge after {max_sweeps} sweeps")

    sv = np.linalg.norm(g, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    g = g[:, order]
    v = v[:, order]
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    ok = sv > 1e-13 * scale
    u = np.zeros_like(g)
    u[:, ok] = g[:, ok] / sv[ok]
    if not np.all(ok):
        u = _complete_orthonormal(u, ok)
        sv = np.where(ok, sv, 0.0)
    return u, sv, v.T


def svd_thin(a, method="lapack"):
    """Thin SVD ``a = u @ diag(s) @ vt`` with ``s`` descending and non-negative.

    ``method="lapack"`` calls numpy's divide-and-conquer driver;
    ``method="jacobi"`` uses :func:`svd_jacobi`.
    """
    a = check_finite(as_matrix(a, "a"), "a")
    if method == "jacobi":
        return svd_jacobi(a)
    if method != "lapack":
        raise ContractError(f"unknown svd method {method!r}")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return u, s, vt


# ---------------------------------------------------------------------------
# Randomness


def make_rng(seed, task_id=0):
    """Counter-based generator keyed on ``(seed, task_id)``.

    Philox streams with distinct keys are independent, so parallel tasks derive
    their own stream from the run seed instead of sharing one.
    """
    seed = int(seed)
    task_id = int(task_id)
    if not (0 <= seed < 2**64 and 0 <= task_id < 2**64):
        raise ContractError("seed and task_id must be 64-bit unsigned integers")
    return np.random.Generator(np.random.Philox(key=seed | (task_id << 64)))


def rng_gaussian(rng, rows, cols, mean=0.0, std=1.0):
    if std < 0:
        raise ContractError("std must be non-negative")
    if std == 0:
        return np.full((rows, cols), float(mean))
    return rng.normal(mean, std, size=(rows, cols))
