"""Hierarchical proximal operators for the skip/first-layer weight pair.

For each input feature the operators solve

    min_{b, W}  1/2 ||v - b||^2 + 1/2 ||u - W||^2 + lam ||b||_2 + lam_bar ||W||_1
    s.t.        ||W||_inf <= m ||b||_2

exactly, where ``v`` holds the feature's skip weights (one per output) and
``u`` its first-hidden-layer weights. The problem is non-convex but its global
minimiser has a closed form found by one sort of ``|u|`` and a linear scan.
All features are handled at once with array operations.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ProxInvariantError


@dataclass(frozen=True)
class ProxParams:
    """Penalty scales for one proximal step.

    ``lam`` is the skip-layer penalty (already multiplied by the step size
    during training), ``lam_bar`` an optional entrywise l1 on the first layer,
    ``m`` the hierarchy multiplier.
    """

    lam: float
    m: float = 10.0
    lam_bar: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ContractError(f"lam must be finite and >= 0, got {self.lam}")
        if not np.isfinite(self.lam_bar) or self.lam_bar < 0:
            raise ContractError(f"lam_bar must be finite and >= 0, got {self.lam_bar}")
        if not np.isfinite(self.m) or self.m <= 0:
            raise ContractError(
                f"hierarchy multiplier m must be > 0, got {self.m} (use linear-only mode instead of m=0)"
            )


@dataclass
class ProxResult:
    theta: np.ndarray
    w: np.ndarray
    m_tilde: int


def soft_threshold(x, lam):
    """sign(x) * max(|x| - lam, 0), elementwise."""
    if np.any(np.asarray(lam) < 0):
        raise ContractError("threshold must be non-negative")
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def feature_norms(theta):
    """Per-feature magnitude of the skip weights: |theta_j| or ||theta_j||_2 by row.

    This is the norm the hierarchy constraint is stated (and checked) in.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        return np.abs(theta)
    if theta.shape[1] == 1:
        return np.abs(theta[:, 0])
    # scale by the largest entry so tiny or huge rows neither underflow nor overflow
    big = np.max(np.abs(theta), axis=1)
    safe = np.where(big > 0, big, 1.0)
    return big * np.sqrt(np.sum((theta / safe[:, None]) ** 2, axis=1))


def hierarchy_feasible(theta, w1, m):
    """True iff ``max_k |w1[j, k]| <= m * ||theta_j||`` holds exactly for every row."""
    w1 = np.asarray(w1)
    if w1.shape[1] == 0:
        return True
    return bool(np.all(np.max(np.abs(w1), axis=1) <= m * feature_norms(theta)))


def _prox_rows(v, u, lam, lam_bar, m):
    """Vectorised solver. ``v`` is (d, k), ``u`` is (d, K)."""
    d, k = v.shape
    K = u.shape[1]
    vnorm = feature_norms(v)
    absu = np.abs(u)

    order = np.argsort(-absu, axis=1, kind="stable")
    sorted_abs = np.take_along_axis(absu, order, axis=1)
    thr = np.maximum(sorted_abs - lam_bar, 0.0)  # S_{lam_bar}(|u_(i)|), descending

    csum = np.zeros((d, K + 1))
    np.cumsum(sorted_abs - lam_bar, axis=1, out=csum[:, 1:])
    a = lam - m * csum
    s = np.arange(K + 1)
    bnorm = np.maximum(vnorm[:, None] - a, 0.0) / (1.0 + s * m * m)
    w = m * bnorm

    upper = np.empty((d, K + 1))
    upper[:, 0] = np.inf
    upper[:, 1:] = thr
    lower = np.zeros((d, K + 1))
    lower[:, :K] = thr
    bracket = (lower <= w) & (w < upper)
    found = bracket.any(axis=1)
    if not np.all(found):
        # Exact arithmetic always brackets; rounding can open an ulp-wide gap
        # at a breakpoint. Retry those rows with bounds widened by a few ulps.
        rows = ~found
        slack = 16 * np.finfo(float).eps * np.maximum(w[rows], lower[rows])
        bracket[rows] = (lower[rows] - slack <= w[rows]) & (w[rows] < upper[rows] + slack)
        found = bracket.any(axis=1)
    if not np.all(found):
        j = int(np.flatnonzero(~found)[0])
        raise ProxInvariantError(
            f"no bracketing index for feature {j}: w={w[j].tolist()} bounds={thr[j].tolist()}"
        )
    m_tilde = np.argmax(bracket, axis=1)
    t = bnorm[np.arange(d), m_tilde]

    # t times the direction of v, and v itself when nothing shrinks. When v = 0
    # the objective does not depend on the direction; take e_1.
    nz = vnorm > 0
    if k == 1:
        theta_new = np.where(v[:, 0] < 0, -t, t)[:, None]
    else:
        safe = np.where(nz, vnorm, 1.0)
        theta_new = (v / safe[:, None]) * t[:, None]
        theta_new[~nz, 0] = t[~nz]
        keep = t == vnorm
        theta_new[keep] = v[keep]

    # Clip against the norm of the returned skip weights so feasibility is exact.
    if k == 1:
        w_cap = m * np.abs(theta_new[:, 0])
    else:
        # Different summation orders can move a computed 2-norm by an ulp or
        # two; a cap a few ulps low keeps the pair feasible under all of them.
        w_cap = m * feature_norms(theta_new) * (1.0 - 8 * np.finfo(float).eps)
    w_new = np.sign(u) * np.minimum(w_cap[:, None], np.maximum(absu - lam_bar, 0.0))
    return theta_new, w_new, m_tilde


def _as_vec(x, name):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1:
        raise ContractError(f"{name} must be a vector")
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{name} must be finite")
    return x


def general_hier_prox(v, u, params):
    """Global minimiser of the penalised problem above for a single feature.

    ``v`` has one entry per output, ``u`` one entry per first-layer unit.
    """
    v = _as_vec(v, "v")
    u = _as_vec(u, "u")
    theta, w, mt = _prox_rows(v[None, :], u[None, :], params.lam, params.lam_bar, params.m)
    return ProxResult(theta[0], w[0], int(mt[0]))


def group_hier_prox(theta, w, params):
    """Multi-output hierarchical prox (group penalty on ``theta``)."""
    if params.lam_bar != 0:
        raise ContractError("group_hier_prox requires lam_bar == 0; use general_hier_prox")
    return general_hier_prox(theta, w, params)


def hier_prox(theta, w, params):
    """Scalar-skip hierarchical prox; returns a ProxResult with float ``theta``."""
    if params.lam_bar != 0:
        raise ContractError("hier_prox requires lam_bar == 0; use general_hier_prox")
    if np.ndim(theta) != 0:
        raise ContractError("hier_prox takes a scalar theta; use group_hier_prox")
    res = general_hier_prox(theta, w, params)
    return ProxResult(float(res.theta[0]), res.w, res.m_tilde)


def apply_prox_all_features(theta, w1, params, grouped=None):
    """Apply the prox to every feature (row) independently.

    ``theta`` is (d,) or (d, k); ``w1`` is (d, K). ``grouped`` defaults to
    ``theta.ndim == 2``. Returns new ``(theta, w1)`` arrays of the same shapes.
    """
    theta = np.asarray(theta, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    if w1.ndim != 2 or theta.shape[0] != w1.shape[0]:
        raise ContractError(f"shape mismatch: theta {theta.shape}, w1 {w1.shape}")
    if grouped is None:
        grouped = theta.ndim == 2
    if grouped and theta.ndim != 2:
        raise ContractError("grouped mode needs theta of shape (d, k)")
    if not grouped and theta.ndim == 2 and theta.shape[1] != 1:
        raise ContractError("ungrouped mode needs one skip weight per feature")
    scalar_1d = theta.ndim == 1
    v = theta[:, None] if scalar_1d else theta
    t_new, w_new, _ = _prox_rows(v, w1, params.lam, params.lam_bar, params.m)
    return (t_new[:, 0] if scalar_1d else t_new), w_new


# ---------------------------------------------------------------------------
# Brute-force reference, used by the tests


def prox_objective(v, u, b, w, params):
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return float(
        0.5 * np.sum((v - b) ** 2)
        + 0.5 * np.sum((u - w) ** 2)
        + params.lam * np.linalg.norm(b)
        + params.lam_bar * np.sum(np.abs(w))
    )


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def prox_oracle(v, u, params, grid_steps=2000):
    """Minimise the prox objective by one-dimensional search over ``w = m ||b||``.

    For a fixed radius ``w`` the best ``b`` points along ``v`` and the best
    ``W`` is ``u`` clipped to ``[-w, w]`` after soft-thresholding, so the
    objective reduces to a scalar function. It is scanned on a uniform grid
    and refined by golden-section search inside every piece between clipping
    breakpoints. Returns ``(objective, ProxResult)``.
    """
    v = _as_vec(v, "v")
    u = np.asarray(u, dtype=np.float64).ravel()
    lam, lam_bar, m = params.lam, params.lam_bar, params.m
    K = u.size
    vnorm = float(np.linalg.norm(v))
    absu = np.abs(u)
    su = np.maximum(absu - lam_bar, 0.0)
    umax = float(absu.max()) if K else 0.0
    w_max = m * (vnorm + lam + umax * K)

    def f(wv):
        wv = np.asarray(wv, dtype=np.float64)
        t = wv / m
        clipped = np.minimum(wv[..., None], su)
        return (
            0.5 * (vnorm - t) ** 2
            + 0.5 * np.sum((absu - clipped) ** 2, axis=-1)
            + lam * t
            + lam_bar * np.sum(clipped, axis=-1)
        )

    candidates = [0.0]
    if w_max > 0:
        grid = np.linspace(0.0, w_max, int(grid_steps) + 1)
        fg = f(grid)
        h = grid[1] - grid[0]
        breaks = np.unique(np.concatenate(([0.0, w_max], su[(su > 0) & (su < w_max)])))
        lo_all, hi_all = [], []
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            inside = (grid >= lo) & (grid <= hi)
            if inside.any():
                idx = np.flatnonzero(inside)
                best = grid[idx[np.argmin(fg[idx])]]
                lo_all.append(max(lo, best - h))
                hi_all.append(min(hi, best + h))
            else:
                lo_all.append(lo)
                hi_all.append(hi)
            candidates.extend([lo, hi])
        a = np.array(lo_all)
        b = np.array(hi_all)
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(200):
            if np.all(b - a <= 1e-15 * (1.0 + w_max)):
                break
            left = fc < fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            d_new = np.where(left, c, a + _GOLDEN * (b - a))
            c_new = np.where(left, b - _GOLDEN * (b - a), d)
            fc_new = np.where(left, f(c_new), fd)
            fd_new = np.where(left, fc, f(d_new))
            c, d, fc, fd = c_new, d_new, fc_new, fd_new
        candidates.extend(grid[np.argsort(fg)[:3]].tolist())
        candidates.extend(((a + b) / 2).tolist())
    cand = np.array(candidates)
    fc_all = f(cand)
    w_star = float(cand[np.argmin(fc_all)])

    t = w_star / m
    if vnorm > 0:
        b_star = t * v / vnorm
    else:
        b_star = np.zeros_like(v)
        b_star[0] = t
    w_vec = np.sign(u) * np.minimum(w_star, su)
    obj = prox_objective(v, u, b_star, w_vec, params)
    return obj, ProxResult(b_star, w_vec, -1)
