"""Matrix completion: network-based iterative imputation and the Soft-Impute baseline.

Masks are boolean arrays of the data's shape, ``True`` on observed entries.
Mask files hold one ``row,col`` pair (0-indexed) per line.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .network import forward
from .numeric import make_rng, svd_thin
from .training import Problem, TrainConfig, new_net, train_dense, train_path

log = logging.getLogger(__name__)


def validate_mask(mask, shape=None):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ContractError("mask must be 2-d")
    if shape is not None and mask.shape != tuple(shape):
        raise ContractError(f"mask shape {mask.shape} does not match data shape {tuple(shape)}")
    if not mask.any():
        raise ContractError("mask has no observed entries")
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        raise ContractError(f"row {int(empty[0])} has no observed entry")
    return mask


def mask_from_pairs(pairs, shape):
    mask = np.zeros(shape, dtype=bool)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (
        pairs.min() < 0 or pairs[:, 0].max() >= shape[0] or pairs[:, 1].max() >= shape[1]
    ):
        raise ContractError("mask index out of range")
    mask[pairs[:, 0], pairs[:, 1]] = True
    return mask


def read_mask_file(path, shape):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ContractError(f"{path}:{lineno}: expected 'row,col'")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ContractError(f"{path}:{lineno}: non-integer index") from None
    return mask_from_pairs(pairs, shape)


def write_mask_file(path, mask):
    rows, cols = np.nonzero(mask)
    with open(path, "w") as fh:
        for r, c in zip(rows, cols):
            fh.write(f"{r},{c}\n")


def entry_split(shape, fractions=(0.8, 0.1, 0.1), seed=0):
    """Random train/val/test partition of matrix entries; every row keeps a training entry."""
    m, n = shape
    rng = make_rng(seed, task_id=21)
    u = rng.random((m, n))
    f_train, f_val = fractions[0], fractions[1]
    train = u < f_train
    val = (u >= f_train) & (u < f_train + f_val)
    test = ~(train | val)
    for i in np.flatnonzero(~train.any(axis=1)):
        j = int(np.argmin(u[i]))
        train[i, j], val[i, j], test[i, j] = True, False, False
    return train, val, test


def row_mean_init(z, mask):
    """Observed entries copied; each unobserved entry set to its row's observed mean."""
    z = np.asarray(z, dtype=np.float64)
    mask = validate_mask(mask, z.shape)
    zz = np.where(mask, z, 0.0)
    means = zz.sum(axis=1) / mask.sum(axis=1)
    return np.where(mask, zz, means[:, None])


def project_observed(x, z, mask):
    """P_Omega(z) + P_Omega_perp(x)."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (x.shape == z.shape == mask.shape):
        raise ContractError("x, z and mask must share a shape")
    return np.where(mask, z, x)


def masked_mse(x, z, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.mean((x[mask] - z[mask]) ** 2))


# ---------------------------------------------------------------------------
# Soft-Impute


def svt(x, threshold, max_rank=None):
    """Singular value soft-thresholding; returns ``(matrix, thresholded singular values)``."""
    u, s, vt = svd_thin(x)
    s = np.maximum(s - threshold, 0.0)
    if max_rank is not None:
        s[max_rank:] = 0.0
    r = int(np.count_nonzero(s))
    return (u[:, :r] * s[:r]) @ vt[:r], s


def soft_impute_objective(x, z, mask, threshold):
    r = np.where(mask, z - x, 0.0)
    return 0.5 * float(np.sum(r * r)) + threshold * float(np.linalg.svd(x, compute_uv=False).sum())


def soft_impute(z, mask, threshold, max_iter=100, tol=1e-5, max_rank=None, x0=None, history=None):
    """Iterate ``X <- SVT(P_Omega(Z) + P_Omega_perp(X))`` from ``X = 0``.

    Stops when ``||X_new - X||_F / ||X||_F < tol`` or after ``max_iter``
    iterations. ``history``, if a list, receives the objective after each
    iteration. ``max_rank`` additionally keeps only that many leading
    singular values.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = validate_mask(mask, z.shape)
    if threshold < 0:
        raise ContractError("threshold must be non-negative")
    zz = np.where(mask, z, 0.0)
    x = np.zeros_like(zz) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    for _ in range(max_iter):
        x_new, _ = svt(project_observed(x, zz, mask), threshold, max_rank)
        if history is not None:
            history.append(soft_impute_objective(x_new, zz, mask, threshold))
        denom = np.linalg.norm(x)
        change = np.linalg.norm(x_new - x) / denom if denom > 0 else np.inf
        x = x_new
        if change < tol:
            break
    return x


def soft_impute_cv(z, train_mask, val_mask, n_grid=10, max_rank=None, max_iter=100):
    """Soft-Impute with the threshold picked on validation entries.

    The grid is logarithmic over ``[0.01, 1] * sigma_1(P_Omega(Z))``. Returns
    ``(X, threshold)``; without validation entries the smallest threshold is used.
    """
    zz = np.where(train_mask, z, 0.0)
    s1 = svd_thin(zz)[1][0]
    grid = s1 * np.logspace(-2, 0, n_grid)
    if not np.asarray(val_mask).any():
        t = float(grid[0])
        return soft_impute(z, train_mask, t, max_iter=max_iter, max_rank=max_rank), t
    best = (np.inf, None, None)
    x_prev = None
    for t in grid[::-1]:  # large to small thresholds, warm-started
        x = soft_impute(z, train_mask, t, max_iter=max_iter, max_rank=max_rank, x0=x_prev)
        x_prev = x
        err = masked_mse(x, z, val_mask)
        if err < best[0]:
            best = (err, x, float(t))
    return best[1], best[2]


# ---------------------------------------------------------------------------
# Network imputation


@dataclass
class CompletionState:
    z: np.ndarray
    x: np.ndarray
    iteration: int = 0
    converged: bool = False
    rel_change: float = float("inf")
    val_mse: float = float("nan")
    history: list = None
    output: np.ndarray = None  # network output of the kept round, standardized scale


def _standardize_observed(z, mask):
    zz = np.where(mask, z, np.nan)
    with np.errstate(invalid="ignore"):
        mu = np.nanmean(zz, axis=0)
        sd = np.nanstd(zz, axis=0)
    mu = np.where(np.isfinite(mu), mu, 0.0)
    sd = np.where(np.isfinite(sd) & (sd > 1e-12), sd, 1.0)
    return mu, sd


def lassonet_impute(
    z,
    mask,
    cfg=None,
    val_mask=None,
    test_mask=None,
    max_outer=50,
    tol=1e-4,
    patience=10,
    inner_epochs=None,
    input_dropout=0.2,
    run_path=True,
    standardize=True,
):
    """Iterative imputation with a reconstruction network, then an optional feature path.

    Each outer round fills unobserved entries with the current imputation,
    trains the network (warm-started across rounds) on the observed entries
    only, and replaces the imputation with the network output. Rounds stop on
    relative change below ``tol``, after ``max_outer`` rounds, or when the
    validation-entry MSE has not improved for ``patience`` rounds; the best
    validation round is kept. ``z`` may carry the true values of validation
    and test entries; only ``mask`` entries are used for fitting.

    Returns ``(path or None, imputed matrix, CompletionState)``; the imputed
    matrix equals ``z`` on ``mask``.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = validate_mask(mask, z.shape)
    if cfg is None:
        d = z.shape[1]
        cfg = TrainConfig(hidden=(d, d))
    val_mask = np.zeros_like(mask) if val_mask is None else np.asarray(val_mask, dtype=bool)
    test_mask = np.zeros_like(mask) if test_mask is None else np.asarray(test_mask, dtype=bool)
    if np.any(val_mask & mask) or np.any(test_mask & mask):
        raise ContractError("validation/test entries must be disjoint from the observed set")
    if inner_epochs is not None:
        cfg = replace(cfg, dense_epochs=int(inner_epochs))

    if standardize:
        mu, sd = _standardize_observed(z, mask)
    else:
        mu, sd = np.zeros(z.shape[1]), np.ones(z.shape[1])
    zs = np.where(mask | val_mask | test_mask, (np.nan_to_num(z) - mu) / sd, 0.0)

    x = row_mean_init(zs, mask)
    has_val = bool(val_mask.any())
    prob0 = Problem("reconstruction_frobenius", x, zs, x, zs, z.shape[1], mask_train=mask.astype(float))
    net = new_net(prob0, cfg)

    history = []
    state = CompletionState(zs, x, history=history)
    best_x, best_net, best_val, bad = x, net, np.inf, 0
    for it in range(1, max_outer + 1):
        x_proj = project_observed(x, zs, mask)
        prob = Problem(
            "reconstruction_frobenius", x_proj, zs,
            x_proj if has_val else None, zs if has_val else None, z.shape[1],
            mask_train=mask.astype(float), mask_val=val_mask.astype(float) if has_val else None,
            input_dropout=input_dropout,
        )
        net = train_dense(net, prob, replace(cfg, seed=cfg.seed + it))
        x_new = forward(net, x_proj)
        denom = np.linalg.norm(x)
        rel = float(np.linalg.norm(x_new - x) / denom) if denom > 0 else float("inf")
        x = x_new
        v = masked_mse(x, zs, val_mask) if has_val else float("nan")
        history.append({"iteration": it, "rel_change": rel, "val_mse": v})
        log.debug("outer %d: rel change %.3g, val mse %.4g", it, rel, v)
        state.iteration, state.rel_change = it, rel
        if has_val:
            if v < best_val:
                best_x, best_net, best_val, bad = x, net.copy(), v, 0
            else:
                bad += 1
        else:
            best_x, best_net = x, net
        if rel < tol:
            state.converged = True
            break
        if has_val and bad >= patience:
            break

    x_final = project_observed(best_x, zs, mask)
    state.x = x_final
    state.output = best_x
    state.val_mse = best_val if has_val else float("nan")

    path = None
    if run_path:
        prob = Problem(
            "reconstruction_frobenius", x_final, zs,
            x_final if has_val else None, zs if has_val else None, z.shape[1],
            mask_train=mask.astype(float), mask_val=val_mask.astype(float) if has_val else None,
            x_test=x_final if test_mask.any() else None, y_test=zs if test_mask.any() else None,
            mask_test=test_mask.astype(float) if test_mask.any() else None,
            input_dropout=input_dropout,
        )
        path = train_path(best_net, prob, cfg, grouped=True)
    imputed = x_final * sd + mu
    imputed = project_observed(imputed, z, mask)
    return path, imputed, state
