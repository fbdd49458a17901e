"""Dense training, the dense-to-sparse penalty path, and debiased refitting.

Path training alternates a momentum gradient step on every parameter with the
hierarchical prox on ``(skip, weights[0])``. The penalty grows geometrically
and each value warm-starts from the previous one until no feature is left.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data_io import Dataset
from .errors import ContractError, DivergenceError, NumericalError
from .network import init_net, loss, loss_and_grad, forward
from .numeric import make_rng
from .prox import ProxParams, apply_prox_all_features, feature_norms, soft_threshold

log = logging.getLogger(__name__)

FULL_BATCH_MAX_ROWS = 4096


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (32,)
    epochs_b: int = 10
    learning_rate: float = 1e-3
    path_learning_rate: float = None  # defaults to learning_rate
    momentum: float = 0.9
    dense_epochs: int = 1000
    path_multiplier: float = 0.02
    hierarchy_m: float = 10.0
    lambda_start: object = "auto"
    patience: int = 10
    batch_size: int = 256
    seed: int = 0
    linear_only: bool = False
    max_lambda_ratio: float = 1e12

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ContractError("hidden sizes must be positive")
        if self.learning_rate <= 0 or (self.path_learning_rate is not None and self.path_learning_rate <= 0):
            raise ContractError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.path_multiplier <= 0:
            raise ContractError("path multiplier must be positive")
        if self.hierarchy_m <= 0:
            raise ContractError("hierarchy multiplier M must be positive; use linear_only for the lasso limit")
        if self.lambda_start != "auto" and not (
            isinstance(self.lambda_start, (int, float)) and self.lambda_start > 0
        ):
            raise ContractError("lambda_start must be 'auto' or a positive number")
        if self.epochs_b < 1 or self.batch_size < 1 or self.patience < 1 or self.dense_epochs < 0:
            raise ContractError("epoch, batch and patience counts must be positive")

    @property
    def alpha(self):
        return self.path_learning_rate if self.path_learning_rate is not None else self.learning_rate

    def to_dict(self):
        return asdict(self)


@dataclass
class Problem:
    """Arrays a trainer needs; built from a :class:`Dataset` or by the completion code.

    ``mask_*`` restrict squared-error losses to chosen entries and
    ``input_dropout`` hides that fraction of observed input entries during
    gradient steps (never during evaluation).
    """

    kind: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    k_out: int
    mask_train: np.ndarray = None
    mask_val: np.ndarray = None
    x_test: np.ndarray = None
    y_test: np.ndarray = None
    mask_test: np.ndarray = None
    input_dropout: float = 0.0
    fingerprint: str = ""

    @property
    def grouped(self):
        return self.k_out > 1

    @property
    def n_features(self):
        return self.x_train.shape[1]


def as_problem(data):
    if isinstance(data, Problem):
        return data
    if not isinstance(data, Dataset):
        raise ContractError("expected a Dataset or Problem")
    if data.task == "classification":
        kind, k_out = "cross_entropy", max(2, data.n_classes)
        ys = data.y_train, data.y_val, data.y_test
    elif data.task == "regression":
        kind, k_out = "squared_error", 1
        ys = data.y_train, data.y_val, data.y_test
    else:
        kind, k_out = "reconstruction_frobenius", data.n_features
        ys = data.x_train, data.x_val, data.x_test
    return Problem(
        kind, data.x_train, ys[0], data.x_val, ys[1], k_out,
        x_test=data.x_test, y_test=ys[2], fingerprint=data.fingerprint,
    )


def evaluate(net, x, y, kind, mask=None):
    """Return ``(loss, metric)``: accuracy for classification, MSE per entry otherwise."""
    if x is None or len(x) == 0:
        return float("nan"), float("nan")
    value = loss(net, x, y, kind, mask)
    if kind == "cross_entropy":
        metric = float(np.mean(np.argmax(forward(net, x), axis=1) == y))
    else:
        out = forward(net, x)
        r = out - (y[:, None] if np.ndim(y) == 1 else y)
        if mask is not None:
            metric = float(np.sum((r * mask) ** 2) / max(np.sum(mask), 1))
        else:
            metric = float(np.mean(r * r))
    return float(value), metric


def metric_higher_is_better(kind):
    return kind == "cross_entropy"


# ---------------------------------------------------------------------------
# Optimisers


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, lr, momentum):
        self.lr, self.momentum = lr, momentum
        self.buf = None

    def reset(self):
        self.buf = None

    def step(self, params, grads):
        if self.buf is None:
            self.buf = [g.copy() for g in grads]
        else:
            for b, g in zip(self.buf, grads):
                b *= self.momentum
                b += g
        for p, b in zip(params, self.buf):
            p -= self.lr * b


def _batches(n, batch_size, rng):
    if batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _take(a, idx):
    return None if a is None else a[idx]


def _corrupt(x, mask, frac, rng):
    """Zero a random fraction of observed input entries; the loss keeps them as targets."""
    if frac <= 0:
        return x
    hide = rng.random(x.shape) < frac
    if mask is not None:
        hide &= mask.astype(bool)
    return np.where(hide, 0.0, x)


def _gradient_pass(net, prob, idx, opt, rng, after_step=None):
    xb = prob.x_train[idx]
    mb = _take(prob.mask_train, idx)
    xb = _corrupt(xb, mb, prob.input_dropout, rng)
    value, grads = loss_and_grad(net, xb, prob.y_train[idx], prob.kind, mb)
    if not np.isfinite(value):
        raise DivergenceError(f"training loss became non-finite ({value})")
    opt.step(net.params(), grads.arrays())
    if after_step is not None:
        after_step(net)
    return value


def _zero_first_layer(net):
    net.weights[0][...] = 0.0


# ---------------------------------------------------------------------------
# Dense phase


def new_net(prob, cfg, task_id=0):
    rng = make_rng(cfg.seed, task_id=100 + task_id)
    net = init_net(prob.n_features, cfg.hidden, prob.k_out, rng)
    if cfg.linear_only:
        _zero_first_layer(net)
    return net


def train_dense(net, data, cfg, feature_mask=None):
    """Adam on the unpenalised loss with early stopping on validation loss.

    Returns a copy of the best-validation network; ``net`` is not modified.
    ``feature_mask`` (boolean per feature) pins the skip and first-layer rows
    of excluded features at zero.
    """
    prob = as_problem(data)
    net = net.copy()
    if cfg.dense_epochs == 0:
        return net
    rng = make_rng(cfg.seed, task_id=2)
    opt = Adam(cfg.learning_rate)
    hooks = []
    if cfg.linear_only:
        hooks.append(_zero_first_layer)
    if feature_mask is not None:
        drop = ~np.asarray(feature_mask, dtype=bool)

        def pin(n):
            n.skip[drop] = 0.0
            n.weights[0][drop] = 0.0

        pin(net)
        hooks.append(pin)
    after = (lambda n: [h(n) for h in hooks]) if hooks else None

    has_val = prob.x_val is not None and len(prob.x_val) > 0
    best = net.copy()
    best_val = np.inf
    bad = 0
    n = prob.x_train.shape[0]
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.dense_epochs):
        for idx in _batches(n, bs, rng):
            _gradient_pass(net, prob, idx, opt, rng, after)
        if has_val:
            v = loss(net, prob.x_val, prob.y_val, prob.kind, prob.mask_val)
        else:
            v = loss(net, prob.x_train, prob.y_train, prob.kind, prob.mask_train)
        if not np.isfinite(v):
            raise DivergenceError(f"validation loss non-finite at dense epoch {epoch}")
        if v < best_val:
            best_val = v
            best = net.copy()
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                log.debug("dense early stop at epoch %d (best val %.5g)", epoch, best_val)
                break
    return best


def hidden_size_sweep(data, cfg, sizes, n_jobs=None):
    """Train one dense model per first-layer width; return cfg with the best width.

    All candidate layers take the same width. Runs in up to ``n_jobs`` threads
    (default: ``LASSONET_THREADS`` or 1); the result does not depend on it.
    """
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ContractError("sizes must be non-empty")
    prob = as_problem(data)
    if n_jobs is None:
        n_jobs = worker_count()

    def run(size):
        c = replace(cfg, hidden=(size,) * len(cfg.hidden))
        net = train_dense(new_net(prob, c), prob, c)
        return evaluate(net, prob.x_val, prob.y_val, prob.kind, prob.mask_val)[1]

    if n_jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            scores = list(ex.map(run, sizes))
    else:
        scores = [run(s) for s in sizes]
    sign = 1.0 if metric_higher_is_better(prob.kind) else -1.0
    best = max(range(len(sizes)), key=lambda i: (sign * scores[i], -i))
    return replace(cfg, hidden=(sizes[best],) * len(cfg.hidden))


def worker_count():
    try:
        return max(1, int(os.environ.get("LASSONET_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Path


@dataclass
class PathCheckpoint:
    lam: float
    k_active: int
    active_set: list
    model: object
    train_loss: float
    val_loss: float
    val_metric: float
    test_loss: float = float("nan")
    test_metric: float = float("nan")


@dataclass
class Path:
    checkpoints: list
    config: dict
    fingerprint: str
    kind: str
    lambda_start: float
    direction: str = "dense_to_sparse"
    meta: dict = field(default_factory=dict)

    @property
    def lambdas(self):
        return np.array([c.lam for c in self.checkpoints])

    @property
    def k(self):
        return np.array([c.k_active for c in self.checkpoints])

    def best(self, max_k=None):
        """Checkpoint with the best validation metric (ties go to fewer features)."""
        pool = [c for c in self.checkpoints if max_k is None or c.k_active <= max_k]
        pool = [c for c in pool if np.isfinite(c.val_metric)] or pool
        if not pool:
            raise ContractError(f"no checkpoint with at most {max_k} active features")
        sign = 1.0 if metric_higher_is_better(self.kind) else -1.0
        return max(pool, key=lambda c: (sign * c.val_metric, -c.k_active))


def _prox_step(net, lam, cfg, grouped):
    """Apply the penalty's proximal map for step ``alpha * lam`` in place."""
    step = cfg.alpha * lam
    if cfg.linear_only:
        norms = feature_norms(net.skip)
        shrink = np.divide(np.maximum(norms - step, 0.0), norms, out=np.zeros_like(norms), where=norms > 0)
        if net.skip.shape[1] == 1:
            net.skip[:, 0] = soft_threshold(net.skip[:, 0], step)
        else:
            net.skip *= shrink[:, None]
        _zero_first_layer(net)
        return
    theta, w1 = apply_prox_all_features(net.skip, net.weights[0], ProxParams(step, cfg.hierarchy_m), grouped)
    net.skip[...] = theta
    net.weights[0][...] = w1


def _path_batch_size(n):
    return n if n <= FULL_BATCH_MAX_ROWS else 256


def _run_block(net, prob, cfg, lam, epochs, rng, grouped=None):
    """``epochs`` passes of (momentum step, prox) at a fixed penalty; fresh momentum."""
    opt = SGDMomentum(cfg.alpha, cfg.momentum)
    n = prob.x_train.shape[0]
    bs = _path_batch_size(n)
    grouped = prob.grouped if grouped is None else grouped

    def after(m):
        _prox_step(m, lam, cfg, grouped)

    for _ in range(epochs):
        for idx in _batches(n, bs, rng):
            _gradient_pass(net, prob, idx, opt, rng, after)


def _checkpoint(net, prob, lam):
    active = net.active_features()
    tr = loss(net, prob.x_train, prob.y_train, prob.kind, prob.mask_train)
    vl, vm = evaluate(net, prob.x_val, prob.y_val, prob.kind, prob.mask_val)
    tl, tm = evaluate(net, prob.x_test, prob.y_test, prob.kind, prob.mask_test)
    if not np.isfinite(tr):
        raise DivergenceError(f"training loss non-finite at lambda={lam:.6g}")
    return PathCheckpoint(float(lam), int(active.size), active.tolist(), net.copy(), tr, vl, vm, tl, tm)


def lambda_max_zero(net, data, cfg):
    """Smallest penalty at which zeroing every feature is a fixed point of a path step.

    With the feature layer at zero, a steady-state momentum step followed by
    the prox keeps feature ``j`` at zero iff
    ``lam >= (||g_theta_j|| + M ||g_W_j||_1) / (1 - momentum)``; the maximum
    over features is returned. The dense-to-sparse path typically empties
    out at this order of magnitude.
    """
    prob = as_problem(data)
    z = net.copy()
    z.skip[...] = 0.0
    z.weights[0][...] = 0.0
    _, g = loss_and_grad(z, prob.x_train, prob.y_train, prob.kind, prob.mask_train)
    level = feature_norms(g.d_skip)
    if not cfg.linear_only:
        level = level + cfg.hierarchy_m * np.abs(g.d_weights[0]).sum(axis=1)
    return float(level.max() / (1.0 - cfg.momentum)) if level.size else 0.0


AUTO_START_FRACTION = 1e-3


def auto_lambda_start(net_dense, data, cfg):
    """Starting penalty for the path, found by doubling from ``1e-8 * scale``.

    ``scale`` is the mean skip magnitude of the dense model. Doubling stops at
    the last value for which one path epoch from the dense model keeps every
    feature, and never goes past ``AUTO_START_FRACTION * lambda_max_zero``: a
    single epoch only drops a feature once the penalty beats its whole first
    layer at once, long after accumulated shrinkage would have removed it.
    Falls back to ``1e-6 * scale`` when the first value already drops a
    feature or the search runs 64 doublings without stopping.
    """
    prob = as_problem(data)
    norms = feature_norms(net_dense.skip)
    if not np.any(norms > 0):
        return 1e-6
    scale = float(norms.mean())
    k0 = int(np.count_nonzero(norms > 0))
    cap = AUTO_START_FRACTION * lambda_max_zero(net_dense, prob, cfg)
    if not cap > 0:
        cap = np.inf
    lam = 1e-8 * scale
    last_ok = None
    for _ in range(64):
        if lam > cap:
            break
        trial = net_dense.copy()
        _run_block(trial, prob, cfg, lam, 1, make_rng(cfg.seed, task_id=3))
        if trial.active_features().size < k0:
            break
        last_ok = lam
        lam *= 2.0
    else:
        last_ok = None
    if last_ok is None:
        return 1e-6 * scale
    return last_ok


def _config_echo(cfg, prob, grouped):
    echo = cfg.to_dict()
    echo["hidden"] = list(echo["hidden"])
    echo["loss"] = prob.kind
    echo["grouped"] = bool(grouped)
    return echo


def train_path(net_dense, data, cfg, grouped=None, lambda_start=None, max_steps=None):
    """Dense-to-sparse path starting from ``net_dense`` (not modified).

    Records a checkpoint after ``cfg.epochs_b`` epochs at each penalty
    ``lam0, lam0 (1 + eps), ...`` and stops once no feature is active.
    """
    prob = as_problem(data)
    if grouped is None:
        grouped = prob.grouped
    elif not grouped and prob.k_out > 1:
        raise ContractError("multi-output models need the grouped prox")

    if lambda_start is None:
        lambda_start = cfg.lambda_start
    if lambda_start == "auto":
        lambda_start = auto_lambda_start(net_dense, prob, cfg)
    lam0 = float(lambda_start)
    if lam0 <= 0:
        raise ContractError("lambda_start must be positive")

    rng = make_rng(cfg.seed, task_id=4)
    net = net_dense.copy()
    ratio = 1.0 + cfg.path_multiplier
    lam = lam0
    checkpoints = []
    while True:
        if lam > cfg.max_lambda_ratio * lam0:
            raise NumericalError(
                f"path did not sparsify: lambda={lam:.6g} exceeds {cfg.max_lambda_ratio:g} * lambda0 with "
                f"{checkpoints[-1].k_active if checkpoints else '?'} features still active"
            )
        _run_block(net, prob, cfg, lam, cfg.epochs_b, rng, grouped)
        ck = _checkpoint(net, prob, lam)
        checkpoints.append(ck)
        log.debug("lambda=%.6g k=%d val=%.5g", lam, ck.k_active, ck.val_metric)
        if ck.k_active == 0 or (max_steps is not None and len(checkpoints) >= max_steps):
            break
        lam = lam * ratio
    return Path(checkpoints, _config_echo(cfg, prob, grouped), prob.fingerprint, prob.kind, lam0)


def train_path_sparse_to_dense(net_init, data, cfg, lambdas):
    """Ablation: walk a decreasing penalty sequence, warm-starting from the sparse end.

    ``net_init`` is typically an untrained network; the first prox at the
    largest penalty zeroes it before training begins.
    """
    prob = as_problem(data)
    lambdas = np.sort(np.asarray(lambdas, dtype=np.float64))[::-1]
    rng = make_rng(cfg.seed, task_id=5)
    net = net_init.copy()
    _prox_step(net, lambdas[0], cfg, prob.grouped)
    checkpoints = []
    for lam in lambdas:
        _run_block(net, prob, cfg, lam, cfg.epochs_b, rng)
        checkpoints.append(_checkpoint(net, prob, lam))
    return Path(
        checkpoints, _config_echo(cfg, prob, prob.grouped), prob.fingerprint, prob.kind,
        float(lambdas[0]), direction="sparse_to_dense",
    )


# ---------------------------------------------------------------------------
# Debiasing


def refit_debiased(path_point, data, cfg, task_id=0):
    """Retrain an unpenalised network from scratch on the checkpoint's active features.

    Excluded columns are zeroed in the data and their skip / first-layer rows
    are held at zero, so the returned model ignores them entirely.
    """
    active = np.asarray(path_point.active_set if isinstance(path_point, PathCheckpoint) else path_point, dtype=int)
    if active.size == 0:
        raise ContractError("cannot refit on an empty active set")
    prob = as_problem(data)
    keep = np.zeros(prob.n_features, dtype=bool)
    keep[active] = True

    def zero_cols(x):
        return None if x is None else np.where(keep, x, 0.0)

    # reconstruction targets keep every column
    restricted = replace(
        prob, x_train=zero_cols(prob.x_train), x_val=zero_cols(prob.x_val), x_test=zero_cols(prob.x_test)
    )
    net = new_net(restricted, cfg, task_id)
    return train_dense(net, restricted, cfg, feature_mask=keep)
