import numpy as np
import pytest

from lassonet.completion import (
    entry_split,
    lassonet_impute,
    masked_mse,
    project_observed,
    read_mask_file,
    row_mean_init,
    soft_impute,
    soft_impute_cv,
    soft_impute_objective,
    svt,
    validate_mask,
    write_mask_file,
)
from lassonet.errors import ContractError
from lassonet.network import forward
from lassonet.prox import hierarchy_feasible
from lassonet.synthetic import cubic_manifold
from lassonet.training import Problem, TrainConfig, new_net, train_dense


def test_mask_validation():
    with pytest.raises(ContractError):
        validate_mask(np.zeros((2, 2), bool))
    with pytest.raises(ContractError, match="row 1"):
        validate_mask(np.array([[True, False], [False, False]]))
    with pytest.raises(ContractError):
        validate_mask(np.ones((2, 2), bool), shape=(2, 3))


def test_row_mean_init():
    z = np.array([[1.0, 3.0, 0.0], [4.0, 0.0, 0.0]])
    mask = np.array([[True, True, False], [True, False, False]])
    assert row_mean_init(z, mask).tolist() == [[1, 3, 2], [4, 4, 4]]


def test_project_observed():
    z = np.arange(4.0).reshape(2, 2)
    x = -np.ones((2, 2))
    assert np.array_equal(project_observed(x, z, np.ones((2, 2), bool)), z)
    assert np.array_equal(project_observed(x, z, np.zeros((2, 2), bool)), x)
    mixed = np.array([[True, False], [False, True]])
    assert project_observed(x, z, mixed).tolist() == [[0, -1], [-1, 3]]


def test_mask_file_round_trip(tmp_path):
    mask = np.random.default_rng(0).random((6, 4)) < 0.5
    mask[:, 0] = True
    path = tmp_path / "mask.txt"
    write_mask_file(path, mask)
    assert np.array_equal(read_mask_file(path, mask.shape), mask)
    path.write_text("0,9\n")
    with pytest.raises(ContractError):
        read_mask_file(path, mask.shape)


def test_entry_split_partitions_and_is_seeded():
    tr, va, te = entry_split((50, 8), seed=3)
    assert np.all(tr.astype(int) + va + te == 1)
    assert tr.any(axis=1).all()
    assert abs(tr.mean() - 0.8) < 0.05
    assert all(np.array_equal(a, b) for a, b in zip((tr, va, te), entry_split((50, 8), seed=3)))


def test_svt_and_soft_impute_examples():
    x, _ = svt(np.diag([3.0, 1.0]), 1.0)
    np.testing.assert_allclose(x, np.diag([2.0, 0.0]), atol=1e-14)
    z = np.random.default_rng(1).normal(size=(6, 4))
    np.testing.assert_allclose(soft_impute(z, np.ones_like(z, bool), 0.0), z, atol=1e-12)
    with pytest.raises(ContractError):
        soft_impute(z, np.ones_like(z, bool), -1.0)


def test_soft_impute_objective_non_increasing_and_rank_bound():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(30, 3)) @ rng.normal(size=(3, 10))
    mask = rng.random(z.shape) < 0.7
    mask[:, 0] = True
    thr = 2.0
    hist = []
    x = soft_impute(z, mask, thr, max_iter=60, history=hist)
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(hist, hist[1:]))
    _, s = svt(project_observed(x, np.where(mask, z, 0), mask), thr)
    assert np.linalg.matrix_rank(x, tol=1e-8) <= np.count_nonzero(s)
    assert hist[-1] == pytest.approx(soft_impute_objective(x, np.where(mask, z, 0), mask, thr))


def test_soft_impute_cv_recovers_low_rank():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(60, 2)) @ rng.normal(size=(2, 12))
    tr, va, te = entry_split(z.shape, seed=0)
    x, thr = soft_impute_cv(z, tr, va)
    assert thr > 0
    assert masked_mse(x, z, te) < 0.1 * masked_mse(row_mean_init(z, tr), z, te)


def test_fully_observed_reconstruction():
    z = cubic_manifold(m=150, n=6, seed=0)
    mask = np.ones_like(z, bool)
    cfg = TrainConfig(hidden=(6, 6))
    _, x, state = lassonet_impute(z, mask, cfg, input_dropout=0.0, run_path=False, max_outer=5)
    assert np.array_equal(x, z)  # every entry observed, so nothing is replaced
    # the reconstruction itself, on the standardized scale it was trained on
    zs = (z - z.mean(0)) / z.std(0)
    assert np.linalg.norm(state.output - zs) / np.linalg.norm(zs) < 0.05


def test_full_mask_without_path_is_dense_training():
    z = cubic_manifold(m=80, n=5, seed=1)
    mask = np.ones_like(z, bool)
    cfg = TrainConfig(hidden=(5, 5), dense_epochs=20, seed=4)
    _, _, state = lassonet_impute(z, mask, cfg, input_dropout=0.0, run_path=False, max_outer=1)
    zs = (z - z.mean(0)) / z.std(0)
    prob = Problem("reconstruction_frobenius", zs, zs, None, None, 5, mask_train=mask.astype(float))
    net = train_dense(new_net(prob, cfg), prob, TrainConfig(hidden=(5, 5), dense_epochs=20, seed=5))
    np.testing.assert_array_equal(state.output, forward(net, zs))


def test_observed_entries_preserved_and_convergence_flag():
    z = cubic_manifold(m=120, n=8, seed=2)
    tr, va, te = entry_split(z.shape, seed=2)
    cfg = TrainConfig(hidden=(8, 8), dense_epochs=50)
    path, x, state = lassonet_impute(z, tr, cfg, val_mask=va, test_mask=te, max_outer=8)
    assert np.array_equal(x[tr], z[tr])
    if state.converged:
        assert state.rel_change < 1e-4
    assert path.checkpoints[-1].k_active == 0
    assert all(hierarchy_feasible(c.model.skip, c.model.w1, cfg.hierarchy_m) for c in path.checkpoints)
    with pytest.raises(ContractError):
        lassonet_impute(z, tr, cfg, val_mask=tr)


def _scale(z, mask):
    mu = np.array([z[mask[:, j], j].mean() for j in range(z.shape[1])])
    sd = np.array([z[mask[:, j], j].std() for j in range(z.shape[1])])
    return mu, sd


def test_manifold_beats_rank_two_soft_impute():
    ours, base = [], []
    for seed in range(5):
        z = cubic_manifold(seed=seed)
        tr, va, te = entry_split(z.shape, (0.8, 0.1, 0.1), seed=seed)
        cfg = TrainConfig(hidden=(20, 20), dense_epochs=200, seed=seed)
        _, x, _ = lassonet_impute(z, tr, cfg, val_mask=va, test_mask=te, run_path=False)
        mu, sd = _scale(z, tr)
        zs = (z - mu) / sd
        ours.append(masked_mse((x - mu) / sd, zs, te))
        si, _ = soft_impute_cv(zs, tr, va, max_rank=2)
        base.append(masked_mse(si, zs, te))
    assert np.median(ours) < np.median(base)
