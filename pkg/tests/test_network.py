import io

import numpy as np
import pytest

from lassonet.errors import ContractError
from lassonet.network import (
    ResidualNet,
    forward,
    init_net,
    load_snapshot,
    loss,
    loss_and_grad,
    save_snapshot,
    snapshot_bytes,
)
from lassonet.numeric import make_rng
from oracles import finite_difference_error, random_small_net


def _tiny(skip, w0, b0, w1, b1):
    return ResidualNet(np.array(skip, float), [np.array(w0, float), np.array(w1, float)],
                       [np.array(b0, float), np.array(b1, float)])


def test_forward_examples():
    # skip only: the MLP output is zero
    net = _tiny([[2.0], [-1.0]], np.ones((2, 3)), np.zeros(3), np.zeros((3, 1)), [0.0])
    assert forward(net, [[1.0, 1.0]]).tolist() == [[1.0]]
    # hand-computed ReLU branch: h = relu([1-2, 1+2]) = [0, 3], out = 0.5*3 + 1 = 2.5
    net = _tiny([[0.0], [0.0]], [[1.0, 1.0], [-1.0, 1.0]], [0.0, 0.0], [[4.0], [0.5]], [1.0])
    assert forward(net, [[1.0, 2.0]]).tolist() == [[2.5]]


def test_init_shapes_and_zero_skip():
    net = init_net(5, (4, 3), 2, make_rng(0))
    assert net.arch == (5, 4, 3, 2)
    assert not net.skip.any()
    assert all(not b.any() for b in net.biases)
    assert net.n_params() == 5 * 2 + 5 * 4 + 4 + 4 * 3 + 3 + 3 * 2 + 2
    with pytest.raises(ContractError):
        init_net(3, (), 1, make_rng(0))


def test_input_and_target_validation():
    net = init_net(3, (2,), 2, make_rng(0))
    with pytest.raises(ContractError):
        forward(net, np.ones((4, 2)))
    with pytest.raises(ContractError):
        loss(net, np.ones((2, 3)), np.array([0, 2]), "cross_entropy")
    with pytest.raises(ContractError):
        loss(net, np.ones((2, 3)), np.ones((2, 2)), "hinge")
    with pytest.raises(ContractError):
        loss(init_net(3, (2,), 1, make_rng(0)), np.ones((2, 3)), np.array([0, 1]), "cross_entropy")


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(50):
        net, x, y, kind, mask = random_small_net(rng)
        assert net.n_params() <= 200
        worst = max(worst, finite_difference_error(net, x, y, kind, mask))
    assert worst <= 1e-5


def test_least_squares_gradient_closed_form():
    # with the hidden output weights at zero the model is linear in the skip layer
    rng = np.random.default_rng(0)
    net = init_net(4, (3,), 1, rng)
    net.weights[-1][...] = 0.0
    net.skip[...] = rng.normal(size=(4, 1))
    x, y = rng.normal(size=(10, 4)), rng.normal(size=10)
    _, g = loss_and_grad(net, x, y)
    expected = (2.0 / 10) * x.T @ (x @ net.skip - y[:, None])
    np.testing.assert_allclose(g.d_skip, expected, atol=1e-13)


def test_masked_loss_ignores_hidden_entries():
    rng = np.random.default_rng(1)
    net = init_net(3, (4,), 3, rng)
    x = rng.normal(size=(5, 3))
    mask = (rng.random((5, 3)) < 0.5).astype(float)
    y1 = rng.normal(size=(5, 3))
    y2 = np.where(mask > 0, y1, 1e6)
    assert loss(net, x, y1, "reconstruction_frobenius", mask) == loss(net, x, y2, "reconstruction_frobenius", mask)


def test_snapshot_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    net = init_net(4, (5, 3), 2, rng)
    net.skip[...] = rng.normal(size=net.skip.shape)
    path = tmp_path / "m.npz"
    save_snapshot(net, path)
    back = load_snapshot(path)
    assert back.arch == net.arch
    for a, b in zip(net.params(), back.params()):
        assert np.array_equal(a, b)
    assert path.read_bytes() == snapshot_bytes(back)


def test_snapshot_rejects_foreign_files():
    buf = io.BytesIO()
    np.savez(buf, header=np.array('{"format": "other"}'))
    buf.seek(0)
    with pytest.raises(ContractError):
        load_snapshot(buf)
