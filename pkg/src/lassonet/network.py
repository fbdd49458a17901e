"""Residual feed-forward network ``f(x) = x @ skip + mlp(x)`` with exact backprop.

The MLP uses ReLU on every hidden layer and the identity on the output layer.
The first hidden layer's weight matrix ``weights[0]`` has one row per input
feature; together with the matching row of ``skip`` it is what the
hierarchical prox acts on.
"""

import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

LOSS_KINDS = ("squared_error", "cross_entropy", "reconstruction_frobenius")

SNAPSHOT_VERSION = 1


@dataclass
class ResidualNet:
    skip: np.ndarray  # (d, k_out)
    weights: list  # [(d, h1), (h1, h2), ..., (h_L, k_out)]
    biases: list
    activation: str = "relu"

    @property
    def n_features(self):
        return self.skip.shape[0]

    @property
    def n_outputs(self):
        return self.skip.shape[1]

    @property
    def hidden(self):
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def arch(self):
        return (self.n_features, *self.hidden, self.n_outputs)

    @property
    def w1(self):
        return self.weights[0]

    def copy(self):
        return ResidualNet(
            self.skip.copy(),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def params(self):
        """Parameter arrays in declaration order: skip, then (weight, bias) per layer."""
        out = [self.skip]
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def active_features(self):
        from .prox import feature_norms

        return np.flatnonzero(feature_norms(self.skip) > 0)


@dataclass
class Gradients:
    d_skip: np.ndarray
    d_weights: list
    d_biases: list

    def arrays(self):
        out = [self.d_skip]
        for w, b in zip(self.d_weights, self.d_biases):
            out.extend((w, b))
        return out


def init_net(d, hidden, k_out, rng):
    """He-uniform hidden layers, zero biases and a zero skip layer."""
    hidden = tuple(int(h) for h in hidden)
    if not hidden:
        raise ContractError("at least one hidden layer is required")
    dims = (d, *hidden, k_out)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ResidualNet(np.zeros((d, k_out)), weights, biases)


def _check_x(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.n_features:
        raise ContractError(f"expected input with {net.n_features} columns, got shape {x.shape}")
    return x


def _forward_cache(net, x):
    hs = [x]
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        hs.append(h)
    out = x @ net.skip + (h @ net.weights[-1] + net.biases[-1])
    return out, hs


def forward(net, x):
    x = _check_x(net, x)
    return _forward_cache(net, x)[0]


def preactivations(net, x):
    """Hidden-layer pre-activations, used to keep finite-difference checks off ReLU kinks."""
    x = _check_x(net, x)
    out = []
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w + b
        out.append(z)
        h = np.maximum(z, 0.0)
    return out


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_targets(net, y, kind, n):
    if kind not in LOSS_KINDS:
        raise ContractError(f"unknown loss kind {kind!r}")
    if kind == "cross_entropy":
        y = np.asarray(y)
        if net.n_outputs < 2:
            raise ContractError("cross_entropy needs at least two outputs")
        if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
            raise ContractError("cross_entropy labels must be an integer vector")
        if y.size and (y.min() < 0 or y.max() >= net.n_outputs):
            raise ContractError(f"label out of range [0, {net.n_outputs})")
        return y
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if kind == "reconstruction_frobenius" and net.n_outputs != net.n_features:
        raise ContractError("reconstruction needs as many outputs as input features")
    if y.shape != (n, net.n_outputs):
        raise ContractError(f"targets must have shape {(n, net.n_outputs)}, got {y.shape}")
    return y


def _loss_from_output(out, y, kind, mask):
    n = out.shape[0]
    if kind == "cross_entropy":
        logp = _log_softmax(out)
        value = -logp[np.arange(n), y].mean()
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        return value, g / n
    r = out - y
    if mask is not None:
        r = r * mask
    value = np.sum(r * r) / n
    return value, (2.0 / n) * r


def loss(net, x, y, kind="squared_error", mask=None):
    """Mean loss over the batch.

    Squared error and reconstruction sum squared deviations over outputs and
    average over rows; ``mask`` (same shape as the output) restricts them to
    selected entries. Cross-entropy is the mean negative log-softmax of the
    true class.
    """
    x = _check_x(net, x)
    y = _check_targets(net, y, kind, x.shape[0])
    out, _ = _forward_cache(net, x)
    return float(_loss_from_output(out, y, kind, mask)[0])


def loss_and_grad(net, x, y, kind="squared_error", mask=None):
    x = _check_x(net, x)
    y = _check_targets(net, y, kind, x.shape[0])
    out, hs = _forward_cache(net, x)
    value, g = _loss_from_output(out, y, kind, mask)

    n_layers = len(net.weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers
    d_skip = x.T @ g
    gh = g
    for i in range(n_layers - 1, -1, -1):
        h_prev = hs[i]
        d_w[i] = h_prev.T @ gh
        d_b[i] = gh.sum(axis=0)
        if i > 0:
            gh = (gh @ net.weights[i].T) * (h_prev > 0)
    return float(value), Gradients(d_skip, d_w, d_b)


def backward(net, x, y, kind="squared_error", mask=None):
    return loss_and_grad(net, x, y, kind, mask)[1]


def predict(net, x, kind):
    out = forward(net, x)
    if kind == "cross_entropy":
        return np.argmax(out, axis=1)
    if out.shape[1] == 1 and kind == "squared_error":
        return out[:, 0]
    return out


# ---------------------------------------------------------------------------
# Snapshots
#
# A snapshot is an uncompressed .npz archive with these members:
#   header   JSON string: {"format": "lassonet-snapshot", "version": 1,
#            "arch": [d, h1, ..., k_out], "activation": "relu",
#            "params": ["skip", "W0", "b0", "W1", "b1", ...]}
#   skip     (d, k_out) float64
#   W<i>, b<i>  weight and bias of layer i, float64
# Arrays are stored verbatim, so load(save(net)) reproduces every bit. Zip
# entries carry a fixed timestamp so equal models give equal files.

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(a):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(a), allow_pickle=False)
    return buf.getvalue()


def save_snapshot(net, path_or_file):
    names = ["skip"]
    arrays = {"skip": net.skip}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
        names.extend((f"W{i}", f"b{i}"))
    header = {
        "format": "lassonet-snapshot",
        "version": SNAPSHOT_VERSION,
        "arch": list(net.arch),
        "activation": net.activation,
        "params": names,
    }
    members = {"header": np.array(json.dumps(header, sort_keys=True)), **arrays}
    with zipfile.ZipFile(path_or_file, "w", zipfile.ZIP_STORED) as zf:
        for name, a in members.items():
            zf.writestr(zipfile.ZipInfo(name + ".npy", _ZIP_DATE), _npy_bytes(a))


def snapshot_bytes(net):
    buf = io.BytesIO()
    save_snapshot(net, buf)
    return buf.getvalue()


def load_snapshot(path_or_file):
    with np.load(path_or_file, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != "lassonet-snapshot" or header.get("version") != SNAPSHOT_VERSION:
            raise ContractError(f"unsupported snapshot header {header}")
        n_layers = len(header["arch"]) - 1
        weights = [z[f"W{i}"].copy() for i in range(n_layers)]
        biases = [z[f"b{i}"].copy() for i in range(n_layers)]
        net = ResidualNet(z["skip"].copy(), weights, biases, header["activation"])
    if list(net.arch) != header["arch"]:
        raise ContractError("snapshot arrays do not match declared architecture")
    return net
