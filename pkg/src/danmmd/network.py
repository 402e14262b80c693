"""Dense feedforward network: forward pass, backpropagation, momentum SGD.

Parameters live in a :class:`Network` (layer specs plus weight/bias arrays).
The backward pass accepts extra gradients on any layer's post-activation
output, which is how distribution-matching penalties on hidden
representations are folded into a single reverse sweep.
"""

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._validation import check_labels
from .exceptions import InputError, NumericError, ParameterError, ParseError

PROB_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"DANNET\x00\x01"
CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    RECTIFIER = "rectifier"
    SOFTMAX = "softmax"
    IDENTITY = "identity"


class Trainability(str, Enum):
    FROZEN = "frozen"
    FINETUNE = "finetune"
    TRAIN_SCRATCH = "train_scratch"


_DEFAULT_LR_MULT = {
    Trainability.FROZEN: 1.0,
    Trainability.FINETUNE: 1.0,
    Trainability.TRAIN_SCRATCH: 10.0,
}
_ACT_CODES = list(Activation)
_TRAIN_CODES = list(Trainability)


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: Activation = Activation.RECTIFIER
    trainability: Trainability = Trainability.FINETUNE
    lr_multiplier: float = None

    def __post_init__(self):
        if int(self.input_width) < 1 or int(self.output_width) < 1:
            raise ParameterError("layer widths must be positive")
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "trainability", Trainability(self.trainability))
        mult = self.lr_multiplier
        if mult is None:
            mult = _DEFAULT_LR_MULT[self.trainability]
        if not mult > 0:
            raise ParameterError("lr_multiplier must be > 0")
        object.__setattr__(self, "lr_multiplier", float(mult))


@dataclass
class Network:
    """Layer specs and parameters ``[(W, b), ...]`` with ``W`` of shape (out, in)."""

    specs: list
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if not self.specs:
            raise ParameterError("a network needs at least one layer")
        for i, spec in enumerate(self.specs):
            if spec.activation is Activation.SOFTMAX and i != len(self.specs) - 1:
                raise ParameterError("softmax is only allowed on the final layer")
            if i and spec.input_width != self.specs[i - 1].output_width:
                raise ParameterError(f"layer {i} input width does not chain")
        if self.weights:
            for spec, W, b in zip(self.specs, self.weights, self.biases, strict=True):
                if W.shape != (spec.output_width, spec.input_width) or b.shape != (spec.output_width,):
                    raise ParameterError("parameter shapes do not match layer specs")

    @classmethod
    def initialize(cls, specs, seed=0):
        """Uniform ``U(-1/sqrt(in), 1/sqrt(in))`` weights and zero biases."""
        rng = np.random.Generator(np.random.PCG64(seed))
        weights, biases = [], []
        for spec in specs:
            bound = 1.0 / np.sqrt(spec.input_width)
            weights.append(rng.uniform(-bound, bound, size=(spec.output_width, spec.input_width)))
            biases.append(np.zeros(spec.output_width))
        return cls(list(specs), weights, biases)

    @property
    def n_layers(self):
        return len(self.specs)

    @property
    def input_width(self):
        return self.specs[0].input_width

    def copy(self):
        return Network(list(self.specs), [W.copy() for W in self.weights],
                       [b.copy() for b in self.biases])

    def zeros_like(self):
        return [np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases]

    def flat_params(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_flat_params(self, flat):
        """Overwrite parameters in place from a flat vector (layer order, W then b)."""
        pos = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = flat[pos:pos + W.size].reshape(W.shape)
            pos += W.size
            b[...] = flat[pos:pos + b.size]
            pos += b.size


def mlp_specs(input_width, hidden, n_classes, trainability=None):
    """Rectifier hidden layers followed by a softmax classifier.

    By default the first layer is fine-tuned and the rest are trained from
    scratch with a 10x learning-rate multiplier.
    """
    widths = [input_width, *hidden, n_classes]
    n = len(widths) - 1
    if trainability is None:
        trainability = [Trainability.FINETUNE] + [Trainability.TRAIN_SCRATCH] * (n - 1)
    specs = []
    for i in range(n):
        act = Activation.SOFTMAX if i == n - 1 else Activation.RECTIFIER
        specs.append(LayerSpec(widths[i], widths[i + 1], act, trainability[i]))
    return specs


def softmax(Z):
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def _activate(act, Z):
    if act is Activation.RECTIFIER:
        return np.maximum(Z, 0.0)
    if act is Activation.SOFTMAX:
        return softmax(Z)
    return Z


def forward(network, X, return_pre=False):
    """Run the network on one sample or a batch.

    Returns
    -------
    hidden : list of ndarray
        Post-activation output of every layer (the last entry is the output).
    probs : ndarray or None
        Class probabilities when the final layer is softmax, else None.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    H = X.reshape(1, -1) if single else X
    if H.ndim != 2 or H.shape[1] != network.input_width:
        raise InputError(f"input width {H.shape[-1]} does not match network input {network.input_width}")
    hidden, pre = [], []
    for spec, W, b in zip(network.specs, network.weights, network.biases):
        with np.errstate(over="ignore", invalid="ignore"):  # reported just below
            Z = H @ W.T + b
            H = _activate(spec.activation, Z)
        if not np.all(np.isfinite(H)):
            raise NumericError("non-finite activation in forward pass")
        pre.append(Z)
        hidden.append(H)
    probs = hidden[-1] if network.specs[-1].activation is Activation.SOFTMAX else None
    if single:
        hidden = [h[0] for h in hidden]
        pre = [z[0] for z in pre]
        probs = None if probs is None else probs[0]
    if return_pre:
        return hidden, probs, pre
    return hidden, probs


def cross_entropy(probs, label):
    """``-log(max(probs[label], 1e-12))``."""
    probs = np.asarray(probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < probs.shape[-1]:
        raise InputError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def mean_cross_entropy(probs, labels):
    """Mean cross-entropy over rows with ``label >= 0``; 0.0 when none are labeled."""
    labels = np.asarray(labels)
    mask = labels >= 0
    if not mask.any():
        return 0.0
    p = probs[mask, labels[mask]]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def backward(network, X, labels, hidden_grads=None, cache=None):
    """Gradients of mean cross-entropy plus injected hidden-output gradients.

    Parameters
    ----------
    X : ndarray of shape (n, in)
    labels : ndarray of shape (n,)
        Class indices; rows labelled -1 contribute no classification loss.
        The loss is averaged over labelled rows only.
    hidden_grads : dict {layer index: ndarray of shape (n, width)}, optional
        Gradients of an extra loss term w.r.t. layer outputs ``h^l``.
    cache : tuple, optional
        ``forward(network, X, return_pre=True)`` output, to avoid recomputing it.

    Returns
    -------
    grad_W, grad_b : lists of ndarray
        Zero for frozen layers.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    hidden, probs, pre = cache if cache is not None else forward(network, X, return_pre=True)
    n_classes = network.specs[-1].output_width
    labels = check_labels(np.atleast_1d(labels), n_classes, allow_unlabeled=True, name="labels")
    if labels.shape[0] != X.shape[0]:
        raise InputError("labels and X have different lengths")
    hidden_grads = hidden_grads or {}
    for idx, g in hidden_grads.items():
        if not 0 <= idx < network.n_layers or g.shape != hidden[idx].shape:
            raise InputError(f"injected gradient for layer {idx} has wrong shape")

    grad_W, grad_b = network.zeros_like()
    last = network.n_layers - 1
    mask = labels >= 0
    n_labeled = int(mask.sum())

    dH = hidden_grads.get(last)
    spec = network.specs[last]
    if spec.activation is Activation.SOFTMAX:
        P = probs
        dZ = np.zeros_like(P)
        if dH is not None:
            dZ += P * (dH - np.sum(dH * P, axis=1, keepdims=True))
        if n_labeled:
            ce = P[mask].copy()
            ce[np.arange(n_labeled), labels[mask]] -= 1.0
            dZ[mask] += ce / n_labeled
    else:
        dZ = np.zeros_like(hidden[last]) if dH is None else dH.copy()
        if spec.activation is Activation.RECTIFIER:
            dZ *= pre[last] > 0

    for i in range(last, -1, -1):
        H_in = X if i == 0 else hidden[i - 1]
        if network.specs[i].trainability is not Trainability.FROZEN:
            grad_W[i] = dZ.T @ H_in
            grad_b[i] = dZ.sum(axis=0)
        if i == 0:
            break
        dH = dZ @ network.weights[i]
        if i - 1 in hidden_grads:
            dH = dH + hidden_grads[i - 1]
        below = network.specs[i - 1].activation
        if below is Activation.RECTIFIER:
            dZ = dH * (pre[i - 1] > 0)
        else:
            dZ = dH
    for g in grad_W + grad_b:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    return grad_W, grad_b


def inv_schedule(step_index, gamma=0.001, power=0.75):
    """Learning-rate multiplier ``(1 + gamma * t) ** -power``."""
    return (1.0 + gamma * step_index) ** (-power)


def constant_schedule(step_index):
    return 1.0


def sgd_step(network, grads, velocity, step_index, base_lr, momentum=0.9, anneal=inv_schedule):
    """One classical-momentum SGD update ``v <- mu v - lr_l g; theta <- theta + v``.

    Returns a new :class:`Network` and the new velocity; inputs are not modified.
    Frozen layers are copied through untouched.
    """
    grad_W, grad_b = grads
    for g in (*grad_W, *grad_b):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to sgd_step")
    if velocity is None:
        velocity = network.zeros_like()
    vel_W, vel_b = velocity
    scale = base_lr * anneal(step_index)
    new = network.copy()
    new_vW, new_vb = [], []
    for i, spec in enumerate(network.specs):
        if spec.trainability is Trainability.FROZEN:
            new_vW.append(vel_W[i])
            new_vb.append(vel_b[i])
            continue
        lr = scale * spec.lr_multiplier
        vW = momentum * vel_W[i] - lr * grad_W[i]
        vb = momentum * vel_b[i] - lr * grad_b[i]
        new.weights[i] = network.weights[i] + vW
        new.biases[i] = network.biases[i] + vb
        new_vW.append(vW)
        new_vb.append(vb)
    return new, (new_vW, new_vb)


def save_checkpoint(network, path):
    """Write a little-endian binary checkpoint (bit-exact round trip)."""
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(network))


def checkpoint_bytes(network):
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, network.n_layers)]
    for spec, W, b in zip(network.specs, network.weights, network.biases):
        parts.append(struct.pack(
            "<IIBBd", spec.input_width, spec.output_width,
            _ACT_CODES.index(spec.activation), _TRAIN_CODES.index(spec.trainability),
            spec.lr_multiplier,
        ))
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ParseError("not a network checkpoint (bad magic)", path=path)
    version, n_layers = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path=path)
    pos = 16
    specs, weights, biases = [], [], []
    head = struct.calcsize("<IIBBd")
    try:
        for _ in range(n_layers):
            n_in, n_out, act, train, mult = struct.unpack_from("<IIBBd", data, pos)
            pos += head
            W = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=pos).reshape(n_out, n_in)
            pos += 8 * n_in * n_out
            b = np.frombuffer(data, dtype="<f8", count=n_out, offset=pos)
            pos += 8 * n_out
            specs.append(LayerSpec(n_in, n_out, _ACT_CODES[act], _TRAIN_CODES[train], mult))
            weights.append(W.astype(np.float64))
            biases.append(b.astype(np.float64))
    except (struct.error, ValueError, IndexError) as exc:
        raise ParseError(f"truncated or corrupt checkpoint: {exc}", path=path) from exc
    if pos != len(data):
        raise ParseError("trailing bytes after checkpoint payload", path=path)
    return Network(specs, weights, biases)


def specs_as_dicts(specs):
    return [
        {"input_width": s.input_width, "output_width": s.output_width,
         "activation": s.activation.value, "trainability": s.trainability.value,
         "lr_multiplier": s.lr_multiplier}
        for s in specs
    ]
