"""Small dense network with hand-written reverse-mode differentiation.

The network exists to produce per-logit parameter gradients, the rows of
the gradient feature matrices everything downstream consumes. The backward
pass is written out explicitly (no autodiff framework) and is checked in
the test suite against central finite differences and against the chain
rule applied to full loss gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimMismatch,
    Divergence,
    EmptyInput,
    InputError,
    ShapeMismatch,
)

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("squared", "cross_entropy")

RAW_PARAMS = "raw_params"
SKETCHED = "sketched"


@dataclass(frozen=True)
class MlpParams:
    """Flattened parameters of a fully connected network.

    Layout: per layer, weight matrix of shape (fan_out, fan_in) in row-major
    order followed by the bias vector. The final layer is affine; hidden
    layers apply the activation element-wise.
    """

    layer_sizes: tuple[int, ...]
    theta: np.ndarray
    activation: str = "tanh"

    @property
    def param_count(self) -> int:
        return int(self.theta.size)

    @property
    def class_count(self) -> int:
        return int(self.layer_sizes[-1])

    @property
    def input_dim(self) -> int:
        return int(self.layer_sizes[0])

    def with_theta(self, theta: np.ndarray) -> "MlpParams":
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise DimMismatch(
                f"theta must have shape {self.theta.shape}, got {theta.shape}")
        return MlpParams(self.layer_sizes, theta, self.activation)


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray  # (n, d_in)
    labels: np.ndarray  # (n,) integer class ids
    class_count: int

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class GradientFeatures:
    """Per-logit gradient rows for a sample set.

    per_class[c] stacks phi^c(x_i) as rows, one n x width matrix per class.
    dim_kind records whether the rows live in raw parameter space or in a
    sketched subspace; the two must never be mixed downstream.
    """

    per_class: np.ndarray  # (C, n, width)
    labels: np.ndarray  # (n, C) one-hot or soft targets
    dim_kind: str
    model_logits: np.ndarray  # (n, C)

    @property
    def class_count(self) -> int:
        return int(self.per_class.shape[0])

    @property
    def size(self) -> int:
        return int(self.per_class.shape[1])

    @property
    def width(self) -> int:
        return int(self.per_class.shape[2])


def param_count(layer_sizes) -> int:
    sizes = tuple(int(s) for s in layer_sizes)
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def _validate_layer_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise InputError("layer_sizes needs at least input and output widths")
    if any(s < 1 for s in sizes):
        raise InputError(f"layer widths must be positive, got {sizes}")
    return sizes


def init_params(layer_sizes, seed: int, activation: str = "tanh") -> MlpParams:
    """Seeded scaled-uniform init: W ~ U(-1, 1) / sqrt(fan_in), biases zero."""
    sizes = _validate_layer_sizes(layer_sizes)
    if activation not in ACTIVATIONS:
        raise InputError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.uniform(-1.0, 1.0, size=(fan_out, fan_in)) / np.sqrt(fan_in)
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    return MlpParams(layer_sizes=sizes, theta=np.concatenate(chunks), activation=activation)


def _unpack(params: MlpParams):
    """Views of theta as (weight, bias) pairs; no copies."""
    sizes = params.layer_sizes
    out = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params.theta[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = params.theta[pos : pos + fan_out]
        pos += fan_out
        out.append((w, b))
    return out


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def forward(params: MlpParams, x) -> np.ndarray:
    """Logits (pre-softmax) for a single input."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 1 or xv.size != params.input_dim:
        raise DimMismatch(f"expected input of length {params.input_dim}, got shape {xv.shape}")
    return forward_batch(params, xv[None, :])[0]


def forward_batch(params: MlpParams, x_batch) -> np.ndarray:
    xb = np.asarray(x_batch, dtype=np.float64)
    if xb.ndim != 2 or xb.shape[1] != params.input_dim:
        raise DimMismatch(f"expected (n, {params.input_dim}) inputs, got shape {xb.shape}")
    layers = _unpack(params)
    a = xb
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        a = _act(z, params.activation) if i < len(layers) - 1 else z
    return a


def _forward_trace(params: MlpParams, xb: np.ndarray):
    """Forward pass keeping activations and pre-activations for backprop."""
    layers = _unpack(params)
    acts = [xb]
    pres = []
    a = xb
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        pres.append(z)
        a = _act(z, params.activation) if i < len(layers) - 1 else z
        acts.append(a)
    return layers, acts, pres


def per_logit_gradient(params: MlpParams, x) -> np.ndarray:
    """Jacobian of the logits with respect to theta, one row per class.

    Backpropagates the C x C identity through the network, so a single
    forward pass yields all C gradient rows at once.
    """
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 1 or xv.size != params.input_dim:
        raise DimMismatch(f"expected input of length {params.input_dim}, got shape {xv.shape}")
    jac = batch_logit_jacobian(params, xv[None, :])
    return jac[0]


def batch_logit_jacobian(params: MlpParams, x_batch) -> np.ndarray:
    """Per-logit gradients for a batch, shape (n, C, P)."""
    xb = np.asarray(x_batch, dtype=np.float64)
    if xb.ndim != 2 or xb.shape[1] != params.input_dim:
        raise DimMismatch(f"expected (n, {params.input_dim}) inputs, got shape {xb.shape}")
    layers, acts, pres = _forward_trace(params, xb)
    n = xb.shape[0]
    c = params.class_count
    grads = np.empty((n, c, params.param_count))

    # dz: (n, C, width of current layer), seeded with the identity at the top
    dz = np.broadcast_to(np.eye(c), (n, c, c)).copy()
    pos = params.param_count
    for i in range(len(layers) - 1, -1, -1):
        w, b = layers[i]
        fan_out, fan_in = w.shape
        pos -= fan_out
        grads[:, :, pos : pos + fan_out] = dz
        pos -= fan_out * fan_in
        # dW[c, o, i] = dz[c, o] * a[i]
        gw = dz[:, :, :, None] * acts[i][:, None, None, :]
        grads[:, :, pos : pos + fan_out * fan_in] = gw.reshape(n, c, fan_out * fan_in)
        if i > 0:
            da = dz @ w  # (n, C, fan_in)
            dz = da * _act_grad(pres[i - 1], params.activation)[:, None, :]
    assert pos == 0
    return grads


# ------------------------------------------------------------------ losses

def one_hot(labels, class_count: int) -> np.ndarray:
    ids = np.asarray(labels)
    if ids.ndim != 1:
        raise ShapeMismatch(f"labels must be 1-d class ids, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= class_count:
        raise DimMismatch(f"class id out of range for {class_count} classes")
    out = np.zeros((ids.size, class_count))
    out[np.arange(ids.size), ids] = 1.0
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _target_vector(y, class_count: int) -> np.ndarray:
    yv = np.asarray(y, dtype=np.float64)
    if yv.ndim == 0:
        vec = np.zeros(class_count)
        vec[int(yv)] = 1.0
        return vec
    if yv.shape != (class_count,):
        raise ShapeMismatch(f"target must be a class id or length-{class_count} vector")
    return yv


def loss_logit_gradient(logits: np.ndarray, y, loss: str) -> np.ndarray:
    """Gradient of the loss with respect to the logits."""
    if loss not in LOSSES:
        raise InputError(f"loss must be one of {LOSSES}, got {loss!r}")
    target = _target_vector(y, logits.shape[-1])
    if loss == "squared":
        return 2.0 * (logits - target)
    return _softmax(logits) - target


def loss_param_gradient(params: MlpParams, x, y, loss: str) -> np.ndarray:
    """Gradient of the loss wrt theta via one backward pass seeded with delta."""
    xv = np.asarray(x, dtype=np.float64)
    layers, acts, pres = _forward_trace(params, xv[None, :])
    delta = loss_logit_gradient(acts[-1][0], y, loss)
    grad = np.empty(params.param_count)
    dz = delta[None, :]
    pos = params.param_count
    for i in range(len(layers) - 1, -1, -1):
        w, b = layers[i]
        fan_out, fan_in = w.shape
        pos -= fan_out
        grad[pos : pos + fan_out] = dz[0]
        pos -= fan_out * fan_in
        grad[pos : pos + fan_out * fan_in] = (dz.T @ acts[i]).ravel()
        if i > 0:
            dz = (dz @ w) * _act_grad(pres[i - 1], params.activation)
    return grad


def chain_rule_check(params: MlpParams, x, y, loss: str = "cross_entropy") -> float:
    """Relative gap between the direct loss gradient and sum_c delta_c phi^c.

    Both sides are assembled independently: the left by a single seeded
    backward pass, the right by combining the per-logit gradient rows.
    Returns the absolute gap when the direct gradient is numerically zero.
    """
    direct = loss_param_gradient(params, x, y, loss)
    logits = forward(params, x)
    delta = loss_logit_gradient(logits, y, loss)
    combined = per_logit_gradient(params, x).T @ delta
    gap = np.linalg.norm(direct - combined)
    denom = np.linalg.norm(direct)
    if denom < 1e-14:
        return float(gap)
    return float(gap / denom)


def cross_entropy(params: MlpParams, data: LabeledDataset) -> float:
    logits = forward_batch(params, data.inputs)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(data.size), data.labels].mean())


def mean_accuracy(params: MlpParams, data: LabeledDataset) -> float:
    logits = forward_batch(params, data.inputs)
    return float((logits.argmax(axis=1) == data.labels).mean())


# ---------------------------------------------------------------- datasets

def gen_gaussian_mixture(
    class_count: int, per_class: int, dim: int, spread: float, seed: int
) -> LabeledDataset:
    """Isotropic Gaussian blobs with seeded means, one blob per class.

    Means are standard normal draws, so they are pairwise distinct and the
    blobs separate cleanly whenever spread is small against sqrt(2 * dim).
    Samples are laid out class-major.
    """
    if class_count < 2:
        raise InputError(f"need at least 2 classes, got {class_count}")
    if per_class < 1 or dim < 1:
        raise EmptyInput("per_class and dim must be positive")
    if spread < 0.0:
        raise InputError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(class_count, dim))
    inputs = np.empty((class_count * per_class, dim))
    labels = np.empty(class_count * per_class, dtype=np.intp)
    for c in range(class_count):
        block = slice(c * per_class, (c + 1) * per_class)
        inputs[block] = means[c] + spread * rng.normal(size=(per_class, dim))
        labels[block] = c
    return LabeledDataset(inputs=inputs, labels=labels, class_count=class_count)


# ---------------------------------------------------------------- training

def train_sgd(
    params: MlpParams,
    data: LabeledDataset,
    lr: float,
    epochs: int,
    batch: int,
    seed: int,
    return_history: bool = False,
):
    """Mini-batch SGD on softmax cross-entropy with seeded shuffling.

    epochs = 0 returns an unchanged copy. Raises Divergence as soon as the
    parameters or the epoch loss stop being finite.
    """
    if data.class_count != params.class_count:
        raise DimMismatch("dataset class count does not match the network head")
    if lr <= 0.0 or epochs < 0 or batch < 1:
        raise InputError("need lr > 0, epochs >= 0, batch >= 1")
    theta = params.theta.copy()
    model = replace(params, theta=theta)
    history = []
    rng = np.random.default_rng(seed)
    targets = one_hot(data.labels, data.class_count)
    for _ in range(epochs):
        order = rng.permutation(data.size)
        for start in range(0, data.size, batch):
            idx = order[start : start + batch]
            _sgd_step(model, data.inputs[idx], targets[idx], lr)
        loss = cross_entropy(model, data)
        if not np.isfinite(loss):
            raise Divergence(f"training loss became {loss}")
        history.append(loss)
    if not np.all(np.isfinite(theta)):
        raise Divergence("parameters became non-finite")
    if return_history:
        return model, history
    return model


def _sgd_step(model: MlpParams, xb: np.ndarray, yb: np.ndarray, lr: float) -> None:
    """One in-place SGD update on a mini-batch. Mutates model.theta."""
    layers, acts, pres = _forward_trace(model, xb)
    dz = (_softmax(acts[-1]) - yb) / xb.shape[0]
    pos = model.param_count
    theta = model.theta
    for i in range(len(layers) - 1, -1, -1):
        w, b = layers[i]
        fan_out, fan_in = w.shape
        pos -= fan_out
        theta[pos : pos + fan_out] -= lr * dz.sum(axis=0)
        pos -= fan_out * fan_in
        gw = dz.T @ acts[i]
        if i > 0:
            dz = (dz @ w) * _act_grad(pres[i - 1], model.activation)
        theta[pos : pos + fan_out * fan_in] -= lr * gw.ravel()


# ------------------------------------------------------------- extraction

def extract_features(params: MlpParams, inputs, labels=None, batch: int = 64) -> GradientFeatures:
    """Per-logit gradients, soft labels, and model logits for a sample set.

    labels may be integer class ids (converted to one-hot), an (n, C) soft
    target matrix, or None (falls back to the model logits as targets).
    """
    xb = np.asarray(inputs, dtype=np.float64)
    if xb.ndim != 2 or xb.shape[1] != params.input_dim:
        raise DimMismatch(f"expected (n, {params.input_dim}) inputs, got shape {xb.shape}")
    if xb.shape[0] == 0:
        raise EmptyInput("need at least one sample")
    n = xb.shape[0]
    c = params.class_count
    per_class = np.empty((c, n, params.param_count))
    for start in range(0, n, batch):
        stop = min(start + batch, n)
        jac = batch_logit_jacobian(params, xb[start:stop])
        per_class[:, start:stop, :] = jac.transpose(1, 0, 2)
    logits = forward_batch(params, xb)
    if labels is None:
        soft = logits.copy()
    else:
        lab = np.asarray(labels)
        if lab.ndim == 1:
            soft = one_hot(lab, c)
        elif lab.shape == (n, c):
            soft = lab.astype(np.float64)
        else:
            raise ShapeMismatch(f"labels must be (n,) ids or (n, {c}) matrix")
    return GradientFeatures(
        per_class=per_class, labels=soft, dim_kind=RAW_PARAMS, model_logits=logits
    )
