"""Model registry, forward/backward passes, evaluation, and checkpoints.

A model is a flat parameter vector plus an immutable architecture spec.
The loss head is fused softmax cross-entropy in the numerically stable
log-sum-exp form; the mean over the batch is reported and differentiated.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2, ReLU


class UnknownArchitectureError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Raised when a forward pass produces a non-finite loss."""


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple
    classes: int
    layers: tuple
    offsets: tuple = field(init=False)
    param_count: int = field(init=False)

    def __post_init__(self):
        offsets = []
        pos = 0
        for layer in self.layers:
            offsets.append((pos, pos + layer.n_params))
            pos += layer.n_params
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "param_count", pos)


def _paper_cnn():
    # conv 3x3x32 -> conv 3x3x64 -> pool 2x2 -> drop .25 -> dense 128
    # -> drop .5 -> dense 10, valid padding, stride 1: 1,199,882 params.
    return ModelSpec(
        name="paper-cnn",
        input_shape=(28, 28, 1),
        classes=10,
        layers=(
            Conv2D(3, 3, 1, 32),
            ReLU(),
            Conv2D(3, 3, 32, 64),
            ReLU(),
            MaxPool2(),
            Dropout(0.25),
            Flatten(),
            Dense(12 * 12 * 64, 128),
            ReLU(),
            Dropout(0.5),
            Dense(128, 10),
        ),
    )


def _mlp_small():
    return ModelSpec(
        name="mlp-small",
        input_shape=(28, 28, 1),
        classes=10,
        layers=(Flatten(), Dense(784, 128), ReLU(), Dense(128, 10)),
    )


ARCHITECTURES = {"paper-cnn": _paper_cnn, "mlp-small": _mlp_small}


def get_spec(name):
    try:
        return ARCHITECTURES[name]()
    except KeyError:
        raise UnknownArchitectureError(
            f"unknown architecture {name!r}; known: {sorted(ARCHITECTURES)}"
        ) from None


@dataclass
class ModelState:
    spec: ModelSpec
    params: np.ndarray

    @property
    def param_count(self):
        return len(self.params)

    def copy(self):
        return ModelState(self.spec, self.params.copy())


def build_model(arch, init_seed, dtype=np.float32):
    """Deterministically initialized model; same seed gives identical params."""
    spec = arch if isinstance(arch, ModelSpec) else get_spec(arch)
    rng = np.random.default_rng(init_seed)
    params = np.zeros(spec.param_count, dtype=dtype)
    for layer, (lo, hi) in zip(spec.layers, spec.offsets):
        if layer.n_params:
            layer.init_params(params[lo:hi], rng)
    return ModelState(spec, params)


def _check_inputs(model, inputs):
    if inputs.ndim != 4 or inputs.shape[1:] != model.spec.input_shape:
        raise ShapeMismatchError(
            f"input shape {inputs.shape[1:]} does not match "
            f"spec input shape {model.spec.input_shape}"
        )


def _run_layers(model, inputs, train, dropout_seed):
    x = inputs.astype(model.params.dtype, copy=False)
    drop_rng = np.random.default_rng(dropout_seed) if train else None
    caches = []
    for layer, (lo, hi) in zip(model.spec.layers, model.spec.offsets):
        x, cache = layer.forward(x, model.params[lo:hi], train, drop_rng)
        caches.append(cache)
    return x, caches


def _loss_from_logits(logits, labels):
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(len(labels)), labels]))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    return loss, lse


def forward(model, inputs, labels=None, *, train=False, dropout_seed=0):
    """Run the network; returns (logits, mean cross-entropy or None)."""
    _check_inputs(model, inputs)
    logits, _ = _run_layers(model, inputs, train, dropout_seed)
    if labels is None:
        return logits, None
    loss, _ = _loss_from_logits(logits, labels)
    return logits, loss


def backward(model, inputs, labels, *, train=True, dropout_seed=0):
    """Gradient of the mean batch loss w.r.t. the flat parameter vector."""
    _check_inputs(model, inputs)
    logits, caches = _run_layers(model, inputs, train, dropout_seed)
    loss, lse = _loss_from_logits(logits, labels)
    probs = np.exp(logits - lse[:, None])
    dz = probs.astype(model.params.dtype)
    dz[np.arange(len(labels)), labels] -= 1.0
    dz /= len(labels)
    grad = np.zeros_like(model.params)
    for layer, (lo, hi), cache in zip(
        reversed(model.spec.layers), reversed(model.spec.offsets), reversed(caches)
    ):
        dz = layer.backward(dz, model.params[lo:hi], grad[lo:hi], cache)
    return loss, grad


def softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray  # [true, predicted] counts


def evaluate(model, images, labels, batch_size=512):
    """Eval-mode accuracy, mean loss, and confusion matrix over a dataset.

    Argmax ties resolve to the lowest class index. Never mutates the model.
    """
    if len(labels) == 0:
        raise ValueError("evaluation set is empty")
    classes = model.spec.classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    total_loss = 0.0
    for start in range(0, len(labels), batch_size):
        x = images[start : start + batch_size]
        y = labels[start : start + batch_size]
        logits, loss = forward(model, x, y, train=False)
        pred = logits.argmax(axis=1)
        np.add.at(confusion, (y, pred), 1)
        total_loss += loss * len(y)
    accuracy = float(np.trace(confusion) / confusion.sum())
    return EvalResult(accuracy, total_loss / len(labels), confusion)


# Checkpoint layout (little-endian):
#   magic "CFCK" | u16 arch-name length | arch name (utf-8)
#   | 4-byte precision tag ("f32\0" / "f64\0") | u64 param count
#   | raw parameter array, little-endian floats.
_MAGIC = b"CFCK"
_PREC = {"f32": "<f4", "f64": "<f8"}


def save_checkpoint(model, path):
    prec = "f32" if model.params.dtype == np.float32 else "f64"
    name = model.spec.name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sH", _MAGIC, len(name)))
        fh.write(name)
        fh.write(struct.pack("<4sQ", prec.encode() + b"\0", model.param_count))
        fh.write(np.ascontiguousarray(model.params, dtype=_PREC[prec]).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic, name_len = struct.unpack("<4sH", fh.read(6))
        if magic != _MAGIC:
            raise ValueError(f"not a cyclefed checkpoint (magic {magic!r})")
        name = fh.read(name_len).decode("utf-8")
        prec_raw, count = struct.unpack("<4sQ", fh.read(12))
        prec = prec_raw.rstrip(b"\0").decode()
        if prec not in _PREC:
            raise ValueError(f"unknown precision tag {prec!r}")
        spec = get_spec(name)
        if count != spec.param_count:
            raise ValueError(
                f"checkpoint has {count} params, {name} expects {spec.param_count}"
            )
        raw = fh.read(count * int(_PREC[prec][-1]))
        params = np.frombuffer(raw, dtype=_PREC[prec], count=count)
    dtype = np.float32 if prec == "f32" else np.float64
    return ModelState(spec, params.astype(dtype))
