"""Minibatch SGD with classical (heavy-ball) momentum."""

from dataclasses import dataclass

import numpy as np

from .model import backward


@dataclass
class OptimizerState:
    lr: float
    momentum: float
    velocity: np.ndarray

    @classmethod
    def fresh(cls, lr, momentum, model):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        return cls(lr, momentum, np.zeros_like(model.params))


def sgd_step(model, opt, grad):
    """velocity <- beta * velocity + grad; params <- params - lr * velocity."""
    opt.velocity *= opt.momentum
    opt.velocity += grad
    model.params -= opt.lr * opt.velocity


def sgd_epochs(model, inputs, labels, opt, *, epochs, batch_size, epoch_seed):
    """Train in place for `epochs` passes; returns final-epoch mean loss.

    Each epoch reshuffles with a generator from ``epoch_seed(epoch)``; the
    same generator supplies per-batch dropout seeds, so the whole pass is
    a pure function of the seed lineage.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    n = len(labels)
    final_loss = 0.0
    for epoch in range(epochs):
        g = np.random.default_rng(epoch_seed(epoch))
        perm = g.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            dropout_seed = int(g.integers(0, 2**63))
            loss, grad = backward(
                model, inputs[idx], labels[idx], dropout_seed=dropout_seed
            )
            sgd_step(model, opt, grad)
            total += loss * len(idx)
        final_loss = total / n
    return final_loss
