"""Gradient checks of every loss composed through the encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import DENOMINATOR_MODES, LOSS_KINDS, MARGIN_MODES, ContrastiveBatch, LossConfig, compute_loss, loss_and_grad, random_batch
from .numerics import encoder_backward, encoder_forward, finite_difference_check, init_encoder


@dataclass
class GradSweepResult:
    max_relative_error: float
    checks: int
    worst: tuple


def encoder_loss_gradcheck(rng, kind: str, cfg: LossConfig, activation: str = "tanh", step: float = 1e-5):
    """Finite-difference check of d loss(encoder(X)) / d theta for one random draw."""
    n = int(rng.integers(4, 9))
    d_in, d_hidden, d_out = (int(rng.integers(2, 6)) for _ in range(3))
    enc = init_encoder((d_in, d_hidden, d_out), activation, True, seed=rng)
    enc.biases = [rng.normal(scale=0.3, size=b.shape) for b in enc.biases]
    X = rng.normal(size=(n, d_in))
    template = random_batch(rng, n, dim=d_out, all_anchors=bool(rng.integers(2)))

    def batch_for(E):
        return ContrastiveBatch(E, template.positives, template.negatives, template.anchors)

    def loss_of(theta):
        return compute_loss(batch_for(encoder_forward(enc.with_flat(theta), X)), cfg, kind).scalar

    _, dE = loss_and_grad(batch_for(encoder_forward(enc, X)), cfg, kind)
    grads, _ = encoder_backward(enc, X, dE)
    return finite_difference_check(loss_of, enc.flat(), grads.flat(), step)


def gradcheck_sweep(n_configs: int = 20, seed: int = 0, temperature: float = 0.07, step: float = 1e-5) -> GradSweepResult:
    """Run ``n_configs`` random draws for every loss kind and mode pair."""
    rng = np.random.default_rng(seed)
    worst, count, where = 0.0, 0, ()
    for c in range(n_configs):
        m = float(rng.uniform(0.0, 0.5))
        alpha = float(rng.uniform(0.0, 0.5))
        for den in DENOMINATOR_MODES:
            for mode in MARGIN_MODES:
                for reduction in ("sum", "mean"):
                    cfg = LossConfig(temperature, m, alpha, den, mode, reduction)
                    for kind in LOSS_KINDS:
                        report = encoder_loss_gradcheck(rng, kind, cfg, step=step)
                        count += 1
                        if report.max_relative_error > worst:
                            worst = report.max_relative_error
                            where = (c, kind, den, mode, reduction)
    return GradSweepResult(worst, count, where)
