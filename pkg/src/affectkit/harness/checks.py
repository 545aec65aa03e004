"""Finite-difference gradient verification for layers and losses.

Each named check builds a scalar objective from fresh random inputs,
backpropagates once, then compares the analytic gradient against a
central difference at randomly sampled coordinates. The same battery
backs the ``grad-check`` CLI subcommand and the test suite.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import DiffTensor, GruCell, backward
from ..errors import ConfigError
from ..losses import (
    BatchLabels,
    BatchPredictions,
    LossWeights,
    cce_loss,
    ccc_loss,
    distribution_matching_loss,
    masked_bce_loss,
    multitask_loss,
    soft_target_cce,
)
from ..relatedness import COGNITIVE
from ..types import NUM_AUS, NUM_EXPRESSIONS

GRAD_TOLERANCE = 1e-4
# Floor for the relative-error denominator: coordinates where both
# gradients are this small are compared absolutely, keeping difference
# noise on near-zero gradients from dividing the check to failure.
_DENOM_FLOOR = 1e-4


def max_relative_error(
    objective: Callable[[], DiffTensor],
    params: Sequence[DiffTensor],
    n_points: int = 60,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Worst |analytic - central difference| / max(|a|, |n|, floor).

    ``objective`` must rebuild the scalar loss from the live ``params``
    on every call; n_points coordinates are sampled without replacement
    across the concatenated parameter space.
    """
    loss = objective()
    for p in params:
        p.zero_grad()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    sizes = [p.data.size for p in params]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_points, total), replace=False)

    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        off = int(flat - offsets[which])
        p = params[which]
        orig = p.data.flat[off]
        p.data.flat[off] = orig + eps
        f_plus = float(objective().data)
        p.data.flat[off] = orig - eps
        f_minus = float(objective().data)
        p.data.flat[off] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[which].flat[off])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), _DENOM_FLOOR)
        worst = max(worst, rel)
    return worst


def _tensors(rng, *shapes) -> List[DiffTensor]:
    return [DiffTensor(rng.normal(0.0, 0.7, size=s)) for s in shapes]


def _check_dense(rng, n_points, eps):
    x, w1, b1, w2, b2 = _tensors(rng, (4, 5), (5, 6), (6,), (6, 3), (3,))

    def objective():
        hidden = ad.relu(ad.dense(x, w1, b1))
        out = ad.tanh(ad.dense(hidden, w2, b2))
        return ad.tsum(out * out)

    return max_relative_error(objective, [x, w1, b1, w2, b2], n_points, eps, seed=11)


def _check_gru(rng, n_points, eps):
    cell = GruCell(4, 5, rng)
    xs = _tensors(rng, (3, 4), (3, 4), (3, 4))
    params = xs + list(cell.parameters())

    def objective():
        h = cell.initial_state(3)
        for x in xs:
            h = ad.gru_step(cell, x, h)
        return ad.tsum(h * h)

    return max_relative_error(objective, params, n_points, eps, seed=12)


def _check_dropout_off(rng, n_points, eps):
    x, w, b = _tensors(rng, (5, 6), (6, 4), (4,))

    def objective():
        out = ad.dropout(ad.dense(x, w, b), 0.4, train=False)
        return ad.tsum(ad.sigmoid(out))

    return max_relative_error(objective, [x, w, b], n_points, eps, seed=13)


def _check_ccc(rng, n_points, eps):
    pred = DiffTensor(rng.normal(0.0, 0.5, size=(9, 2)))
    truth = rng.normal(0.0, 0.5, size=(9, 2))

    def objective():
        return ccc_loss(pred, truth)

    return max_relative_error(objective, [pred], n_points, eps, seed=14)


def _check_cce(rng, n_points, eps):
    logits = DiffTensor(rng.normal(0.0, 1.5, size=(8, NUM_EXPRESSIONS)))
    truth = rng.integers(0, NUM_EXPRESSIONS, size=8)

    def objective():
        return cce_loss(logits, truth)

    return max_relative_error(objective, [logits], n_points, eps, seed=15)


def _check_bce(rng, n_points, eps):
    logits = DiffTensor(rng.normal(0.0, 1.5, size=(8, NUM_AUS)))
    targets = rng.integers(0, 2, size=(8, NUM_AUS)).astype(float)
    mask = rng.integers(0, 2, size=(8, NUM_AUS)).astype(float)
    mask[:, 0] = 1.0  # keep every row contributing

    def objective():
        return masked_bce_loss(logits, targets, mask)

    return max_relative_error(objective, [logits], n_points, eps, seed=16)


def _check_multitask(rng, n_points, eps):
    n = 9
    expr_logits = DiffTensor(rng.normal(0.0, 1.0, size=(n, NUM_EXPRESSIONS)))
    au_logits = DiffTensor(rng.normal(0.0, 1.0, size=(n, NUM_AUS)))
    va = DiffTensor(rng.normal(0.0, 0.5, size=(n, 2)))
    has_expr = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0], dtype=float)
    has_au = np.array([0, 0, 0, 1, 1, 1, 0, 0, 0], dtype=float)
    has_va = np.array([0, 0, 0, 0, 0, 0, 1, 1, 1], dtype=float)
    labels = BatchLabels(
        expr=rng.integers(0, NUM_EXPRESSIONS, size=n),
        au_targets=rng.integers(0, 2, size=(n, NUM_AUS)).astype(float),
        au_mask=np.ones((n, NUM_AUS)),
        va=rng.normal(0.0, 0.5, size=(n, 2)),
    )

    def objective():
        preds = BatchPredictions(
            expr_logits=expr_logits,
            au_logits=au_logits,
            va=va,
            has_expr=has_expr,
            has_au=has_au,
            has_va=has_va,
        )
        return multitask_loss(preds, labels, LossWeights(lambda1=0.8, lambda2=1.3))

    return max_relative_error(
        objective, [expr_logits, au_logits, va], n_points, eps, seed=17
    )


def _check_distribution_matching(rng, n_points, eps):
    expr_logits = DiffTensor(rng.normal(0.0, 1.0, size=(6, NUM_EXPRESSIONS)))
    au_logits = DiffTensor(rng.normal(0.0, 1.0, size=(6, NUM_AUS)))

    def objective():
        return distribution_matching_loss(
            ad.softmax(expr_logits, axis=1), ad.sigmoid(au_logits), COGNITIVE
        )

    return max_relative_error(objective, [expr_logits, au_logits], n_points, eps, seed=18)


def _check_soft_target(rng, n_points, eps):
    logits = DiffTensor(rng.normal(0.0, 1.0, size=(6, NUM_EXPRESSIONS)))
    raw = rng.random((6, NUM_EXPRESSIONS))
    soft = raw / raw.sum(axis=1, keepdims=True)

    def objective():
        return soft_target_cce(ad.softmax(logits, axis=1), soft)

    return max_relative_error(objective, [logits], n_points, eps, seed=19)


CHECKS: Dict[str, Callable] = {
    "layer.dense": _check_dense,
    "layer.gru": _check_gru,
    "layer.dropout_off": _check_dropout_off,
    "loss.ccc": _check_ccc,
    "loss.cce": _check_cce,
    "loss.masked_bce": _check_bce,
    "loss.multitask": _check_multitask,
    "loss.distribution_matching": _check_distribution_matching,
    "loss.soft_target_cce": _check_soft_target,
}


def run_grad_checks(
    names: Optional[Sequence[str]] = None,
    n_points: int = 60,
    eps: float = 1e-5,
    seed: int = 0,
) -> Dict[str, float]:
    """Run the named checks (all by default); returns name -> worst error."""
    if names is None:
        names = list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown gradient checks: {unknown}")
    results: Dict[str, float] = {}
    for name in names:
        rng = np.random.default_rng([seed, sum(name.encode())])
        results[name] = CHECKS[name](rng, n_points, eps)
    return results
