"""Pairwise-ranking loss, its stochastic gradients, and the penalized SGD step.

The loss of one (positive, sampled-negative) pair is -ln sigmoid(y_pos -
y_neg), a smooth surrogate of the AUC. For training under the consensus
scheme, each touched entity row additionally carries the L2 term, the dual
term, and the quadratic penalty toward the consensus row; relation weights
carry only the L2 term. Step sizes follow the ADAGRAD policy: per-coordinate
eta / (sqrt(accumulated g^2) + delta), accumulated over the *total* gradient.

These functions are the readable reference surface; the jitted loops in
:mod:`consmrf.kernels` implement the same math for the hot path and are
cross-checked against this module in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import RelationTriples
from .errors import DivergenceError, SaturationError
from .factors import AdagradState, Hyperparams, RelationParams, WeightShape
from .rng import SplitMix64


def sigmoid(x: float) -> float:
    """Logistic function, stable over the whole double range."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def bpr_pair_loss(y_pos: float, y_neg: float) -> float:
    """-ln sigmoid(y_pos - y_neg), computed without overflow."""
    d = y_pos - y_neg
    if d >= 0:
        return math.log1p(math.exp(-d))
    return -d + math.log1p(math.exp(d))


@dataclass
class GradientBundle:
    """Loss gradients of one sampled (s, o, o') pair w.r.t. the touched params."""

    wrt_subject: np.ndarray
    wrt_object: np.ndarray
    wrt_neg_object: np.ndarray
    wrt_weights: np.ndarray      # empty for identity-shaped weights


def bpr_stochastic_gradients(params: RelationParams, s: int, o: int,
                             o_neg: int) -> GradientBundle:
    """Single-pair gradients of the pairwise loss at the current parameters."""
    A = params.entity_factors
    W = params.relation_weights
    a_s = A[s]
    diff = A[o] - A[o_neg]
    d = _pair_score_diff(params, s, o, o_neg)
    c = -sigmoid(-d)
    if params.shape is WeightShape.IDENTITY:
        wrt_subject = c * diff
        wrt_object = c * a_s
        wrt_weights = np.empty(0)
    elif params.shape is WeightShape.DIAGONAL:
        wrt_subject = c * (W * diff)
        wrt_object = c * (a_s * W)
        wrt_weights = c * (a_s * diff)
    else:
        wrt_subject = c * (W @ diff)
        wrt_object = c * (a_s @ W)
        wrt_weights = c * np.outer(a_s, diff)
    return GradientBundle(wrt_subject, wrt_object, -wrt_object, wrt_weights)


def _pair_score_diff(params: RelationParams, s: int, o: int, o_neg: int) -> float:
    A = params.entity_factors
    if params.shape is WeightShape.IDENTITY:
        return float(np.dot(A[s], A[o] - A[o_neg]))
    if params.shape is WeightShape.DIAGONAL:
        return float(np.dot(A[s] * params.relation_weights, A[o] - A[o_neg]))
    return float(A[s] @ params.relation_weights @ (A[o] - A[o_neg]))


def apply_admm_sgd_step(params: RelationParams, grads: GradientBundle,
                        rows: tuple[int, int, int], consensus: np.ndarray,
                        duals: np.ndarray, hp: Hyperparams,
                        ada: AdagradState) -> RelationParams:
    """Apply one penalized SGD update for the rows (s, o, o') and the weights.

    `grads` must have been computed at the current parameter values. Rows are
    updated in order s, o, o'; with aliased rows the updates accumulate
    sequentially, matching the kernels.
    """
    A = params.entity_factors
    s, o, o_neg = rows
    for row, g in ((s, grads.wrt_subject), (o, grads.wrt_object),
                   (o_neg, grads.wrt_neg_object)):
        total = (g + hp.lam * A[row] + duals[row]
                 + hp.rho * (A[row] - consensus[row]))
        if not np.all(np.isfinite(total)):
            raise DivergenceError(detail=f"entity row {row}")
        ada.entity_acc[row] += total * total
        A[row] -= hp.eta * total / (np.sqrt(ada.entity_acc[row]) + ada.delta)
    if params.shape is not WeightShape.IDENTITY:
        W = params.relation_weights
        total = grads.wrt_weights.reshape(W.shape) + hp.lam * W
        if not np.all(np.isfinite(total)):
            raise DivergenceError(detail="relation weights")
        ada.weight_acc += (total * total).reshape(-1)
        W -= hp.eta * total / (np.sqrt(ada.weight_acc).reshape(W.shape) + ada.delta)
    return params


def estimate_relation_loss(triples: RelationTriples, params: RelationParams,
                           rng: SplitMix64, n_samples: int,
                           scope_keys: np.ndarray | None = None) -> float:
    """Monte-Carlo estimate of the mean pairwise loss over one relation.

    Positives are drawn uniformly from `triples`; negatives by rejection
    against `scope_keys` (default: the relation's own pairs, i.e. train-only
    scope when given the training split). Deterministic given the stream.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if len(triples) == 0:
        raise ValueError("cannot estimate the loss of an empty relation")
    keys = triples.sorted_keys if scope_keys is None else scope_keys
    state, loss, status = kernels.estimate_bpr_loss(
        params.entity_factors, params.weights_flat(), params.shape.code,
        triples.subjects, triples.objects, keys,
        np.int64(triples.n_entities), np.int64(n_samples),
        np.uint64(rng.state))
    rng.state = int(state)
    if status == kernels.SATURATED:
        raise SaturationError()
    return float(loss)
