"""Shared test oracles and dataset builders.

The oracles here are deliberately independent of the library's hot paths:
finite differences for gradients, dense triple loops for scores, exhaustive
enumeration for losses.
"""
from __future__ import annotations

import numpy as np

from consmrf.dataset import MultiRelationalDataset
from consmrf.factors import RelationParams, WeightShape
from consmrf.objective import bpr_pair_loss


def dense_score(a_s: np.ndarray, w: np.ndarray, a_o: np.ndarray) -> float:
    """Triple-loop bilinear form; the reference for every score path."""
    k = a_s.shape[0]
    total = 0.0
    for f in range(k):
        for g in range(k):
            total += a_s[f] * w[f, g] * a_o[g]
    return total


def as_full_matrix(params: RelationParams) -> np.ndarray:
    k = params.k
    if params.shape is WeightShape.IDENTITY:
        return np.eye(k)
    if params.shape is WeightShape.DIAGONAL:
        return np.diag(params.relation_weights)
    return params.relation_weights


def random_params(rng: np.random.Generator, n_entities: int, k: int,
                  shape: WeightShape) -> RelationParams:
    a = rng.standard_normal((n_entities, k))
    w = rng.standard_normal(shape.param_shape(k))
    return RelationParams(a, w, shape)


def pair_loss_at(params: RelationParams, s: int, o: int, o_neg: int) -> float:
    from consmrf.factors import score
    return bpr_pair_loss(score(params, s, o), score(params, s, o_neg))


def fd_gradients(params: RelationParams, s: int, o: int, o_neg: int,
                 h: float = 1e-5):
    """Central finite differences of the pair loss w.r.t. every touched param.

    Returns (d_as, d_ao, d_ao_neg, d_w) with d_w shaped like the weights.
    """
    def diff_entry(arr, index):
        orig = arr[index]
        arr[index] = orig + h
        up = pair_loss_at(params, s, o, o_neg)
        arr[index] = orig - h
        down = pair_loss_at(params, s, o, o_neg)
        arr[index] = orig
        return (up - down) / (2.0 * h)

    A = params.entity_factors
    k = params.k
    d_as = np.array([diff_entry(A, (s, f)) for f in range(k)])
    d_ao = np.array([diff_entry(A, (o, f)) for f in range(k)])
    d_an = np.array([diff_entry(A, (o_neg, f)) for f in range(k)])
    W = params.relation_weights
    d_w = np.array([diff_entry(W, idx) for idx in np.ndindex(W.shape)]).reshape(W.shape)
    return d_as, d_ao, d_an, d_w


def max_rel_error(analytic: np.ndarray, reference: np.ndarray,
                  floor: float = 1e-3) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float(np.max(np.abs(analytic - reference) / denom))


def build_dataset(n_entities: int, relation_triples: dict[str, list[tuple[int, int]]],
                  ) -> MultiRelationalDataset:
    """Small dataset from {relation name: [(s, o), ...]}."""
    entity_names = [f"e{i}" for i in range(n_entities)]
    relation_names = list(relation_triples)
    triples = [(s, r, o) for r, name in enumerate(relation_names)
               for s, o in relation_triples[name]]
    return MultiRelationalDataset.from_triples(entity_names, relation_names, triples)


def exact_bpr_loss(ds: MultiRelationalDataset, r: int, params: RelationParams) -> float:
    """Exhaustive expectation of the sampled pair loss for one relation.

    Positives are drawn uniformly, then a negative uniformly from the
    subject's unlinked objects, so the expectation weights each positive by
    1/|D_r| and each of its negatives by 1/|unlinked(s)|.
    """
    rel = ds.relations[r]
    total = 0.0
    for s, o in rel.pairs():
        unlinked = [o2 for o2 in range(ds.n_entities) if not rel.contains(s, o2)]
        inner = sum(pair_loss_at(params, s, o, o2) for o2 in unlinked)
        total += inner / len(unlinked)
    return total / len(rel)
