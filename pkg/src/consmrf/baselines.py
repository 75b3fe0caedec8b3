"""Baselines trained with the same pairwise-ranking SGD machinery.

`train_cd` is complete sharing: one entity-factor matrix for every relation
(canonical decomposition when the weights are diagonal). `train_dmf` learns
one entity-factor matrix per target relation, regularized by weighted loss
terms over all other relations, so each target's worker iterates over the
whole dataset: per-round cost grows linearly with the relation count (and the
parameter count quadratically), which is exactly what the consensus trainer
avoids.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import MultiRelationalDataset, SplitDataset
from .errors import DivergenceError, SaturationError
from .factors import Hyperparams, RelationParams, WeightShape, score_candidates
from .objective import estimate_relation_loss
from .rng import STREAM_LOSS, STREAM_PICK, STREAM_TRAIN, SplitMix64, derive_seed
from .trainer import CurveRow, check_convergence, _worker_assignment, _run_phases


@dataclass
class SharedModel:
    """One entity-factor matrix shared by all relations, one weight set each."""

    kind = "cd"

    entity_factors: np.ndarray
    relation_weights: list[np.ndarray]
    shape: WeightShape
    hp: Hyperparams
    rounds: int = 0
    curve: list[CurveRow] = field(default_factory=list)

    @property
    def n_entities(self) -> int:
        return self.entity_factors.shape[0]

    def relation_params(self, r: int) -> RelationParams:
        return RelationParams(self.entity_factors, self.relation_weights[r], self.shape)

    def score_candidates(self, r: int, s: int, objects) -> np.ndarray:
        return score_candidates(self.relation_params(r), s, objects)

    def n_parameters(self) -> int:
        n_e, k = self.entity_factors.shape
        return n_e * k + len(self.relation_weights) * self.shape.n_params(k)


@dataclass
class DmfModel:
    """Per-target entity factors; weights W[t][r] for every (target, relation).

    Predictions for target t use entity_factors[t] and relation_weights[t][t];
    the off-target weights only regularize during training.
    """

    kind = "dmf"

    entity_factors: list[np.ndarray]
    relation_weights: list[list[np.ndarray]]
    shape: WeightShape
    hp: Hyperparams
    rounds: int = 0
    curve: list[CurveRow] = field(default_factory=list)

    @property
    def n_entities(self) -> int:
        return self.entity_factors[0].shape[0]

    def target_params(self, t: int) -> RelationParams:
        return RelationParams(self.entity_factors[t], self.relation_weights[t][t],
                              self.shape)

    def score_candidates(self, r: int, s: int, objects) -> np.ndarray:
        return score_candidates(self.target_params(r), s, objects)

    def n_parameters(self) -> int:
        n_e, k = self.entity_factors[0].shape
        r = len(self.entity_factors)
        return r * n_e * k + r * r * self.shape.n_params(k)


def init_cd_model(n_entities: int, n_relations: int, hp: Hyperparams,
                  shape: WeightShape = WeightShape.DIAGONAL) -> SharedModel:
    rng = np.random.default_rng(hp.seed)
    entity_factors = hp.sigma_init * rng.standard_normal((n_entities, hp.k))
    weights = [hp.sigma_init * rng.standard_normal(shape.param_shape(hp.k))
               for _ in range(n_relations)]
    return SharedModel(entity_factors, weights, shape, hp)


def init_dmf_model(n_entities: int, n_relations: int, hp: Hyperparams,
                   shape: WeightShape = WeightShape.DIAGONAL) -> DmfModel:
    rng = np.random.default_rng(hp.seed)
    entity_factors = []
    weights = []
    for _ in range(n_relations):
        entity_factors.append(hp.sigma_init * rng.standard_normal((n_entities, hp.k)))
        weights.append([hp.sigma_init * rng.standard_normal(shape.param_shape(hp.k))
                        for _ in range(n_relations)])
    return DmfModel(entity_factors, weights, shape, hp)


def _require_training_data(train: MultiRelationalDataset) -> None:
    for r in range(train.n_relations):
        if len(train.relations[r]) == 0:
            raise ValueError(f"relation {train.relation_names[r]!r} has no training data")


class _PackedRelations:
    """Concatenated per-relation arrays in the layout the mixed kernel expects."""

    def __init__(self, train: MultiRelationalDataset):
        rels = train.relations
        sizes = np.asarray([len(rel) for rel in rels], dtype=np.int64)
        self.sizes = sizes
        self.pair_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.subjects = np.concatenate([rel.subjects for rel in rels])
        self.objects = np.concatenate([rel.objects for rel in rels])
        key_sizes = np.asarray([rel.sorted_keys.shape[0] for rel in rels], dtype=np.int64)
        self.key_offsets = np.concatenate([[0], np.cumsum(key_sizes)]).astype(np.int64)
        self.keys_flat = np.concatenate([rel.sorted_keys for rel in rels])
        self.cum_sizes = np.cumsum(sizes).astype(np.int64)
        self.n_entities = train.n_entities


def _round_losses(train: MultiRelationalDataset, params_of, hp: Hyperparams) -> float:
    total = 0.0
    for r in range(train.n_relations):
        stream = SplitMix64(derive_seed(hp.seed, STREAM_LOSS, r))
        n = min(len(train.relations[r]), 10_000)
        total += estimate_relation_loss(train.relations[r], params_of(r), stream, n)
    return total


def train_cd(splits: SplitDataset, hp: Hyperparams,
             shape: WeightShape = WeightShape.DIAGONAL, n_workers: int = 1,
             initial: SharedModel | None = None) -> SharedModel:
    """Complete-sharing SGD: samples drawn across relations proportionally to size.

    Runs single-threaded regardless of `n_workers`: every sample writes the
    shared factor matrix, so lock-free parallel updates are not sound here.
    One round processes as many samples as the consensus trainer's per-relation
    budgets combined.
    """
    train = splits.train
    n_relations = train.n_relations
    _require_training_data(train)
    if initial is not None:
        shape = initial.shape
    model = init_cd_model(train.n_entities, n_relations, hp, shape) if initial is None \
        else SharedModel(initial.entity_factors.copy(),
                         [w.copy() for w in initial.relation_weights], shape, hp)
    if hp.max_rounds == 0:
        return model

    packed = _PackedRelations(train)
    budgets = [hp.inner_budget if hp.inner_budget is not None else int(packed.sizes[r])
               for r in range(n_relations)]
    round_budget = int(np.sum(np.asarray(budgets, dtype=np.int64)))
    w_stack = np.stack([model.relation_weights[r].reshape(-1) for r in range(n_relations)])
    acc_a = np.zeros_like(model.entity_factors)
    acc_w = np.zeros_like(w_stack)
    zeros = np.zeros_like(model.entity_factors)
    weights = np.ones(n_relations)
    states = np.asarray([derive_seed(hp.seed, STREAM_TRAIN, r)
                         for r in range(n_relations)], dtype=np.uint64)
    pick_state = derive_seed(hp.seed, STREAM_PICK, 0)

    def params_of(r: int) -> RelationParams:
        return RelationParams(model.entity_factors, w_stack[r], shape)

    t_start = time.perf_counter()
    total_loss = _round_losses(train, params_of, hp)
    model.curve.append(CurveRow(0, time.perf_counter() - t_start, total_loss))
    for round_index in range(1, hp.max_rounds + 1):
        pick_state, sat_rel, status = kernels.run_mixed_sgd(
            model.entity_factors, w_stack, shape.code, zeros, zeros, acc_a, acc_w,
            packed.subjects, packed.objects, packed.pair_offsets, packed.keys_flat,
            packed.key_offsets, packed.cum_sizes, weights,
            np.int64(packed.n_entities), hp.eta, hp.lam, 0.0, hp.adagrad_delta,
            np.int64(round_budget), np.uint64(pick_state), states)
        pick_state = int(pick_state)
        if status == kernels.SATURATED:
            raise SaturationError(relation=train.relation_names[int(sat_rel)])
        if not (np.all(np.isfinite(model.entity_factors)) and np.all(np.isfinite(w_stack))):
            raise DivergenceError(round_index=round_index)
        prev_loss = total_loss
        total_loss = _round_losses(train, params_of, hp)
        model.rounds = round_index
        model.curve.append(CurveRow(round_index, time.perf_counter() - t_start,
                                    total_loss))
        if check_convergence(prev_loss, total_loss, hp.epsilon):
            break
    for r in range(n_relations):
        model.relation_weights[r] = w_stack[r].reshape(shape.param_shape(hp.k))
    return model


def train_dmf(splits: SplitDataset, hp: Hyperparams,
              shape: WeightShape = WeightShape.DIAGONAL, n_workers: int = 1,
              initial: DmfModel | None = None) -> DmfModel:
    """Decoupled per-target factorization with weighted auxiliary losses.

    Each target's SGD draws from all relations proportionally to size; the
    gradient of an auxiliary relation is scaled by `hp.alpha` (a zero weight
    skips the sample). Per-target budget is `dmf_budget_factor * |D_t|`
    (factor defaults to the relation count), so a round costs roughly
    `factor * total_triples` samples. Targets train in parallel; each worker
    reads the whole training set but owns its target's parameters.
    """
    train = splits.train
    n_relations = train.n_relations
    _require_training_data(train)
    if initial is not None:
        shape = initial.shape
    model = init_dmf_model(train.n_entities, n_relations, hp, shape) if initial is None \
        else DmfModel([a.copy() for a in initial.entity_factors],
                      [[w.copy() for w in row] for row in initial.relation_weights],
                      shape, hp)
    if hp.max_rounds == 0:
        return model

    packed = _PackedRelations(train)
    factor = hp.dmf_budget_factor if hp.dmf_budget_factor is not None else n_relations
    base = [hp.inner_budget if hp.inner_budget is not None else int(packed.sizes[t])
            for t in range(n_relations)]
    budgets = [factor * b for b in base]
    w_stacks = [np.stack([model.relation_weights[t][r].reshape(-1)
                          for r in range(n_relations)]) for t in range(n_relations)]
    acc_a = [np.zeros_like(model.entity_factors[t]) for t in range(n_relations)]
    acc_w = [np.zeros_like(w_stacks[t]) for t in range(n_relations)]
    zeros = np.zeros_like(model.entity_factors[0])
    states = [np.asarray([derive_seed(hp.seed, STREAM_TRAIN, t * n_relations + r)
                          for r in range(n_relations)], dtype=np.uint64)
              for t in range(n_relations)]
    pick_states = [derive_seed(hp.seed, STREAM_PICK, t) for t in range(n_relations)]
    weight_rows = []
    for t in range(n_relations):
        w = np.full(n_relations, hp.alpha)
        w[t] = 1.0
        weight_rows.append(w)

    assignment = _worker_assignment([int(b) for b in budgets], n_workers)
    executor = ThreadPoolExecutor(max_workers=len(assignment)) if n_workers > 1 else None

    def params_of(t: int) -> RelationParams:
        return RelationParams(model.entity_factors[t], w_stacks[t][t], shape)

    t_start = time.perf_counter()
    try:
        total_loss = _round_losses(train, params_of, hp)
        model.curve.append(CurveRow(0, time.perf_counter() - t_start, total_loss))
        for round_index in range(1, hp.max_rounds + 1):
            def run_target(t: int) -> None:
                new_state, sat_rel, status = kernels.run_mixed_sgd(
                    model.entity_factors[t], w_stacks[t], shape.code, zeros, zeros,
                    acc_a[t], acc_w[t], packed.subjects, packed.objects,
                    packed.pair_offsets, packed.keys_flat, packed.key_offsets,
                    packed.cum_sizes, weight_rows[t], np.int64(packed.n_entities),
                    hp.eta, hp.lam, 0.0, hp.adagrad_delta, np.int64(budgets[t]),
                    np.uint64(pick_states[t]), states[t])
                pick_states[t] = int(new_state)
                if status == kernels.SATURATED:
                    raise SaturationError(relation=train.relation_names[int(sat_rel)])
            _run_phases(assignment, run_target, executor)
            for t in range(n_relations):
                if not (np.all(np.isfinite(model.entity_factors[t]))
                        and np.all(np.isfinite(w_stacks[t]))):
                    raise DivergenceError(round_index=round_index)
            prev_loss = total_loss
            total_loss = _round_losses(train, params_of, hp)
            model.rounds = round_index
            model.curve.append(CurveRow(round_index, time.perf_counter() - t_start,
                                        total_loss))
            if check_convergence(prev_loss, total_loss, hp.epsilon):
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    for t in range(n_relations):
        for r in range(n_relations):
            model.relation_weights[t][r] = w_stacks[t][r].reshape(shape.param_shape(hp.k))
    return model
