"""Consensus training loop: parallel per-relation SGD, averaging, dual updates.

Each round runs three phases: (a) every relation worker resets its entity
factors to the consensus and runs its SGD budget against its own data only;
(b) the driver replaces the consensus with the mean of the per-relation
factors; (c) workers add rho * (factors - consensus) to their dual matrices.
Workers own disjoint state and draw from per-relation streams, so results are
bit-identical regardless of thread count or scheduling.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import SplitDataset
from .errors import DivergenceError, SaturationError
from .factors import (AdagradState, ConsensusState, Hyperparams, RelationParams,
                      WeightShape, init_model)
from .objective import estimate_relation_loss
from .rng import STREAM_CURVE, STREAM_LOSS, STREAM_TRAIN, SplitMix64, derive_seed


@dataclass
class CurveRow:
    round: int
    seconds: float
    train_loss: float
    valid_auc: float | None = None


@dataclass
class TrainedModel:
    """Output of the consensus trainer; predictions use the per-relation params."""

    kind = "consmrf"

    relations: list[RelationParams]
    consensus_state: ConsensusState
    rounds: int
    curve: list[CurveRow]
    hp: Hyperparams
    n_entities: int
    relation_timings: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def shape(self) -> WeightShape:
        return self.relations[0].shape

    def score_candidates(self, r: int, s: int, objects) -> np.ndarray:
        from .factors import score_candidates
        return score_candidates(self.relations[r], s, objects)

    def n_parameters(self) -> int:
        n_e, k = self.consensus_state.consensus.shape
        r = len(self.relations)
        w = self.shape.n_params(k)
        # R per-relation factor matrices + the consensus + R duals + R weights.
        return (r + 1) * n_e * k + r * n_e * k + r * w


def update_z(factor_matrices: list[np.ndarray]) -> np.ndarray:
    """Consensus update: elementwise mean of the per-relation entity factors."""
    if not factor_matrices:
        raise ValueError("need at least one factor matrix")
    return np.mean(np.stack(factor_matrices, axis=0), axis=0)


def update_v(duals: np.ndarray, entity_factors: np.ndarray,
             consensus: np.ndarray, rho: float) -> np.ndarray:
    """Dual update: duals + rho * (factors - consensus)."""
    return duals + rho * (entity_factors - consensus)


def check_convergence(prev_total_loss: float, cur_total_loss: float,
                      epsilon: float) -> bool:
    """Early stopping on the absolute change of the summed training loss."""
    return abs(cur_total_loss - prev_total_loss) < epsilon


def update_aw(triples, params: RelationParams, consensus: np.ndarray,
              duals: np.ndarray, hp: Hyperparams, ada: AdagradState,
              rng: SplitMix64, budget: int | None = None,
              relation: int | None = None) -> RelationParams:
    """Run one relation's SGD budget (draw positive pair, draw negative, update).

    Touches only this relation's parameters and data; `consensus` is read-only.
    """
    if budget is None:
        budget = hp.inner_budget if hp.inner_budget is not None else len(triples)
    state, status = kernels.run_relation_sgd(
        params.entity_factors, params.weights_flat(), params.shape.code,
        consensus, duals, ada.entity_acc, ada.weight_acc,
        triples.subjects, triples.objects, triples.sorted_keys,
        np.int64(triples.n_entities), hp.eta, hp.lam, hp.rho, hp.adagrad_delta,
        np.int64(budget), np.uint64(rng.state))
    rng.state = int(state)
    if status == kernels.SATURATED:
        raise SaturationError(relation=relation)
    if not (np.all(np.isfinite(params.entity_factors))
            and np.all(np.isfinite(params.relation_weights))):
        raise DivergenceError()
    return params


def _worker_assignment(sizes: list[int], n_workers: int) -> list[list[int]]:
    """Round-robin relations to workers by descending size (LPT heuristic)."""
    order = sorted(range(len(sizes)), key=lambda r: (-sizes[r], r))
    lists: list[list[int]] = [[] for _ in range(min(n_workers, len(sizes)))]
    for rank, r in enumerate(order):
        lists[rank % len(lists)].append(r)
    return lists


def _run_phases(assignment: list[list[int]], fn, executor) -> None:
    if executor is None:
        for worker_relations in assignment:
            for r in worker_relations:
                fn(r)
    else:
        def run_list(worker_relations):
            for r in worker_relations:
                fn(r)
        futures = [executor.submit(run_list, lst) for lst in assignment]
        for f in futures:
            f.result()


def train_consmrf(splits: SplitDataset, hp: Hyperparams,
                  shape: WeightShape = WeightShape.DIAGONAL,
                  n_workers: int = 1, track_valid: bool = False) -> TrainedModel:
    """Train the consensus model on the training split.

    Stops after `hp.max_rounds` rounds or when the summed per-relation loss
    estimate changes by less than `hp.epsilon` between rounds. One curve row
    is recorded per round (plus the pre-training baseline as round 0).
    """
    if n_workers < 1:
        raise ValueError("n_workers must be at least 1")
    train = splits.train
    n_relations = train.n_relations
    for r in range(n_relations):
        if len(train.relations[r]) == 0:
            raise ValueError(f"relation {train.relation_names[r]!r} has no training data")

    params, cstate = init_model(train.n_entities, n_relations, hp, shape)
    adas = [AdagradState.zeros(train.n_entities, hp.k, shape, hp.adagrad_delta)
            for _ in range(n_relations)]
    streams = [SplitMix64(derive_seed(hp.seed, STREAM_TRAIN, r))
               for r in range(n_relations)]
    budgets = [hp.inner_budget if hp.inner_budget is not None else len(train.relations[r])
               for r in range(n_relations)]
    model = TrainedModel(params, cstate, 0, [], hp, train.n_entities)
    if hp.max_rounds == 0:
        return model

    sizes = [len(train.relations[r]) for r in range(n_relations)]
    assignment = _worker_assignment(sizes, n_workers)
    executor = ThreadPoolExecutor(max_workers=len(assignment)) if n_workers > 1 else None

    def relation_loss(r: int) -> float:
        # Fresh stream every round: the estimate is a fixed function of the
        # parameters, so round-to-round deltas reflect parameter movement only.
        stream = SplitMix64(derive_seed(hp.seed, STREAM_LOSS, r))
        n = min(len(train.relations[r]), 10_000)
        return estimate_relation_loss(train.relations[r], params[r], stream, n)

    def valid_auc(round_index: int) -> float | None:
        from .evaluate import evaluate_model
        if splits.valid.n_triples == 0:
            return None
        report = evaluate_model(model, splits, m_neg=hp.m_neg, k=hp.top_k,
                                seed=derive_seed(hp.seed, STREAM_CURVE, round_index),
                                split="valid")
        return report.macro_auc if report.units else None

    t_start = time.perf_counter()
    try:
        total_loss = sum(relation_loss(r) for r in range(n_relations))
        model.curve.append(CurveRow(0, time.perf_counter() - t_start, total_loss,
                                    valid_auc(0) if track_valid else None))
        for round_index in range(1, hp.max_rounds + 1):
            def run_relation(r: int) -> None:
                t_rel = time.perf_counter()
                if hp.reset_to_consensus:
                    params[r].entity_factors[:] = cstate.consensus
                    if hp.reset_adagrad_with_consensus:
                        adas[r].reset_entities()
                try:
                    update_aw(train.relations[r], params[r], cstate.consensus,
                              cstate.duals[r], hp, adas[r], streams[r],
                              budget=budgets[r], relation=r)
                except DivergenceError as err:
                    raise DivergenceError(round_index=round_index,
                                          detail=f"relation {r}") from err
                model.relation_timings.append((round_index, r,
                                               time.perf_counter() - t_rel))
            _run_phases(assignment, run_relation, executor)

            cstate.consensus = update_z([p.entity_factors for p in params])

            def run_dual(r: int) -> None:
                cstate.duals[r] = update_v(cstate.duals[r], params[r].entity_factors,
                                           cstate.consensus, hp.rho)
            _run_phases(assignment, run_dual, executor)

            prev_loss = total_loss
            total_loss = sum(relation_loss(r) for r in range(n_relations))
            model.rounds = round_index
            model.curve.append(CurveRow(round_index, time.perf_counter() - t_start,
                                        total_loss,
                                        valid_auc(round_index) if track_valid else None))
            if check_convergence(prev_loss, total_loss, hp.epsilon):
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    return model
