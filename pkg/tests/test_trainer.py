"""Consensus rounds: averaging, dual updates, decoupling, determinism."""
import numpy as np
import pytest

import consmrf.trainer as trainer_mod
from consmrf.dataset import split_dataset
from consmrf.errors import DivergenceError
from consmrf.factors import (AdagradState, Hyperparams, RelationParams,
                             WeightShape, init_model)
from consmrf.rng import STREAM_TRAIN, SplitMix64, derive_seed
from consmrf.synthetic import synthetic_dataset
from consmrf.trainer import (check_convergence, train_consmrf, update_aw,
                             update_v, update_z, _worker_assignment)

from helpers import build_dataset


def small_splits(n_entities=60, n_relations=4, pps=3, seed=11):
    ds = synthetic_dataset(n_entities, n_relations, k=4,
                           positives_per_subject=pps, seed=seed)
    return split_dataset(ds, seed=seed)


class TestUpdateZ:
    def test_mean_of_ones_and_zeros(self):
        z = update_z([np.ones((3, 2)), np.zeros((3, 2))])
        assert np.all(z == 0.5)

    def test_single_input_identity(self):
        a = np.random.default_rng(0).standard_normal((4, 3))
        assert np.array_equal(update_z([a]), a)

    def test_matches_naive_mean_oracle(self):
        rng = np.random.default_rng(1)
        mats = [rng.standard_normal((5, 4)) for _ in range(5)]
        naive = np.zeros((5, 4))
        for m in mats:
            naive = naive + m
        naive /= 5
        np.testing.assert_allclose(update_z(mats), naive, atol=1e-15)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        mats = [rng.standard_normal((6, 3)) for _ in range(7)]
        base = update_z(mats)
        for perm_seed in range(5):
            perm = np.random.default_rng(perm_seed).permutation(7)
            shuffled = [mats[i] for i in perm]
            np.testing.assert_allclose(update_z(shuffled), base,
                                       rtol=1e-14, atol=1e-14)


class TestUpdateV:
    def test_fixed_point(self):
        a = np.random.default_rng(3).standard_normal((4, 2))
        v = update_v(np.zeros((4, 2)), a, a.copy(), rho=0.7)
        assert np.all(v == 0.0)

    def test_unit_gap(self):
        v = update_v(np.zeros((3, 2)), np.ones((3, 2)), np.zeros((3, 2)),
                     rho=0.005)
        assert np.array_equal(v, np.full((3, 2), 0.005))

    def test_round_one_closed_form(self):
        # From zero duals, round one must leave exactly rho * (A_r - mean A).
        splits = small_splits()
        hp = Hyperparams(k=4, rho=0.01, max_rounds=1, seed=5, epsilon=0.0)
        model = train_consmrf(splits, hp)
        consensus = model.consensus_state.consensus
        stacked = update_z([p.entity_factors for p in model.relations])
        assert np.array_equal(consensus, stacked)
        for p, v in zip(model.relations, model.consensus_state.duals):
            assert np.array_equal(v, hp.rho * (p.entity_factors - consensus))


class TestConvergence:
    def test_equal_losses(self):
        assert check_convergence(1.5, 1.5, 1e-9)

    def test_above_threshold(self):
        assert not check_convergence(1.0, 1.1, 0.05)

    def test_below_threshold(self):
        assert check_convergence(1.0, 1.01, 0.05)

    def test_early_stop_in_trainer(self):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=50, seed=1, epsilon=1e9)
        model = train_consmrf(splits, hp)
        assert model.rounds == 1
        assert len(model.curve) == 2


class TestUpdateAW:
    def test_zero_budget_keeps_params(self):
        splits = small_splits()
        hp = Hyperparams(k=4, seed=2)
        params, state = init_model(splits.n_entities, splits.n_relations, hp)
        ada = AdagradState.zeros(splits.n_entities, hp.k, WeightShape.DIAGONAL)
        before = params[0].entity_factors.copy()
        update_aw(splits.train.relations[0], params[0], state.consensus,
                  state.duals[0], hp, ada, SplitMix64(3), budget=0)
        assert np.array_equal(params[0].entity_factors, before)

    def test_deterministic(self):
        splits = small_splits()
        hp = Hyperparams(k=4, seed=2)
        outs = []
        for _ in range(2):
            params, state = init_model(splits.n_entities, splits.n_relations, hp)
            ada = AdagradState.zeros(splits.n_entities, hp.k, WeightShape.DIAGONAL)
            update_aw(splits.train.relations[0], params[0], state.consensus,
                      state.duals[0], hp, ada, SplitMix64(123), budget=500)
            outs.append(params[0].entity_factors.copy())
        assert np.array_equal(outs[0], outs[1])

    def test_penalty_contracts_toward_consensus(self):
        # Penalty-only regime: rows start identical (zero ranking gradients),
        # large rho and a small step keep every move pointed at the consensus.
        ds = build_dataset(10, {"p": [(i, (i + 1) % 10) for i in range(10)]})
        splits_rel = ds.relations[0]
        k = 4
        params = RelationParams(np.ones((10, k)), np.empty(0), WeightShape.IDENTITY)
        consensus = np.full((10, k), 2.0)
        duals = np.zeros((10, k))
        hp = Hyperparams(k=k, lam=0.0, rho=50.0, eta=0.01)
        ada = AdagradState.zeros(10, k, WeightShape.IDENTITY)
        stream = SplitMix64(9)
        gap = np.linalg.norm(params.entity_factors - consensus)
        for _ in range(5):
            update_aw(splits_rel, params, consensus, duals, hp, ada, stream,
                      budget=40)
            new_gap = np.linalg.norm(params.entity_factors - consensus)
            assert new_gap < gap
            gap = new_gap

    def test_divergence_guard(self):
        splits = small_splits()
        hp = Hyperparams(k=4, seed=2)
        params, state = init_model(splits.n_entities, splits.n_relations, hp)
        params[0].entity_factors[0, 0] = np.nan
        ada = AdagradState.zeros(splits.n_entities, hp.k, WeightShape.DIAGONAL)
        with pytest.raises(DivergenceError):
            update_aw(splits.train.relations[0], params[0], state.consensus,
                      state.duals[0], hp, ada, SplitMix64(3), budget=10)


class TestTrainConsmrf:
    def test_zero_rounds_returns_initialized_model(self):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=0, seed=21)
        model = train_consmrf(splits, hp)
        params, state = init_model(splits.n_entities, splits.n_relations, hp)
        assert model.rounds == 0
        assert model.curve == []
        assert np.array_equal(model.consensus_state.consensus, state.consensus)
        for mp, p in zip(model.relations, params):
            assert np.array_equal(mp.entity_factors, p.entity_factors)

    def test_single_relation_consensus_tracks_factors(self):
        ds = synthetic_dataset(40, 1, k=4, positives_per_subject=3, seed=4)
        splits = split_dataset(ds, seed=4)
        hp = Hyperparams(k=4, rho=0.3, max_rounds=3, seed=4, epsilon=0.0)
        model = train_consmrf(splits, hp)
        assert np.array_equal(model.consensus_state.consensus,
                              model.relations[0].entity_factors)
        assert np.all(model.consensus_state.duals[0] == 0.0)

    def test_training_reduces_loss(self):
        # 200-entity, 4-relation planted dataset over 50 rounds.
        ds = synthetic_dataset(200, 4, k=8, positives_per_subject=5, seed=3)
        splits = split_dataset(ds, seed=3)
        hp = Hyperparams(k=8, max_rounds=50, seed=3, epsilon=0.0)
        model = train_consmrf(splits, hp)
        assert model.curve[-1].train_loss < model.curve[0].train_loss

    def test_deterministic_across_runs_and_workers(self):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=4, seed=17, epsilon=0.0)
        a = train_consmrf(splits, hp, n_workers=1)
        b = train_consmrf(splits, hp, n_workers=1)
        c = train_consmrf(splits, hp, n_workers=3)
        for pa, pb, pc in zip(a.relations, b.relations, c.relations):
            assert np.array_equal(pa.entity_factors, pb.entity_factors)
            assert np.array_equal(pa.entity_factors, pc.entity_factors)
            assert np.array_equal(pa.relation_weights, pc.relation_weights)
        assert [r.train_loss for r in a.curve] == [r.train_loss for r in c.curve]

    def test_decoupled_when_penalty_zero(self):
        # rho=0, duals stay zero, reset disabled: the trainer must reproduce R
        # independently trained single-relation models bit for bit.
        splits = small_splits()
        hp = Hyperparams(k=4, rho=0.0, max_rounds=3, seed=29, epsilon=0.0,
                         reset_to_consensus=False)
        full = train_consmrf(splits, hp)

        params, state = init_model(splits.n_entities, splits.n_relations, hp)
        for r in range(splits.n_relations):
            ada = AdagradState.zeros(splits.n_entities, hp.k, WeightShape.DIAGONAL)
            stream = SplitMix64(derive_seed(hp.seed, STREAM_TRAIN, r))
            for _ in range(hp.max_rounds):
                update_aw(splits.train.relations[r], params[r], state.consensus,
                          state.duals[r], hp, ada, stream)
            assert np.array_equal(full.relations[r].entity_factors,
                                  params[r].entity_factors)
            assert np.array_equal(full.relations[r].relation_weights,
                                  params[r].relation_weights)

    def test_curve_rows_and_times(self):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=3, seed=2, epsilon=0.0)
        model = train_consmrf(splits, hp)
        rounds = [row.round for row in model.curve]
        assert rounds == [0, 1, 2, 3]
        seconds = [row.seconds for row in model.curve]
        assert seconds == sorted(seconds)
        assert len(model.relation_timings) == 3 * splits.n_relations

    def test_dual_matrices_sum_to_zero(self):
        # Duals start at zero and each round adds rho * (A_r - mean of A), so
        # their sum is conserved at zero; this is what makes the plain-mean
        # consensus update exact round after round.
        splits = small_splits()
        hp = Hyperparams(k=4, rho=0.05, max_rounds=5, seed=13, epsilon=0.0)
        model = train_consmrf(splits, hp)
        total = np.zeros_like(model.consensus_state.consensus)
        for v in model.consensus_state.duals:
            total = total + v
        np.testing.assert_allclose(total, 0.0, atol=1e-12)

    def test_track_valid_records_auc(self):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=2, seed=2, epsilon=0.0, m_neg=10)
        model = train_consmrf(splits, hp, track_valid=True)
        assert all(row.valid_auc is not None for row in model.curve)
        assert all(0.0 <= row.valid_auc <= 1.0 for row in model.curve)

    def test_divergence_reports_round(self, monkeypatch):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=3, seed=2)

        def explode(*args, **kwargs):
            raise DivergenceError()
        monkeypatch.setattr(trainer_mod, "update_aw", explode)
        with pytest.raises(DivergenceError) as err:
            train_consmrf(splits, hp)
        assert err.value.round_index == 1

    def test_inner_budget_override(self):
        splits = small_splits()
        hp = Hyperparams(k=4, max_rounds=1, seed=2, inner_budget=0,
                         reset_to_consensus=False, epsilon=0.0)
        model = train_consmrf(splits, hp)
        params, _ = init_model(splits.n_entities, splits.n_relations, hp)
        for mp, p in zip(model.relations, params):
            assert np.array_equal(mp.entity_factors, p.entity_factors)


class TestWorkerAssignment:
    def test_lpt_round_robin(self):
        assert _worker_assignment([5, 1, 4, 2, 3], 2) == [[0, 4, 1], [2, 3]]

    def test_more_workers_than_relations(self):
        assert _worker_assignment([2, 9], 4) == [[1], [0]]
