"""Multi-relational factorization toolkit.

Per-relation bilinear models trained under a global consensus variable
(ADMM-style rounds with parallel per-relation SGD workers), complete-sharing
and decoupled baselines on the same pairwise-ranking machinery, and a
sampled-negative ranking evaluation harness.
"""

__version__ = "0.1.0"

from .dataset import (ALL_SPLITS, TRAIN_ONLY, MultiRelationalDataset,
                      RelationTriples, SplitDataset, contains, load_cache,
                      make_folds, parse_triples, sample_unlinked_object,
                      save_cache, split_dataset)
from .errors import (ConsmrfError, DivergenceError, EmptyDatasetError,
                     ParseError, SaturationError, SplitRejectionError)
from .factors import (AdagradState, ConsensusState, Hyperparams,
                      RelationParams, WeightShape, init_model, score,
                      score_candidates)
from .objective import (GradientBundle, apply_admm_sgd_step, bpr_pair_loss,
                        bpr_stochastic_gradients, estimate_relation_loss,
                        sigmoid)
from .trainer import (CurveRow, TrainedModel, check_convergence, train_consmrf,
                      update_aw, update_v, update_z)
from .baselines import DmfModel, SharedModel, train_cd, train_dmf
from .evaluate import (CandidateSet, EvalReport, build_candidate_set,
                       evaluate_model, rank_metrics)
from .checkpoints import load_checkpoint, save_checkpoint
from .synthetic import random_dataset, synthetic_dataset
from .rng import SplitMix64, derive_seed
