"""Learnable parameters: entity factors, relation weights, consensus state.

Prediction is the bilinear form `a_s . (W a_o)`; the relation weight matrix W
can be the identity (no parameters), diagonal (k parameters), or full (k x k).
Entity factors are stored row-major so the SGD hot loop touches contiguous
memory per entity.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels


class WeightShape(enum.Enum):
    IDENTITY = "identity"
    DIAGONAL = "diagonal"
    FULL = "full"

    @property
    def code(self) -> int:
        """Integer code used by the jitted kernels."""
        return {"identity": kernels.IDENTITY, "diagonal": kernels.DIAGONAL,
                "full": kernels.FULL}[self.value]

    def n_params(self, k: int) -> int:
        if self is WeightShape.IDENTITY:
            return 0
        if self is WeightShape.DIAGONAL:
            return k
        return k * k

    def param_shape(self, k: int) -> tuple[int, ...]:
        if self is WeightShape.IDENTITY:
            return (0,)
        if self is WeightShape.DIAGONAL:
            return (k,)
        return (k, k)


@dataclass
class Hyperparams:
    """All tunables in one place; every trainer and the CLI share these names."""

    k: int = 10                    # latent dimension
    lam: float = 0.005             # L2 regularization weight
    eta: float = 0.5               # base ADAGRAD step size
    rho: float = 0.0005            # consensus penalty / dual step size
    sigma_init: float = 0.1        # stddev of the Gaussian initialization
    epsilon: float = 1e-4          # early-stopping threshold on the summed loss delta
    inner_budget: int | None = None  # SGD samples per relation per round; None = |D_r|
    max_rounds: int = 200
    m_neg: int = 100               # negatives per evaluation unit
    top_k: int = 5                 # cutoff for precision/recall
    alpha: float = 0.25            # auxiliary-relation weight for the decoupled baseline
    seed: int = 0
    adagrad_delta: float = 1e-8
    # Reset entity factors to the consensus at every round start (ablatable),
    # and whether the entity-side ADAGRAD accumulators reset with them.
    reset_to_consensus: bool = True
    reset_adagrad_with_consensus: bool = True
    # Per-target budget factor for the decoupled baseline; None = n_relations.
    dmf_budget_factor: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        for name in ("lam", "rho", "sigma_init", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class RelationParams:
    """Entity factors and relation weights owned by one relation's model."""

    entity_factors: np.ndarray      # (n_entities, k)
    relation_weights: np.ndarray    # (), (k,) or (k, k) depending on shape
    shape: WeightShape

    @property
    def k(self) -> int:
        return self.entity_factors.shape[1]

    def weights_flat(self) -> np.ndarray:
        """Flat float64 view of the weights (shared memory) for the kernels."""
        return self.relation_weights.reshape(-1)

    def copy(self) -> "RelationParams":
        return RelationParams(self.entity_factors.copy(),
                              self.relation_weights.copy(), self.shape)


@dataclass
class ConsensusState:
    """Global consensus entity factors and the per-relation dual matrices."""

    consensus: np.ndarray           # (n_entities, k)
    duals: list[np.ndarray]         # R matrices, same shape as consensus

    def copy(self) -> "ConsensusState":
        return ConsensusState(self.consensus.copy(), [v.copy() for v in self.duals])


@dataclass
class AdagradState:
    """Per-coordinate squared-gradient accumulators for one relation's params."""

    entity_acc: np.ndarray
    weight_acc: np.ndarray
    delta: float = 1e-8

    @classmethod
    def zeros(cls, n_entities: int, k: int, shape: WeightShape,
              delta: float = 1e-8) -> "AdagradState":
        return cls(np.zeros((n_entities, k)), np.zeros(shape.n_params(k)), delta)

    def reset_entities(self) -> None:
        """Drop entity-side history (the iterate jumped to the consensus)."""
        self.entity_acc[:] = 0.0


def init_model(n_entities: int, n_relations: int, hp: Hyperparams,
               shape: WeightShape = WeightShape.DIAGONAL,
               ) -> tuple[list[RelationParams], ConsensusState]:
    """Gaussian-initialize the consensus, the per-relation factors and weights.

    Draw order is fixed (consensus first, then each relation's entity factors
    and weights) so a seed pins every parameter. Duals start at zero, which is
    what makes the plain-average consensus update exact.
    """
    if n_entities < 1 or n_relations < 1:
        raise ValueError("need at least one entity and one relation")
    rng = np.random.default_rng(hp.seed)
    sigma = hp.sigma_init
    consensus = sigma * rng.standard_normal((n_entities, hp.k))
    params = []
    duals = []
    for _ in range(n_relations):
        entity_factors = sigma * rng.standard_normal((n_entities, hp.k))
        relation_weights = sigma * rng.standard_normal(shape.param_shape(hp.k))
        params.append(RelationParams(entity_factors, relation_weights, shape))
        duals.append(np.zeros((n_entities, hp.k)))
    return params, ConsensusState(consensus, duals)


def score(params: RelationParams, s: int, o: int) -> float:
    """Bilinear prediction score for one (subject, object) pair."""
    a_s = params.entity_factors[s]
    a_o = params.entity_factors[o]
    if params.shape is WeightShape.IDENTITY:
        return float(np.dot(a_s, a_o))
    if params.shape is WeightShape.DIAGONAL:
        return float(np.dot(a_s * params.relation_weights, a_o))
    return float(a_s @ params.relation_weights @ a_o)


def score_candidates(params: RelationParams, s: int, objects) -> np.ndarray:
    """Scores of one subject against many candidate objects.

    The subject-side product is computed once, so the cost is O(k) per
    candidate (plus one k^2 term for full weights).
    """
    objects = np.asarray(objects, dtype=np.int64)
    if objects.size == 0:
        return np.empty(0)
    a_s = params.entity_factors[s]
    if params.shape is WeightShape.IDENTITY:
        left = a_s
    elif params.shape is WeightShape.DIAGONAL:
        left = a_s * params.relation_weights
    else:
        left = a_s @ params.relation_weights
    return params.entity_factors[objects] @ left
