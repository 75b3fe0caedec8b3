"""Synthetic datasets with planted low-rank structure.

The generator draws ground-truth entity factors and diagonal relation weights,
then declares each subject's top-scoring objects per relation to be the
positive triples. A factorization model of matching rank can recover the
planted ranking, which makes these sets useful for end-to-end checks without
external data.
"""
from __future__ import annotations

import numpy as np

from .dataset import MultiRelationalDataset


def synthetic_dataset(n_entities: int = 1000, n_relations: int = 10, k: int = 8,
                      positives_per_subject: int = 20, seed: int = 0,
                      ) -> MultiRelationalDataset:
    """Top-N planted-factor dataset: n_entities * n_relations * N triples."""
    if positives_per_subject >= n_entities:
        raise ValueError("positives_per_subject must be below n_entities")
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((n_entities, k))
    entity_names = [f"e{i}" for i in range(n_entities)]
    relation_names = [f"rel{r}" for r in range(n_relations)]
    triples: list[tuple[int, int, int]] = []
    for r in range(n_relations):
        weights = rng.standard_normal(k)
        scores = (truth * weights) @ truth.T
        n_top = positives_per_subject
        top = np.argpartition(-scores, n_top, axis=1)[:, :n_top]
        for s in range(n_entities):
            cols = top[s]
            order = np.argsort(-scores[s, cols], kind="stable")
            for o in cols[order].tolist():
                triples.append((s, r, o))
    return MultiRelationalDataset.from_triples(entity_names, relation_names, triples)


def random_dataset(n_entities: int, n_relations: int, n_triples: int,
                   seed: int = 0) -> MultiRelationalDataset:
    """Uniform random distinct triples; structure-free, for plumbing tests."""
    if n_triples > n_entities * n_entities * n_relations:
        raise ValueError("more triples requested than distinct (s, r, o) exist")
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int, int]] = set()
    triples: list[tuple[int, int, int]] = []
    while len(triples) < n_triples:
        s = int(rng.integers(n_entities))
        r = int(rng.integers(n_relations))
        o = int(rng.integers(n_entities))
        if (s, r, o) in seen:
            continue
        seen.add((s, r, o))
        triples.append((s, r, o))
    entity_names = [f"e{i}" for i in range(n_entities)]
    relation_names = [f"rel{r}" for r in range(n_relations)]
    return MultiRelationalDataset.from_triples(entity_names, relation_names, triples)
