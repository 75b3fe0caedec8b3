"""Triple ingestion, dictionaries, splits, and unlinked-object sampling.

Datasets are immutable after construction, so training workers and evaluation
units can share them across threads without locks. Membership is kept both as
a hash set (O(1) point queries) and as a sorted key array (what the jitted
kernels binary-search).
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

from .errors import EmptyDatasetError, ParseError, SaturationError, SplitRejectionError
from .kernels import rejection_cap
from .rng import STREAM_FOLD, derive_seed

TRAIN_ONLY = "train_only"
ALL_SPLITS = "all_splits"

_CACHE_MAGIC = "consmrf-dataset"
_CACHE_VERSION = 1


class RelationTriples:
    """Positive (subject, object) pairs of one relation.

    Pairs are stored in insertion order plus as `subject * n_entities + object`
    keys: a frozenset for expected-O(1) membership and a sorted array for the
    kernels and for per-subject range queries.
    """

    __slots__ = ("subjects", "objects", "n_entities", "key_set", "sorted_keys")

    def __init__(self, subjects, objects, n_entities: int):
        self.subjects = np.ascontiguousarray(subjects, dtype=np.int64)
        self.objects = np.ascontiguousarray(objects, dtype=np.int64)
        if self.subjects.shape != self.objects.shape:
            raise ValueError("subject/object arrays must have equal length")
        self.n_entities = int(n_entities)
        keys = self.subjects * self.n_entities + self.objects
        self.key_set = frozenset(keys.tolist())
        if len(self.key_set) != keys.shape[0]:
            raise ValueError("duplicate (subject, object) pair in relation data")
        self.sorted_keys = np.sort(keys)
        for arr in (self.subjects, self.objects, self.sorted_keys):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.subjects.shape[0]

    def contains(self, s: int, o: int) -> bool:
        return s * self.n_entities + o in self.key_set

    def degree(self, s: int) -> int:
        """Number of objects linked to subject s."""
        base = s * self.n_entities
        lo = np.searchsorted(self.sorted_keys, base)
        hi = np.searchsorted(self.sorted_keys, base + self.n_entities)
        return int(hi - lo)

    def objects_of(self, s: int) -> np.ndarray:
        """Objects linked to subject s, ascending."""
        base = s * self.n_entities
        lo = np.searchsorted(self.sorted_keys, base)
        hi = np.searchsorted(self.sorted_keys, base + self.n_entities)
        return self.sorted_keys[lo:hi] - base

    def pairs(self) -> Iterator[tuple[int, int]]:
        for s, o in zip(self.subjects.tolist(), self.objects.tolist()):
            yield s, o


class MultiRelationalDataset:
    """Entity/relation dictionaries plus per-relation positive triples.

    All relations share one global entity dictionary; ids are dense and
    assigned in first-appearance order by the parser.
    """

    def __init__(self, entity_names: list[str], relation_names: list[str],
                 relations: list[RelationTriples]):
        if len(relation_names) != len(relations):
            raise ValueError("one RelationTriples per relation name required")
        self.entity_names = entity_names
        self.relation_names = relation_names
        self.entity_index = {name: i for i, name in enumerate(entity_names)}
        self.relation_index = {name: i for i, name in enumerate(relation_names)}
        if len(self.entity_index) != len(entity_names):
            raise ValueError("duplicate entity name")
        if len(self.relation_index) != len(relation_names):
            raise ValueError("duplicate relation name")
        self.relations = relations

    @classmethod
    def from_triples(cls, entity_names: list[str], relation_names: list[str],
                     triples: Iterable[tuple[int, int, int]]) -> "MultiRelationalDataset":
        """Build from (subject, relation, object) id triples (no duplicates)."""
        n_entities = len(entity_names)
        per_rel: list[tuple[list[int], list[int]]] = [([], []) for _ in relation_names]
        for s, r, o in triples:
            if not (0 <= s < n_entities and 0 <= o < n_entities):
                raise ValueError(f"entity id out of range in triple ({s}, {r}, {o})")
            if not 0 <= r < len(relation_names):
                raise ValueError(f"relation id out of range in triple ({s}, {r}, {o})")
            per_rel[r][0].append(s)
            per_rel[r][1].append(o)
        relations = [RelationTriples(np.asarray(ss, dtype=np.int64),
                                     np.asarray(oo, dtype=np.int64), n_entities)
                     for ss, oo in per_rel]
        return cls(entity_names, relation_names, relations)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def n_triples(self) -> int:
        return sum(len(rel) for rel in self.relations)

    def contains(self, s: int, r: int, o: int) -> bool:
        return self.relations[r].contains(s, o)

    def triples(self) -> Iterator[tuple[int, int, int]]:
        """All (subject, relation, object) triples, relation-major, insertion order."""
        for r, rel in enumerate(self.relations):
            for s, o in rel.pairs():
                yield s, r, o


def parse_triples(path: Union[str, Path], format: str = "tsv") -> MultiRelationalDataset:
    """Parse a 3-column TSV of `subject<TAB>relation<TAB>object` lines.

    Blank lines and lines starting with '#' are skipped; duplicate triples are
    dropped; ids are assigned in first-appearance order (subject before object
    within a line).
    """
    if format != "tsv":
        raise ValueError(f"unsupported triple format {format!r}")
    path = Path(path)
    entity_names: list[str] = []
    entity_index: dict[str, int] = {}
    relation_names: list[str] = []
    relation_index: dict[str, int] = {}
    per_rel_subjects: list[list[int]] = []
    per_rel_objects: list[list[int]] = []
    per_rel_seen: list[set[tuple[int, int]]] = []

    def entity_id(name: str) -> int:
        eid = entity_index.get(name)
        if eid is None:
            eid = len(entity_names)
            entity_index[name] = eid
            entity_names.append(name)
        return eid

    with open(path, encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_number,
                                 f"expected 3 tab-separated fields, got {len(fields)}")
            subject, relation, obj = fields
            s = entity_id(subject)
            rid = relation_index.get(relation)
            if rid is None:
                rid = len(relation_names)
                relation_index[relation] = rid
                relation_names.append(relation)
                per_rel_subjects.append([])
                per_rel_objects.append([])
                per_rel_seen.append(set())
            o = entity_id(obj)
            if (s, o) in per_rel_seen[rid]:
                continue
            per_rel_seen[rid].add((s, o))
            per_rel_subjects[rid].append(s)
            per_rel_objects[rid].append(o)

    if not relation_names:
        raise EmptyDatasetError(f"no triples found in {path}")
    n_entities = len(entity_names)
    relations = [RelationTriples(np.asarray(ss, dtype=np.int64),
                                 np.asarray(oo, dtype=np.int64), n_entities)
                 for ss, oo in zip(per_rel_subjects, per_rel_objects)]
    return MultiRelationalDataset(entity_names, relation_names, relations)


def save_cache(ds: MultiRelationalDataset, path: Union[str, Path]) -> None:
    """Write the line-oriented dataset cache (version-tagged, id-order preserving)."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"{_CACHE_MAGIC} v{_CACHE_VERSION}\n")
        out.write(f"{ds.n_entities}\t{ds.n_relations}\t{ds.n_triples}\n")
        for name in ds.entity_names:
            out.write(name + "\n")
        for name in ds.relation_names:
            out.write(name + "\n")
        for s, r, o in ds.triples():
            out.write(f"{s}\t{r}\t{o}\n")


def load_cache(path: Union[str, Path]) -> MultiRelationalDataset:
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
        if not header.startswith(_CACHE_MAGIC):
            raise ParseError(path, 1, "not a dataset cache file")
        if header != f"{_CACHE_MAGIC} v{_CACHE_VERSION}":
            raise ParseError(path, 1, f"unsupported cache version {header!r}")
        counts = handle.readline().split("\t")
        n_entities, n_relations, n_triples = (int(c) for c in counts)
        entity_names = [handle.readline().rstrip("\n") for _ in range(n_entities)]
        relation_names = [handle.readline().rstrip("\n") for _ in range(n_relations)]
        triples = []
        for _ in range(n_triples):
            s, r, o = handle.readline().split("\t")
            triples.append((int(s), int(r), int(o)))
    return MultiRelationalDataset.from_triples(entity_names, relation_names, triples)


def is_cache_file(path: Union[str, Path]) -> bool:
    try:
        with open(path, encoding="utf-8") as handle:
            return handle.readline().startswith(_CACHE_MAGIC)
    except (OSError, UnicodeDecodeError):
        return False


def write_stats_csv(ds: MultiRelationalDataset, path: Union[str, Path]) -> None:
    """Summary counts: entities, relations, triples, then one row per relation."""
    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(["item", "count"])
        writer.writerow(["entities", ds.n_entities])
        writer.writerow(["relations", ds.n_relations])
        writer.writerow(["triples", ds.n_triples])
        for name, rel in zip(ds.relation_names, ds.relations):
            writer.writerow([f"relation:{name}", len(rel)])


class SplitDataset:
    """Train/valid/test views sharing one dictionary, plus all-splits membership."""

    def __init__(self, train: MultiRelationalDataset, valid: MultiRelationalDataset,
                 test: MultiRelationalDataset, seed: int, test_frac: float,
                 valid_frac: float, stratified: bool = False):
        self.train = train
        self.valid = valid
        self.test = test
        self.seed = seed
        self.test_frac = test_frac
        self.valid_frac = valid_frac
        self.stratified = stratified
        self._all_keys: list[np.ndarray] = []
        self._all_key_sets: list[frozenset] = []
        for r in range(train.n_relations):
            union = (train.relations[r].key_set
                     | valid.relations[r].key_set
                     | test.relations[r].key_set)
            keys = np.fromiter(union, dtype=np.int64, count=len(union))
            keys.sort()
            keys.setflags(write=False)
            self._all_keys.append(keys)
            self._all_key_sets.append(union)

    @property
    def n_entities(self) -> int:
        return self.train.n_entities

    @property
    def n_relations(self) -> int:
        return self.train.n_relations

    def contains(self, s: int, r: int, o: int, which: str = ALL_SPLITS) -> bool:
        if which == TRAIN_ONLY:
            return self.train.contains(s, r, o)
        if which == ALL_SPLITS:
            key = s * self.n_entities + o
            return key in self._all_key_sets[r]
        raise ValueError(f"unknown scope {which!r}")

    def scope_keys(self, r: int, which: str) -> np.ndarray:
        """Sorted membership keys for relation r in the requested scope."""
        if which == TRAIN_ONLY:
            return self.train.relations[r].sorted_keys
        if which == ALL_SPLITS:
            return self._all_keys[r]
        raise ValueError(f"unknown scope {which!r}")


Scope = Union[SplitDataset, MultiRelationalDataset]


def contains(scope: Scope, s: int, r: int, o: int, which: str = ALL_SPLITS) -> bool:
    """Membership test against a split scope or a plain dataset (scope ignored)."""
    if isinstance(scope, SplitDataset):
        return scope.contains(s, r, o, which)
    return scope.contains(s, r, o)


def _resolve_scope(scope: Scope, r: int, which: str):
    if isinstance(scope, SplitDataset):
        if which == TRAIN_ONLY:
            rel = scope.train.relations[r]
            return rel.key_set, rel.sorted_keys, scope.n_entities
        if which == ALL_SPLITS:
            return scope._all_key_sets[r], scope._all_keys[r], scope.n_entities
        raise ValueError(f"unknown scope {which!r}")
    rel = scope.relations[r]
    return rel.key_set, rel.sorted_keys, scope.n_entities


def sample_unlinked_object(scope: Scope, s: int, r: int, which: str,
                           rng: np.random.Generator,
                           exclude: frozenset | set | None = None) -> int:
    """Uniform draw from the objects not linked to s under r in the scope.

    Rejection sampling with the standard attempt cap; `exclude` additionally
    rejects already-drawn objects (used to build distinct negative sets).
    """
    key_set, sorted_keys, n_entities = _resolve_scope(scope, r, which)
    base = s * n_entities
    lo = np.searchsorted(sorted_keys, base)
    hi = np.searchsorted(sorted_keys, base + n_entities)
    degree = int(hi - lo) + (len(exclude) if exclude else 0)
    cap = int(rejection_cap(n_entities, degree))
    for _ in range(cap):
        cand = int(rng.integers(n_entities))
        if base + cand in key_set:
            continue
        if exclude is not None and cand in exclude:
            continue
        return cand
    raise SaturationError(s, r, cap)


def split_dataset(ds: MultiRelationalDataset, test_frac: float = 0.1,
                  valid_frac: float = 0.1, seed: int = 0,
                  stratified: bool = False) -> SplitDataset:
    """Random train/valid/test split.

    Test takes floor(test_frac * N) triples; valid takes floor(valid_frac *
    remaining) of what is left (the validation fraction applies to the
    remainder, not the total). Sampling is global over all triples unless
    `stratified`, which applies the fractions per relation. Splits leaving a
    relation without training triples are rejected.
    """
    if not (test_frac > 0 and valid_frac > 0):
        raise ValueError("test_frac and valid_frac must be positive")
    if test_frac + (1.0 - test_frac) * valid_frac >= 1.0:
        raise ValueError("split fractions leave no training data")
    all_triples = list(ds.triples())
    n = len(all_triples)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)

    def assign(indices: np.ndarray) -> tuple[set, set]:
        perm = rng.permutation(indices)
        n_test = int(test_frac * perm.shape[0])
        n_valid = int(valid_frac * (perm.shape[0] - n_test))
        return set(perm[:n_test].tolist()), set(perm[n_test:n_test + n_valid].tolist())

    if stratified:
        test_idx: set = set()
        valid_idx: set = set()
        rel_of = np.fromiter((r for _, r, _ in all_triples), dtype=np.int64, count=n)
        for r in range(ds.n_relations):
            t_idx, v_idx = assign(np.flatnonzero(rel_of == r))
            test_idx |= t_idx
            valid_idx |= v_idx
    else:
        test_idx, valid_idx = assign(np.arange(n))

    buckets: dict[str, list[tuple[int, int, int]]] = {"train": [], "valid": [], "test": []}
    for i, triple in enumerate(all_triples):
        if i in test_idx:
            buckets["test"].append(triple)
        elif i in valid_idx:
            buckets["valid"].append(triple)
        else:
            buckets["train"].append(triple)

    parts = {name: MultiRelationalDataset.from_triples(ds.entity_names, ds.relation_names,
                                                       triples)
             for name, triples in buckets.items()}
    for r, name in enumerate(ds.relation_names):
        if len(parts["train"].relations[r]) == 0:
            raise SplitRejectionError(name)
    return SplitDataset(parts["train"], parts["valid"], parts["test"],
                        seed=seed, test_frac=test_frac, valid_frac=valid_frac,
                        stratified=stratified)


def make_folds(ds: MultiRelationalDataset, n_folds: int, seed: int,
               test_frac: float = 0.1, valid_frac: float = 0.1,
               mode: str = "resample") -> list[SplitDataset]:
    """Cross-validation folds.

    `resample` (default) draws n_folds independent random splits with derived
    seeds, re-randomizing the test set each round; `partition` assigns each
    triple to exactly one fold's test set and resplits the remainder into
    train/valid per fold.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if mode == "resample":
        return [split_dataset(ds, test_frac=test_frac, valid_frac=valid_frac,
                              seed=derive_seed(seed, STREAM_FOLD, i))
                for i in range(n_folds)]
    if mode != "partition":
        raise ValueError(f"unknown fold mode {mode!r}")
    all_triples = list(ds.triples())
    n = len(all_triples)
    perm = np.random.default_rng(seed).permutation(n)
    chunks = np.array_split(perm, n_folds)
    folds = []
    for i, chunk in enumerate(chunks):
        test_set = set(chunk.tolist())
        rest = [idx for idx in perm.tolist() if idx not in test_set]
        valid_rng = np.random.default_rng(derive_seed(seed, STREAM_FOLD, i))
        n_valid = int(valid_frac * len(rest))
        valid_set = set(valid_rng.permutation(np.asarray(rest, dtype=np.int64))[:n_valid].tolist())
        buckets: dict[str, list[tuple[int, int, int]]] = {"train": [], "valid": [], "test": []}
        for idx, triple in enumerate(all_triples):
            if idx in test_set:
                buckets["test"].append(triple)
            elif idx in valid_set:
                buckets["valid"].append(triple)
            else:
                buckets["train"].append(triple)
        parts = {name: MultiRelationalDataset.from_triples(ds.entity_names,
                                                           ds.relation_names, triples)
                 for name, triples in buckets.items()}
        for r, name in enumerate(ds.relation_names):
            if len(parts["train"].relations[r]) == 0:
                raise SplitRejectionError(name)
        folds.append(SplitDataset(parts["train"], parts["valid"], parts["test"],
                                  seed=seed, test_frac=1.0 / n_folds,
                                  valid_frac=valid_frac))
    return folds
