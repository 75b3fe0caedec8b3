"""Versioned binary model checkpoints.

Layout: 4-byte magic, 4-byte little-endian header length, UTF-8 JSON header
(kind, dimensions, shape, hyperparameters, caller extras), then the parameter
matrices as raw little-endian float64 in a fixed, kind-dependent order:

* consensus model: consensus matrix, then per relation (entity factors,
  relation weights, duals);
* shared model: entity factors, then per-relation weights;
* decoupled model: per target (entity factors, then weights for each relation).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .baselines import DmfModel, SharedModel
from .errors import ParseError
from .factors import ConsensusState, Hyperparams, RelationParams, WeightShape
from .trainer import TrainedModel

_MAGIC = b"CMRF"
_FORMAT_VERSION = 1


def _model_arrays(model) -> list[np.ndarray]:
    if model.kind == "consmrf":
        arrays = [model.consensus_state.consensus]
        for p, v in zip(model.relations, model.consensus_state.duals):
            arrays.extend([p.entity_factors, p.relation_weights, v])
        return arrays
    if model.kind == "cd":
        return [model.entity_factors, *model.relation_weights]
    if model.kind == "dmf":
        arrays = []
        for a, row in zip(model.entity_factors, model.relation_weights):
            arrays.append(a)
            arrays.extend(row)
        return arrays
    raise ValueError(f"unknown model kind {model.kind!r}")


def save_checkpoint(path: Union[str, Path], model, extra: dict | None = None) -> None:
    if model.kind == "consmrf":
        n_relations = len(model.relations)
    elif model.kind == "cd":
        n_relations = len(model.relation_weights)
    else:
        n_relations = len(model.entity_factors)
    header = {
        "format_version": _FORMAT_VERSION,
        "kind": model.kind,
        "n_entities": model.n_entities,
        "n_relations": n_relations,
        "k": model.hp.k,
        "shape": model.shape.value,
        "rounds": model.rounds,
        "hyperparams": model.hp.to_dict(),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as out:
        out.write(_MAGIC)
        out.write(struct.pack("<I", len(blob)))
        out.write(blob)
        for arr in _model_arrays(model):
            out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: Union[str, Path]):
    """Reconstruct the trained model (curve and timings are not stored)."""
    with open(path, "rb") as handle:
        if handle.read(4) != _MAGIC:
            raise ParseError(path, 1, "not a checkpoint file")
        (header_len,) = struct.unpack("<I", handle.read(4))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        if header["format_version"] != _FORMAT_VERSION:
            raise ParseError(path, 1,
                             f"unsupported checkpoint version {header['format_version']}")
        payload = handle.read()

    n_entities = header["n_entities"]
    n_relations = header["n_relations"]
    hp = Hyperparams.from_dict(header["hyperparams"])
    shape = WeightShape(header["shape"])
    k = header["k"]
    w_shape = shape.param_shape(k)

    offset = 0

    def take(*dims: int) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(dims).astype(np.float64)

    kind = header["kind"]
    if kind == "consmrf":
        consensus = take(n_entities, k)
        relations = []
        duals = []
        for _ in range(n_relations):
            a = take(n_entities, k)
            w = take(*w_shape)
            duals.append(take(n_entities, k))
            relations.append(RelationParams(a, w, shape))
        model = TrainedModel(relations, ConsensusState(consensus, duals),
                             header["rounds"], [], hp, n_entities)
    elif kind == "cd":
        a = take(n_entities, k)
        weights = [take(*w_shape) for _ in range(n_relations)]
        model = SharedModel(a, weights, shape, hp, rounds=header["rounds"])
    elif kind == "dmf":
        factors = []
        weights = []
        for _ in range(n_relations):
            factors.append(take(n_entities, k))
            weights.append([take(*w_shape) for _ in range(n_relations)])
        model = DmfModel(factors, weights, shape, hp, rounds=header["rounds"])
    else:
        raise ParseError(path, 1, f"unknown model kind {kind!r}")
    model.checkpoint_extra = header["extra"]
    return model
