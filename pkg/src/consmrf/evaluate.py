"""Ranking evaluation: sampled-negative candidate sets, AUC / precision / recall.

One evaluation unit is a (relation, subject) with at least one held-out
positive: its candidates are the held-out objects plus `m_neg` distinct
objects unlinked in *any* split, ranked by model score. Metrics are
macro-averaged over units. Units whose negative sampling saturates (subjects
linked to nearly every entity) are skipped and counted.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy import stats as sp_stats

from .dataset import ALL_SPLITS, SplitDataset, sample_unlinked_object
from .dataset import make_folds  # noqa: F401  (re-export: folds feed this module)
from .errors import SaturationError
from .rng import STREAM_EVAL, derive_seed


@dataclass
class CandidateSet:
    """Candidates of one (relation, subject) unit: held-out positives first."""

    relation: int
    subject: int
    positives: np.ndarray
    negatives: np.ndarray


def build_candidate_set(splits: SplitDataset, r: int, s: int, m_neg: int,
                        rng: np.random.Generator, split: str = "test") -> CandidateSet:
    """Collect the unit's held-out positives and draw m_neg distinct negatives.

    Negatives are rejected against every split, so no observed triple can leak
    into the negative pool.
    """
    part = getattr(splits, split)
    positives = part.relations[r].objects_of(s)
    if positives.size == 0:
        raise ValueError(f"subject {s} has no {split} positives under relation {r}")
    drawn: list[int] = []
    seen: set[int] = set()
    for _ in range(m_neg):
        cand = sample_unlinked_object(splits, s, r, ALL_SPLITS, rng, exclude=seen)
        seen.add(cand)
        drawn.append(cand)
    return CandidateSet(r, s, positives, np.asarray(drawn, dtype=np.int64))


def rank_metrics(pos_scores, neg_scores, k: int) -> tuple[float, float, float]:
    """(AUC, precision@k, recall@k) for one scored unit.

    AUC counts score ties as half-wins. The top-k ranking breaks ties by the
    fixed candidate order (positives first, then negatives in draw order), so
    results are deterministic.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    wins = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    auc = (wins + 0.5 * ties) / (pos.size * neg.size)
    order = np.argsort(-np.concatenate([pos, neg]), kind="stable")
    hits = int(np.sum(order[:k] < pos.size))
    return float(auc), hits / k, hits / pos.size


@dataclass
class RelationMetrics:
    units: int = 0
    auc: float = 0.0
    precision: float = 0.0
    recall: float = 0.0


@dataclass
class EvalReport:
    """Macro metrics over all (relation, subject) units plus per-relation rows."""

    top_k: int
    m_neg: int
    seed: int
    units: int = 0
    skipped: int = 0
    macro_auc: float = float("nan")
    macro_precision: float = float("nan")
    macro_recall: float = float("nan")
    per_relation: dict[int, RelationMetrics] = field(default_factory=dict)
    unit_metrics: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    def write_csv(self, path: Union[str, Path], relation_names: list[str]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as out:
            writer = csv.writer(out)
            writer.writerow(["relation", "units", "auc", "precision_at_k", "recall_at_k"])
            for r in sorted(self.per_relation):
                m = self.per_relation[r]
                writer.writerow([relation_names[r], m.units, m.auc, m.precision, m.recall])
            writer.writerow(["__macro__", self.units, self.macro_auc,
                             self.macro_precision, self.macro_recall])

    def summary(self, relation_names: list[str]) -> str:
        lines = [f"evaluation over {self.units} (relation, subject) units "
                 f"(m_neg={self.m_neg}, k={self.top_k}, skipped={self.skipped})"]
        for r in sorted(self.per_relation):
            m = self.per_relation[r]
            lines.append(f"  {relation_names[r]}: units={m.units} auc={m.auc:.4f} "
                         f"p@{self.top_k}={m.precision:.4f} r@{self.top_k}={m.recall:.4f}")
        lines.append(f"  macro: auc={self.macro_auc:.4f} "
                     f"p@{self.top_k}={self.macro_precision:.4f} "
                     f"r@{self.top_k}={self.macro_recall:.4f}")
        return "\n".join(lines)


def evaluate_model(model, splits: SplitDataset, m_neg: int, k: int, seed: int,
                   split: str = "test") -> EvalReport:
    """Score every (relation, subject) unit of the held-out split.

    `model` needs a `score_candidates(relation, subject, objects)` method.
    Each unit draws its negatives from a seed derived per (relation, subject),
    so the report does not depend on unit ordering.
    """
    part = getattr(splits, split)
    report = EvalReport(top_k=k, m_neg=m_neg, seed=seed)
    sums = {}
    all_sums = np.zeros(3)
    for r in range(part.n_relations):
        subjects = np.unique(part.relations[r].subjects)
        for s in subjects.tolist():
            rng = np.random.default_rng(derive_seed(seed, STREAM_EVAL, r, s))
            try:
                cands = build_candidate_set(splits, r, s, m_neg, rng, split=split)
            except SaturationError:
                report.skipped += 1
                continue
            objects = np.concatenate([cands.positives, cands.negatives])
            scores = model.score_candidates(r, s, objects)
            auc, prec, rec = rank_metrics(scores[:cands.positives.size],
                                          scores[cands.positives.size:], k)
            report.unit_metrics.append((r, s, auc, prec, rec))
            sums.setdefault(r, []).append((auc, prec, rec))
            all_sums += (auc, prec, rec)
    report.units = len(report.unit_metrics)
    if report.units:
        report.macro_auc, report.macro_precision, report.macro_recall = (
            all_sums / report.units)
    for r, rows in sums.items():
        arr = np.asarray(rows)
        report.per_relation[r] = RelationMetrics(arr.shape[0], *arr.mean(axis=0))
    return report


def confidence_half_width(values, level: float = 0.99) -> float:
    """Student-t confidence half-width of the mean over independent folds."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    t = sp_stats.t.ppf(0.5 + level / 2.0, df=arr.size - 1)
    return float(t * arr.std(ddof=1) / np.sqrt(arr.size))


def aggregate_fold_reports(reports: list[EvalReport]) -> dict[str, float]:
    """Mean and 99% confidence half-width of the macro metrics across folds."""
    out = {}
    for name in ("auc", "precision", "recall"):
        values = [getattr(rep, f"macro_{name}") for rep in reports]
        out[name] = float(np.mean(values))
        out[f"{name}_ci99"] = confidence_half_width(values)
    return out
