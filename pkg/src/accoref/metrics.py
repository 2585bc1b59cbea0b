"""Coreference metrics: MUC, B-cubed, CEAF (phi4) and their aggregation.

All three follow the CoNLL scorer conventions: singleton clusters are
dropped before scoring, and corpus-level numbers sum the per-document
numerators and denominators before dividing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Span = tuple[int, int]
Cluster = frozenset
ClusterSet = list

__all__ = [
    "MetricReport",
    "drop_singletons",
    "muc",
    "b_cubed",
    "ceaf_phi4",
    "avg_f1",
    "max_weight_assignment",
    "corpus_report",
    "write_conll_response",
]


def drop_singletons(clusters: Iterable) -> list[frozenset]:
    return [frozenset(c) for c in clusters if len(c) >= 2]


def _prf(p_num: float, p_den: float, r_num: float, r_den: float) -> tuple[float, float, float]:
    p = float(p_num / p_den) if p_den > 0 else 0.0
    r = float(r_num / r_den) if r_den > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def _mention_map(clusters: Sequence[frozenset]) -> dict:
    out = {}
    for k, cluster in enumerate(clusters):
        for m in cluster:
            out[m] = k
    return out


# ---------------------------------------------------------------------------
# MUC
# ---------------------------------------------------------------------------


def _muc_counts(gold: Sequence[frozenset], pred: Sequence[frozenset]):
    """Recall counts sum |S| - |partition of S by pred| over gold clusters;
    precision swaps the roles."""

    def one_side(keys, others):
        other_map = _mention_map(others)
        num = den = 0
        for cluster in keys:
            parts = set()
            unmatched = 0
            for m in cluster:
                if m in other_map:
                    parts.add(other_map[m])
                else:
                    unmatched += 1
            num += len(cluster) - (len(parts) + unmatched)
            den += len(cluster) - 1
        return num, den

    r_num, r_den = one_side(gold, pred)
    p_num, p_den = one_side(pred, gold)
    return p_num, p_den, r_num, r_den


def muc(gold, pred) -> tuple[float, float, float]:
    gold = drop_singletons(gold)
    pred = drop_singletons(pred)
    return _prf(*_muc_counts(gold, pred))


# ---------------------------------------------------------------------------
# B-cubed
# ---------------------------------------------------------------------------


def _b_cubed_counts(gold: Sequence[frozenset], pred: Sequence[frozenset]):
    """Precision averages |G_m n P_m| / |P_m| over mentions of pred clusters;
    mentions absent from the other side earn zero overlap but still count in
    the denominator. Recall is symmetric."""

    def one_side(keys, others):
        other_map = _mention_map(others)
        num = 0.0
        den = 0
        for cluster in keys:
            den += len(cluster)
            for m in cluster:
                k = other_map.get(m)
                if k is not None:
                    num += len(cluster & others[k]) / len(cluster)
        return num, den

    p_num, p_den = one_side(pred, gold)
    r_num, r_den = one_side(gold, pred)
    return p_num, p_den, r_num, r_den


def b_cubed(gold, pred) -> tuple[float, float, float]:
    gold = drop_singletons(gold)
    pred = drop_singletons(pred)
    return _prf(*_b_cubed_counts(gold, pred))


# ---------------------------------------------------------------------------
# CEAF phi4 with an exact assignment solver
# ---------------------------------------------------------------------------


def max_weight_assignment(weights: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Exact max-weight one-to-one assignment (augmenting paths on a padded
    square cost matrix, the classic O(n^3) potentials formulation)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        return 0.0, []
    n_rows, n_cols = weights.shape
    n = max(n_rows, n_cols)
    # Pad to square and negate: the solver below minimizes cost.
    cost = np.zeros((n, n))
    cost[:n_rows, :n_cols] = -weights

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.intp)  # 1-based; col -> row
    way = np.zeros(n + 1, dtype=np.intp)
    INF = float("inf")
    for row in range(1, n + 1):
        match_col[0] = row
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1

    pairs = []
    total = 0.0
    for j in range(1, n + 1):
        r = match_col[j] - 1
        c = j - 1
        if r < n_rows and c < n_cols:
            pairs.append((r, c))
            total += weights[r, c]
    return total, pairs


def _phi4(a: frozenset, b: frozenset) -> float:
    return 2.0 * len(a & b) / (len(a) + len(b))


def _ceaf_counts(gold: Sequence[frozenset], pred: Sequence[frozenset]):
    if not gold or not pred:
        return 0.0, len(pred), 0.0, len(gold)
    sims = np.array([[_phi4(g, p) for p in pred] for g in gold])
    total, _ = max_weight_assignment(sims)
    return total, len(pred), total, len(gold)


def ceaf_phi4(gold, pred) -> tuple[float, float, float]:
    gold = drop_singletons(gold)
    pred = drop_singletons(pred)
    return _prf(*_ceaf_counts(gold, pred))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    muc: tuple[float, float, float]
    b3: tuple[float, float, float]
    ceaf: tuple[float, float, float]

    @property
    def avg_f1(self) -> float:
        return avg_f1(self)

    def to_json(self) -> dict:
        def unpack(t):
            return {"precision": t[0], "recall": t[1], "f1": t[2]}

        return {
            "muc": unpack(self.muc),
            "b_cubed": unpack(self.b3),
            "ceaf_phi4": unpack(self.ceaf),
            "avg_f1": self.avg_f1,
        }


def avg_f1(report: MetricReport) -> float:
    return (report.muc[2] + report.b3[2] + report.ceaf[2]) / 3.0


def corpus_report(gold_docs: Sequence, pred_docs: Sequence) -> MetricReport:
    """Aggregate over documents by summing numerators and denominators."""
    if len(gold_docs) != len(pred_docs):
        raise ValueError(f"gold has {len(gold_docs)} documents, pred {len(pred_docs)}")
    sums = {"muc": [0.0] * 4, "b3": [0.0] * 4, "ceaf": [0.0] * 4}
    for gold, pred in zip(gold_docs, pred_docs):
        gold = drop_singletons(gold)
        pred = drop_singletons(pred)
        for key, counts in (
            ("muc", _muc_counts(gold, pred)),
            ("b3", _b_cubed_counts(gold, pred)),
            ("ceaf", _ceaf_counts(gold, pred)),
        ):
            for k in range(4):
                sums[key][k] += counts[k]
    return MetricReport(
        muc=_prf(*sums["muc"]), b3=_prf(*sums["b3"]), ceaf=_prf(*sums["ceaf"])
    )


def write_conll_response(docs, predictions, path) -> None:
    """Emit predictions in the CoNLL coreference column layout so they can be
    cross-checked with the reference scorer."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc, clusters in zip(docs, predictions):
            starts: dict[int, list[int]] = {}
            ends: dict[int, list[int]] = {}
            singles: dict[int, list[int]] = {}
            for cid, cluster in enumerate(clusters):
                for s, e in cluster:
                    if s == e:
                        singles.setdefault(s, []).append(cid)
                    else:
                        starts.setdefault(s, []).append(cid)
                        ends.setdefault(e, []).append(cid)
            fh.write(f"#begin document ({doc.doc_key}); part 000\n")
            tok = 0
            for sent, spks in zip(doc.sentences, doc.speakers):
                for word, spk in zip(sent, spks):
                    marks = (
                        [f"({c}" for c in starts.get(tok, [])]
                        + [f"({c})" for c in singles.get(tok, [])]
                        + [f"{c})" for c in ends.get(tok, [])]
                    )
                    coref = "|".join(marks) if marks else "-"
                    cols = [doc.doc_key, "0", str(tok), word, "-", "-", "-", "-", "-", spk, "-", coref]
                    fh.write(" ".join(cols) + "\n")
                    tok += 1
                fh.write("\n")
            fh.write("#end document\n")
