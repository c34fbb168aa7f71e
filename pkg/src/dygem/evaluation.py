"""Downstream task evaluation: timespan regression, partner prediction with
and without a timespan tolerance, and vertex classification."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .training import normalize_time
from .walks import Corpus

DEFAULT_EPSILONS = tuple(round(0.05 * i, 2) for i in range(1, 11))


@dataclass
class ConfusionCounts:
    """Per-class true-positive / false-positive / false-negative tallies."""

    counts: dict = field(default_factory=dict)

    def _row(self, cls):
        if cls not in self.counts:
            self.counts[cls] = [0, 0, 0]
        return self.counts[cls]

    def add(self, true_cls, pred_cls) -> None:
        if true_cls == pred_cls:
            self._row(true_cls)[0] += 1
        else:
            self._row(pred_cls)[1] += 1
            self._row(true_cls)[2] += 1

    def total_instances(self) -> int:
        return sum(tp + fn for tp, _, fn in self.counts.values())


def micro_macro_f1(conf: ConfusionCounts) -> tuple[float, float]:
    """Micro averages the counts before the F1 ratio; macro averages the
    per-class F1 values, scoring empty classes (0/0) as 0."""
    rows = list(conf.counts.values())
    if not rows or all(tp + fp + fn == 0 for tp, fp, fn in rows):
        raise ValueError("confusion counts are empty")
    tp_sum = sum(r[0] for r in rows)
    denom = sum(2 * r[0] + r[1] + r[2] for r in rows)
    micro = 2.0 * tp_sum / denom if denom else 0.0
    per_class = [(2.0 * tp / (2 * tp + fp + fn)) if (2 * tp + fp + fn) else 0.0
                 for tp, fp, fn in rows]
    return micro, float(np.mean(per_class))


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"need equal nonzero lengths, got {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def predict_toe(r_i: np.ndarray, r_j: np.ndarray, w_toe: np.ndarray) -> float:
    """Linear timespan prediction in normalized [0, 1) space; symmetric in
    its two arguments by construction."""
    return float(np.asarray(w_toe).reshape(-1) @ (r_i + r_j))


@dataclass
class EvalReport:
    task: str
    metrics: dict
    sweep: list | None = None
    wall_s: float = 0.0

    def to_json(self, with_timing: bool = False) -> str:
        body = {"task": self.task, "metrics": self.metrics}
        if self.sweep is not None:
            body["sweep"] = self.sweep
        if with_timing:
            body["wall_s"] = round(self.wall_s, 3)
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        lines = [f"== {self.task} =="]
        for key in sorted(self.metrics):
            lines.append(f"  {key:<24} {self.metrics[key]}")
        if self.sweep:
            lines.append("  epsilon   precision")
            for eps, prec in self.sweep:
                lines.append(f"  {eps:<9} {prec:.6f}")
        return "\n".join(lines) + "\n"


def consecutive_pairs(corpus: Corpus) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Consecutive real (query, partner, toe) triples from every sequence."""
    qs, ps, toes = [], [], []
    for s in corpus.sequences:
        for i in range(s.real_len - 1):
            qs.append(s.vids[i])
            ps.append(s.vids[i + 1])
            toes.append(s.toes[i + 1])
    return (np.asarray(qs, dtype=np.int64), np.asarray(ps, dtype=np.int64),
            np.asarray(toes, dtype=np.int64))


def _unit_rows(table: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(table, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, table / safe, 0.0)


def _partner_argmax(queries: np.ndarray, table: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Cosine-similarity argmax over all real vertices, the query itself
    excluded. Zero-norm rows score 0 against everything."""
    n_real = table.shape[0] - 1
    unit = _unit_rows(table[:n_real])
    out = np.empty(len(queries), dtype=np.int64)
    for lo in range(0, len(queries), chunk):
        idx = queries[lo:lo + chunk]
        sims = unit[idx] @ unit.T
        sims[np.arange(len(idx)), idx] = -np.inf
        out[lo:lo + chunk] = np.argmax(sims, axis=1)
    return out


def static_edge_prediction(test: Corpus, table: np.ndarray) -> EvalReport:
    """Partner retrieval as multi-class classification.

    Every consecutive pair contributes one query; the predicted partner is
    the cosine-nearest vertex row (a monotone sigmoid rescaling is omitted
    since it cannot change the argmax), and confusion counts accumulate per
    partner class.
    """
    t0 = time.perf_counter()
    queries, partners, _ = consecutive_pairs(test)
    if len(queries) == 0:
        raise ValueError("test corpus has no consecutive pairs")
    preds = _partner_argmax(queries, table)
    conf = ConfusionCounts()
    for true_p, pred_p in zip(partners, preds):
        conf.add(int(true_p), int(pred_p))
    micro, macro = micro_macro_f1(conf)
    return EvalReport(task="static_edge_prediction",
                      metrics={"micro_f1": micro, "macro_f1": macro,
                               "queries": int(len(queries))},
                      wall_s=time.perf_counter() - t0)


def toe_prediction(test: Corpus, table: np.ndarray, w_toe: np.ndarray,
                   time_unit: float = 1.0) -> EvalReport:
    """Timespan regression error over test pairs, in normalized space.

    An inverse-transformed summary (back to raw time units) is included for
    reading convenience only.
    """
    t0 = time.perf_counter()
    queries, partners, toes = consecutive_pairs(test)
    if len(queries) == 0:
        raise ValueError("test corpus has no consecutive pairs")
    truth = normalize_time(toes.astype(np.float64) / time_unit)
    w = np.asarray(w_toe).reshape(-1)
    preds = (table[queries] + table[partners]) @ w
    err = rmse(preds, truth)
    base = rmse(np.full_like(truth, truth.mean()), truth)
    clip = np.clip(preds, 0.0, 1.0 - 1e-12)
    metrics = {
        "rmse": err,
        "constant_mean_rmse": base,
        "pairs": int(len(queries)),
        "mean_true_raw": float(np.mean(np.tan(np.pi * truth / 2.0)) * time_unit),
        "mean_pred_raw": float(np.mean(np.tan(np.pi * clip / 2.0)) * time_unit),
    }
    return EvalReport(task="toe_prediction", metrics=metrics,
                      wall_s=time.perf_counter() - t0)


def time_aware_edge_prediction(test: Corpus, table: np.ndarray, w_toe: np.ndarray,
                               thresholds=DEFAULT_EPSILONS,
                               time_unit: float = 1.0) -> EvalReport:
    """Joint task on positive pairs only: a pair counts as correct at
    tolerance eps when the partner argmax is right and the absolute
    normalized-timespan error is within eps. Precision is non-decreasing in
    eps by construction."""
    t0 = time.perf_counter()
    queries, partners, toes = consecutive_pairs(test)
    if len(queries) == 0:
        raise ValueError("test corpus has no consecutive pairs")
    preds = _partner_argmax(queries, table)
    hit = preds == partners
    truth = normalize_time(toes.astype(np.float64) / time_unit)
    w = np.asarray(w_toe).reshape(-1)
    toe_err = np.abs((table[queries] + table[partners]) @ w - truth)
    sweep = [[float(eps), float(np.mean(hit & (toe_err <= eps)))] for eps in thresholds]
    metrics = {"static_precision": float(np.mean(hit)), "pairs": int(len(queries))}
    return EvalReport(task="time_aware_edge_prediction", metrics=metrics,
                      sweep=sweep, wall_s=time.perf_counter() - t0)


def vertex_classification(train_labels: dict[int, str], test_labels: dict[int, str],
                          table: np.ndarray) -> EvalReport:
    """One-vs-rest logistic regression on the embeddings (regularized linear
    classifier); micro/macro F1 on the held-out vertices."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.multiclass import OneVsRestClassifier

    t0 = time.perf_counter()
    if not train_labels or not test_labels:
        raise ValueError("both label sets must be non-empty")
    train_ids = sorted(train_labels)
    test_ids = sorted(test_labels)
    classes = sorted({*train_labels.values(), *test_labels.values()})
    cls_index = {c: i for i, c in enumerate(classes)}
    x_train = table[train_ids]
    y_train = np.asarray([cls_index[train_labels[v]] for v in train_ids])
    if len(set(y_train.tolist())) < 2:
        raise ValueError("need at least two classes in the training labels")
    clf = OneVsRestClassifier(LogisticRegression(max_iter=1000, C=1.0))
    clf.fit(x_train, y_train)
    preds = clf.predict(table[test_ids])
    conf = ConfusionCounts()
    for v, pred in zip(test_ids, preds):
        conf.add(cls_index[test_labels[v]], int(pred))
    for c in range(len(classes)):
        conf._row(c)
    micro, macro = micro_macro_f1(conf)
    return EvalReport(task="vertex_classification",
                      metrics={"micro_f1": micro, "macro_f1": macro,
                               "train_vertices": len(train_ids),
                               "test_vertices": len(test_ids),
                               "classes": len(classes)},
                      wall_s=time.perf_counter() - t0)


def write_sweep_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,precision\n")
        for eps, prec in report.sweep or []:
            fh.write(f"{eps},{prec!r}\n")


def write_reports(reports: list[EvalReport], json_path, text_path,
                  with_timing: bool = False) -> None:
    body = {r.task: json.loads(r.to_json(with_timing)) for r in reports}
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(body, sort_keys=True, indent=2) + "\n")
    with open(text_path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_text())
