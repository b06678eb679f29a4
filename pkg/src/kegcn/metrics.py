"""Ranking and classification metrics.

Determinism conventions: candidate ranking sorts ascending by distance
with ties broken by ascending candidate id; top-k for label scores sorts
descending by score with ties broken by ascending class id; argmax ties
go to the lowest class id.  NDCG uses binary gains with discount
1/log2(1+position).
"""

from __future__ import annotations

import numpy as np


def rank_of_truth(distances, truth) -> int:
    """1-based rank of `truth` among (candidate-id, distance) pairs."""
    found = False
    d_true = 0.0
    for cid, d in distances:
        if cid == truth:
            d_true = d
            found = True
            break
    if not found:
        raise ValueError(f"truth {truth!r} not among candidates")
    rank = 1
    for cid, d in distances:
        if d < d_true or (d == d_true and cid < truth):
            rank += 1
    return rank


def ranks_from_distance_matrix(dist: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """Row q's rank of candidate truths[q]; same ordering convention as
    rank_of_truth, vectorized over all candidates per row."""
    dist = np.asarray(dist, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    q = dist.shape[0]
    ids = np.arange(dist.shape[1])
    ranks = np.empty(q, dtype=np.int64)
    for i in range(q):
        dt = dist[i, truths[i]]
        row = dist[i]
        ranks[i] = 1 + int(np.sum(row < dt)) + int(np.sum((row == dt) & (ids < truths[i])))
    return ranks


def mrr(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("mrr of an empty rank list")
    return float(np.mean(1.0 / ranks))


def hits_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("hits@k of an empty rank list")
    return float(np.mean(ranks <= k))


def accuracy(pred_labels, true_labels) -> float:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.size == 0:
        raise ValueError("accuracy of an empty test set")
    return float(np.mean(pred == true))


def argmax_prediction(scores_row: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class id
    return int(np.argmax(np.asarray(scores_row)))


def top_k_classes(scores_row: np.ndarray, k: int) -> np.ndarray:
    row = np.asarray(scores_row, dtype=np.float64)
    order = np.argsort(-row, kind="stable")
    return order[:k]


def precision_at_k(scores_row, truth, k: int) -> float:
    truth = set(truth)
    if not truth:
        return 0.0
    top = top_k_classes(scores_row, k)
    return float(sum(1 for c in top if int(c) in truth)) / float(k)


def ndcg_at_k(scores_row, truth, k: int) -> float:
    truth = set(truth)
    if not truth:
        return 0.0
    top = top_k_classes(scores_row, k)
    dcg = 0.0
    for pos, c in enumerate(top, start=1):
        if int(c) in truth:
            dcg += 1.0 / np.log2(1.0 + pos)
    ideal_hits = min(len(truth), k)
    idcg = sum(1.0 / np.log2(1.0 + pos) for pos in range(1, ideal_hits + 1))
    return float(dcg / idcg)
