"""Task metrics: classification accuracy and retrieval CMC rank-1 / mAP.

Retrieval metrics follow the standard protocol: per query, gallery items
sharing both the query's id and camera are excluded (single-gallery-shot when
no camera ids exist), queries without any relevant gallery item are skipped.
"""

from __future__ import annotations

import numpy as np


def accuracy(preds, labels) -> float:
    """Percentage of matching predictions."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("cannot compute accuracy of an empty batch")
    return float(np.mean(preds == labels) * 100.0)


def _match_lists(rankings, query_ids, gallery_ids, query_cams=None, gallery_cams=None):
    """Per-query boolean relevance lists in ranked order, camera-filtered."""
    rankings = np.asarray(rankings)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    if rankings.shape[0] != query_ids.shape[0]:
        raise ValueError("one ranking row per query required")
    out = []
    for q in range(rankings.shape[0]):
        order = rankings[q]
        keep = np.ones(order.shape[0], dtype=bool)
        if query_cams is not None and gallery_cams is not None:
            same_id = gallery_ids[order] == query_ids[q]
            same_cam = np.asarray(gallery_cams)[order] == np.asarray(query_cams)[q]
            keep = ~(same_id & same_cam)
        matches = (gallery_ids[order] == query_ids[q])[keep]
        out.append(matches)
    return out


def cmc_rank1(rankings, query_ids, gallery_ids, query_cams=None, gallery_cams=None) -> float:
    """Percentage of queries whose top-ranked kept gallery item is relevant."""
    hits = 0
    valid = 0
    for matches in _match_lists(rankings, query_ids, gallery_ids, query_cams, gallery_cams):
        if not matches.any():
            continue
        valid += 1
        hits += int(matches[0])
    if valid == 0:
        raise ValueError("no query has a relevant gallery item")
    return 100.0 * hits / valid


def mean_average_precision(rankings, query_ids, gallery_ids, query_cams=None, gallery_cams=None) -> float:
    """Mean over valid queries of average precision, as a percentage."""
    aps = []
    for matches in _match_lists(rankings, query_ids, gallery_ids, query_cams, gallery_cams):
        if not matches.any():
            continue
        cum = np.cumsum(matches)
        precision = cum / np.arange(1, matches.size + 1)
        aps.append(float((precision * matches).sum() / matches.sum()))
    if not aps:
        raise ValueError("no query has a relevant gallery item")
    return 100.0 * float(np.mean(aps))
