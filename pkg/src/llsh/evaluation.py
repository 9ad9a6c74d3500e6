"""Frame-level ROC-AUC in the micro (concatenate) and macro (average) protocols."""

from __future__ import annotations

import warnings

import numpy as np


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-D")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return scores, labels.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2.

    Computed from midranks (Mann-Whitney), equivalent to trapezoidal ROC
    integration. Single-class input is an error, never a silent 0.5.
    """
    scores, labels = _validate(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc undefined: labels contain a single class")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    below = np.concatenate(([0], np.cumsum(counts)))
    midranks = below[inverse] + (counts[inverse] + 1) / 2.0
    return float((midranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def micro_auc(run) -> float:
    """AUC over all videos' frames concatenated."""
    if not run:
        raise ValueError("empty run")
    scores = np.concatenate([np.asarray(s, dtype=np.float64) for s, _ in run])
    labels = np.concatenate([np.asarray(l) for _, l in run])
    return roc_auc(scores, labels)


def macro_auc(run) -> float:
    """Unweighted mean of per-video AUCs; videos lacking both classes are skipped."""
    if not run:
        raise ValueError("empty run")
    aucs = []
    for i, (scores, labels) in enumerate(run):
        labels = np.asarray(labels)
        if len(np.unique(labels)) < 2:
            warnings.warn(f"video {i} has a single label class; excluded from macro-AUC")
            continue
        aucs.append(roc_auc(scores, labels))
    if not aucs:
        raise ValueError("no video has both label classes; macro-AUC undefined")
    return float(np.mean(aucs))
