import numpy as np


def weighted_accuracy(preds, labels):
    """Overall fraction of correct predictions."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("predictions and labels must be non-empty and of equal length")
    return float(np.mean(preds == labels))


def unweighted_accuracy(preds, labels):
    """Mean per-class recall over the classes present in ``labels``."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("predictions and labels must be non-empty and of equal length")
    recalls = [np.mean(preds[labels == c] == c) for c in np.unique(labels)]
    return float(np.mean(recalls))
