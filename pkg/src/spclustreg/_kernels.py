"""Compiled inner loops for sequential membership sweeps."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sequential_sweep(indptr, indices, data, loglik, labels, phi):
    """Update ``labels`` in place site by site; returns the number of changes.

    Each site takes the argmax of ``loglik[i, g] + phi * sum_j w_ij [g_j == g]``
    using the labels as they stand at that moment.  Ties go to the lowest g.
    """
    n, G = loglik.shape
    score = np.empty(G)
    changed = 0
    for i in range(n):
        for g in range(G):
            score[g] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            score[labels[indices[k]]] += data[k]
        best = 0
        best_val = loglik[i, 0] + phi * score[0]
        for g in range(1, G):
            v = loglik[i, g] + phi * score[g]
            if v > best_val:
                best_val = v
                best = g
        if best != labels[i]:
            labels[i] = best
            changed += 1
    return changed


@njit(cache=True, nogil=True)
def sequential_fuzzy_sweep(indptr, indices, data, loglik, labels, phi, delta, probs):
    """Sequential sweep that also writes each site's soft memberships into ``probs``.

    Row i of ``probs`` is the normalized ``exp(delta * score)`` computed from
    the current labels of i's neighbours, after which ``labels[i]`` is set to
    its argmax.
    """
    n, G = loglik.shape
    score = np.empty(G)
    changed = 0
    for i in range(n):
        for g in range(G):
            score[g] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            score[labels[indices[k]]] += data[k]
        best = 0
        for g in range(G):
            score[g] = loglik[i, g] + phi * score[g]
            if score[g] > score[best]:
                best = g
        top = score[best]
        total = 0.0
        for g in range(G):
            probs[i, g] = np.exp(delta * (score[g] - top))
            total += probs[i, g]
        for g in range(G):
            probs[i, g] /= total
        if best != labels[i]:
            labels[i] = best
            changed += 1
    return changed
