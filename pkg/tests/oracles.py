"""Independent reference computations used to check the library.

Nothing here imports the code under test except for plain data types.
"""

from __future__ import annotations

import itertools

import numpy as np


def eiou_bruteforce(Y_a, Y_v) -> np.ndarray:
    T = len(Y_a)
    r = np.zeros((T, T))
    for i in range(T):
        a = {c for c, on in enumerate(Y_a[i]) if on}
        for j in range(T):
            v = {c for c, on in enumerate(Y_v[j]) if on}
            union = a | v
            r[i, j] = 1.0 if not union else len(a & v) / len(union)
    return r


def runs(column) -> list[tuple[int, int]]:
    out, start = [], None
    for t, on in enumerate(list(column) + [0]):
        if on and start is None:
            start = t
        elif not on and start is not None:
            out.append((start, t - 1))
            start = None
    return out


def iou(a, b) -> float:
    sa = set(range(a[0], a[1] + 1))
    sb = set(range(b[0], b[1] + 1))
    return len(sa & sb) / len(sa | sb)


def max_matching(preds, gts, threshold) -> int:
    """Largest one-to-one matching among pairs with IoU >= threshold (exhaustive)."""
    best = 0
    k = min(len(preds), len(gts))
    for size in range(k, 0, -1):
        for ps in itertools.combinations(range(len(preds)), size):
            for gs in itertools.permutations(range(len(gts)), size):
                if all(iou(preds[p], gts[g]) >= threshold for p, g in zip(ps, gs)):
                    return size
    return best


def event_counts_exhaustive(pred, gt, threshold=0.5) -> tuple[int, int, int]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    tp = fp = fn = 0
    for c in range(pred.shape[1]):
        pr, gr = runs(pred[:, c]), runs(gt[:, c])
        m = max_matching(pr, gr, threshold)
        tp += m
        fp += len(pr) - m
        fn += len(gr) - m
    return tp, fp, fn


def _ln(x, gain, bias, eps=1e-5):
    out = np.empty_like(x)
    for i, row in enumerate(x):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = [(v - mu) / np.sqrt(var + eps) for v in row]
    return out * gain + bias


def leap_block_reference(labels, feats, p) -> dict:
    """Straight-line evaluation of one label-projection block from raw arrays."""
    d = labels.shape[1]
    q = labels @ p["w_q"]
    k = feats @ p["w_k"]
    v = feats @ p["w_v"]
    logits = np.array([[q[c] @ k[t] / np.sqrt(d) for t in range(len(feats))] for c in range(len(labels))])
    att = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    mixed = labels + _ln(att @ v, p["ln1_gain"], p["ln1_bias"])
    hidden = np.maximum(mixed @ p["ff_w1"] + p["ff_b1"], 0.0)
    refined = mixed + _ln(hidden @ p["ff_w2"] + p["ff_b2"], p["ln2_gain"], p["ln2_bias"])
    return {"refined": refined, "attention": att, "logits": logits}


def central_difference(f, x: np.ndarray, step=1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g
