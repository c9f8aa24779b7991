"""Independent per-pixel reference implementations used by several test files."""

import math

import numpy as np


def confusion_counts(pred, gt, cls):
    tp = fp = fn = tn = 0
    for p, g in zip(pred.reshape(-1).tolist(), gt.reshape(-1).tolist()):
        if p == cls and g == cls:
            tp += 1
        elif p == cls:
            fp += 1
        elif g == cls:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def class_scores(pred, gt, num_classes):
    out = []
    for c in range(num_classes):
        tp, fp, fn, _ = confusion_counts(pred, gt, c)
        if tp + fp + fn == 0:
            out.append((1.0, 1.0))
        else:
            out.append((tp / (tp + fp + fn), 2 * tp / (2 * tp + fp + fn)))
    return out


def height_errors(pred, gt, changed):
    n = n_c = n_rel = 0
    abs_sum = sq_sum = c_sq = rel = 0.0
    for p, g, m in zip(pred.reshape(-1).tolist(), gt.reshape(-1).tolist(), changed.reshape(-1).tolist()):
        e = p - g
        n += 1
        abs_sum += abs(e)
        sq_sum += e * e
        if m:
            n_c += 1
            c_sq += e * e
            if abs(g) >= 1e-6:
                n_rel += 1
                rel += abs(e) / abs(g)
    return (
        abs_sum / n,
        math.sqrt(sq_sum / n),
        math.sqrt(c_sq / n_c) if n_c else None,
        rel / n_rel if n_rel else None,
    )


def naive_scan(u, delta, a, b, c):
    """Scalar triple loop of the recurrence, written independently of the vectorised op."""
    length, d = u.shape
    n = a.shape[1]
    y = np.zeros((length, d))
    for ch in range(d):
        h = [0.0] * n
        for t in range(length):
            acc = 0.0
            for k in range(n):
                h[k] = math.exp(delta[t, ch] * a[ch, k]) * h[k] + delta[t, ch] * b[t, k] * u[t, ch]
                acc += c[t, k] * h[k]
            y[t, ch] = acc
    return y


def random_scan_inputs(rng, length, d, n):
    return (
        rng.normal(size=(length, d)),
        rng.uniform(0.01, 1.0, size=(length, d)),
        -rng.uniform(0.05, 3.0, size=(d, n)),
        rng.normal(size=(length, n)),
        rng.normal(size=(length, n)),
    )
