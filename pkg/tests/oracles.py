"""Independent reference implementations used as test oracles.

Deliberately naive: plain loops, no shared code with the package paths
they check.
"""

import itertools
import math

import numpy as np


def reference_descriptor(pixels, x0, y0, patch):
    """Dense SIFT-like descriptor of one patch by explicit per-pixel loops.

    Returns (raw histogram, clamped intermediate, final vector).
    """
    h, w = len(pixels), len(pixels[0])

    def px(y, x):
        return pixels[min(max(y, 0), h - 1)][min(max(x, 0), w - 1)]

    hist = [0.0] * 128
    cell = patch / 4.0
    for ry in range(patch):
        for rx in range(patch):
            y, x = y0 + ry, x0 + rx
            gx = (px(y, x + 1) - px(y, x - 1)) / 2.0
            gy = (px(y + 1, x) - px(y - 1, x)) / 2.0
            mag = math.sqrt(gx * gx + gy * gy)
            if mag == 0.0:
                continue
            theta = math.atan2(gy, gx) % (2 * math.pi)
            o = theta / (2 * math.pi) * 8
            o_lo = math.floor(o)
            o_frac = o - o_lo
            # spatial position in cell units, centered on cell centers
            u = (rx + 0.5) / cell - 0.5
            v = (ry + 0.5) / cell - 0.5
            cx, cy = math.floor(u), math.floor(v)
            fx, fy = u - cx, v - cy
            for by, wy in ((cy, 1 - fy), (cy + 1, fy)):
                for bx, wx in ((cx, 1 - fx), (cx + 1, fx)):
                    if not (0 <= bx < 4 and 0 <= by < 4):
                        continue
                    for ob, wo in ((o_lo % 8, 1 - o_frac), ((o_lo + 1) % 8, o_frac)):
                        hist[(by * 4 + bx) * 8 + ob] += mag * wy * wx * wo
    raw = np.array(hist)
    n = math.sqrt(sum(v * v for v in hist))
    if n == 0:
        return raw, raw.copy(), raw.copy()
    clamped = np.array([min(v / n, 0.2) for v in hist])
    n2 = math.sqrt(sum(v * v for v in clamped))
    return raw, clamped, clamped / n2


def naive_nearest(centers, v):
    best, best_d = None, None
    for j, c in enumerate(centers):
        d = 0.0
        for a, b in zip(c, v):
            d += (a - b) * (a - b)
        if best_d is None or d < best_d:
            best, best_d = j, d
    return best


def naive_sse(centers, data):
    total = 0.0
    for v in data:
        j = naive_nearest(centers, v)
        total += sum((a - b) ** 2 for a, b in zip(centers[j], v))
    return total


def set_partitions(n, k):
    """All partitions of range(n) into exactly k non-empty labelled-by-min groups."""
    for labels in itertools.product(range(k), repeat=n):
        # canonical form: first occurrence order 0, 1, 2, ...
        seen = []
        ok = True
        for lab in labels:
            if lab not in seen:
                if lab != len(seen):
                    ok = False
                    break
                seen.append(lab)
        if ok and len(seen) == k:
            yield labels


def brute_force_sse(points, k):
    points = np.asarray(points, dtype=float)
    best = math.inf
    for labels in set_partitions(len(points), k):
        total = 0.0
        for g in range(k):
            members = points[[i for i, lab in enumerate(labels) if lab == g]]
            mean = members.mean(axis=0)
            total += float(((members - mean) ** 2).sum())
        best = min(best, total)
    return best


def brute_force_dual(x, y, c, kernel=lambda a, b: float(np.dot(a, b))):
    """Exact max of the SVM dual by enumerating every active set.

    Each alpha is fixed at 0, fixed at C, or free; the free block is solved
    from the KKT system of the equality-constrained quadratic.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    K = np.array([[kernel(x[i], x[j]) for j in range(n)] for i in range(n)])
    Q = np.outer(y, y) * K

    def objective(a):
        return float(a.sum() - 0.5 * a @ Q @ a)

    best = -math.inf
    best_alpha = None
    for states in itertools.product((0, 1, 2), repeat=n):
        alpha = np.zeros(n)
        free = [i for i in range(n) if states[i] == 2]
        for i in range(n):
            if states[i] == 1:
                alpha[i] = c
        if free:
            fixed = [i for i in range(n) if states[i] != 2]
            m = len(free)
            # stationarity: Q_ff a_f + Q_fb a_b - 1 + lambda y_f = 0, equality: y.a = 0
            A = np.zeros((m + 1, m + 1))
            rhs = np.zeros(m + 1)
            A[:m, :m] = Q[np.ix_(free, free)]
            A[:m, m] = y[free]
            A[m, :m] = y[free]
            rhs[:m] = 1.0 - Q[np.ix_(free, fixed)] @ alpha[fixed]
            rhs[m] = -float(y[fixed] @ alpha[fixed])
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if not np.allclose(A @ sol, rhs, atol=1e-9):
                continue
            alpha[free] = sol[:m]
        if abs(float(y @ alpha)) > 1e-9:
            continue
        if np.any(alpha < -1e-12) or np.any(alpha > c + 1e-12):
            continue
        val = objective(np.clip(alpha, 0, c))
        if val > best:
            best, best_alpha = val, np.clip(alpha, 0, c)
    return best, best_alpha


def naive_decision(support_vectors, alphas, bias, kernel):
    def f(x):
        total = 0.0
        for sv, a in zip(support_vectors, alphas):
            total += a * kernel(sv, x)
        return total + bias

    return f
