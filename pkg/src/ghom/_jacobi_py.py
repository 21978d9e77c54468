"""Pure-numpy cyclic Jacobi sweeps; drop-in twin of the compiled kernel."""

import math

import numpy as np


def jacobi_eigh(A, tol=1e-12, max_sweeps=100):
    a = np.array(A, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    v = np.eye(n)
    fro = math.sqrt(float(np.sum(a * a)))
    offmask = 1.0 - np.eye(n)
    sweep = 0
    while sweep < max_sweeps:
        off = float(np.sum((a * offmask) ** 2))
        if math.sqrt(off) <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    if theta >= 0.0:
                        t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                    else:
                        t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                x = a[:, p].copy()
                y = a[:, q]
                a[:, p] = c * x - s * y
                a[:, q] = s * x + c * y
                x = a[p, :].copy()
                y = a[q, :]
                a[p, :] = c * x - s * y
                a[q, :] = s * x + c * y
                x = v[:, p].copy()
                y = v[:, q]
                v[:, p] = c * x - s * y
                v[:, q] = s * x + c * y
        sweep += 1
    return np.diag(a).copy(), v, sweep
