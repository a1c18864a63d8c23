"""Equality-constrained Newton ascent on a face of the probability simplex.

Used to finish Blahut-type iterations, which slow to a crawl near
critical multipliers while Newton converges quadratically there.
"""
from __future__ import annotations

import numpy as np


def newton_simplex(fun, x0, max_steps: int = 100, gtol: float = 1e-14):
    """Maximize a concave ``fun`` over ``{x > 0, sum x = 1}`` starting from ``x0``.

    ``fun(x)`` returns ``(value, grad, hess)``.  Stops once the gradient is
    constant across coordinates to ``gtol`` (the optimality condition on the
    face).  A small negative shift of the Hessian keeps directions in which
    ``fun`` is linear usable; such steps run into the boundary and are cut
    short there.  Every accepted step has a value no smaller than the last,
    so the result is never worse than ``x0``.
    """
    x = np.asarray(x0, dtype=float)
    val, g, H = fun(x)
    n = len(x)
    K = np.zeros((n + 1, n + 1))
    K[:n, n] = K[n, :n] = 1.0
    for _ in range(max_steps):
        if np.ptp(g) <= gtol * max(1.0, float(np.abs(g).max())):
            break
        mu = 1e-10 * (1.0 + float(np.abs(H).max()))
        K[:n, :n] = H - mu * np.eye(n)
        d = np.linalg.lstsq(K, np.concatenate([-g, [0.0]]), rcond=None)[0][:n]
        d -= d.mean()
        if not g @ d > 0:
            break
        neg = d < 0
        t = min(1.0, 0.99 * float(np.min(-x[neg] / d[neg]))) if neg.any() else 1.0
        while t > 1e-14:
            xn = x + t * d
            vn, gn, Hn = fun(xn)
            if vn >= val:
                break
            t *= 0.5
        else:
            break
        if np.abs(xn - x).max() <= 1e-17:
            break
        x, val, g, H = xn, vn, gn, Hn
    return x, val


def finish_on_support(make_fun, certify, x_full, candidates, max_rounds: int = 8):
    """Active-set finish: Newton on a support, then certify on the whole alphabet.

    ``make_fun(keep)`` builds the objective restricted to the letters in the
    boolean mask ``keep``; ``certify(x)`` takes a full-length point and
    returns ``(ok, violators)``.  After a failed round, letters whose weight
    vanished are dropped and violators are added before trying again.
    Returns ``(x, value)`` for the first certified point, else ``None``.
    """
    x_full = np.asarray(x_full, dtype=float)
    queue = [np.asarray(k, bool) for k in candidates]
    tried = []
    while queue and len(tried) < max_rounds:
        keep = queue.pop(0)
        if not keep.any() or any((keep == k).all() for k in tried):
            continue
        tried.append(keep)
        x0 = x_full[keep] + 1e-9
        x, val = newton_simplex(make_fun(keep), x0 / x0.sum())
        full = np.zeros(len(x_full))
        full[keep] = x / x.sum()
        ok, violators = certify(full)
        if ok:
            return full, val
        nxt = keep.copy()
        nxt[keep] = x > 1e-9 * x.max()
        queue.insert(0, nxt | violators)
    return None
