"""Shared independent oracles for the test suite."""

import numpy as np

from flowtarget.core import DeviationCost


def grid_minimize(f_batch, d, levels=6, pts=21, lo=0.0, hi=1.0):
    """Multiresolution grid search for a convex objective on a box.

    Refines a ``pts``-per-dimension grid around the incumbent cell; with the
    default settings the final effective step is below 1e-4 per coordinate.
    ``f_batch`` maps an (N, d) array of points to N objective values.
    """
    lo_v = np.full(d, lo, dtype=float)
    hi_v = np.full(d, hi, dtype=float)
    best_x = None
    best_f = np.inf
    for _ in range(levels):
        axes = [np.linspace(lo_v[i], hi_v[i], pts) for i in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        vals = f_batch(points)
        idx = int(np.argmin(vals))
        if vals[idx] < best_f:
            best_f = float(vals[idx])
            best_x = points[idx].copy()
        span = (hi_v - lo_v) / (pts - 1)
        lo_v = np.maximum(best_x - 1.5 * span, lo)
        hi_v = np.minimum(best_x + 1.5 * span, hi)
    return best_x, best_f


def random_composite(seed, d, n_terms=4, allow_squared=True):
    """Random convex composite: deviation families on affine combinations of
    the coordinates plus a linear term. Returns (scalar f, subgradient,
    batched f)."""
    rng = np.random.default_rng(seed)
    terms = []
    for _ in range(n_terms):
        fam = rng.choice(["absolute", "under_over", "squared"] if allow_squared
                         else ["absolute", "under_over"])
        target = float(rng.uniform(0.0, 1.0))
        if fam == "absolute":
            g = DeviationCost.absolute(float(rng.uniform(0.1, 2.0)), target)
        elif fam == "under_over":
            g = DeviationCost.under_over(float(rng.uniform(0.0, 2.0)),
                                         float(rng.uniform(0.0, 2.0)), target)
        else:
            g = DeviationCost.squared(float(rng.uniform(0.1, 2.0)), target)
        w = rng.uniform(0.0, 1.0, size=d)
        w /= max(w.sum(), 1e-9)
        coef = float(rng.uniform(0.2, 2.0))
        terms.append((g, w, coef))
    lin = rng.uniform(-1.0, 1.0, size=d)

    def f(x):
        x = np.asarray(x, dtype=float)
        return float(sum(c * g.evaluate(float(w @ x), check_domain=False)
                         for g, w, c in terms) + lin @ x)

    def sub(x):
        x = np.asarray(x, dtype=float)
        out = lin.copy()
        for g, w, c in terms:
            out += c * g.subgradient(float(w @ x), check_domain=False) * w
        return out

    def f_batch(points):
        vals = points @ lin
        for g, w, c in terms:
            z = points @ w
            gap = z - g.target
            if g.family == "squared":
                vals = vals + c * g.delta_plus * gap * gap
            else:
                vals = vals + c * (g.delta_plus * np.maximum(gap, 0.0)
                                   + g.delta_minus * np.maximum(-gap, 0.0))
        return vals

    return f, sub, f_batch
