"""Shared test oracles.

The central-difference gradient checker here is the independent oracle for every
differentiation test: it only ever calls forward evaluations, never the engine's
backward machinery, so agreement is evidence rather than tautology.
"""

import numpy as np

from spansrl import numcore as nc


def finite_diff_grad(f, x, h=1e-5):
    """Central finite differences of scalar f with respect to array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for k in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[k] += h
        xm[k] -= h
        flat[k] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def max_rel_err(a, b, floor=1e-6):
    """Worst-entry relative error with a floor so true zeros do not blow up."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))


def gradcheck_op(build, arrays, rng, tol=1e-4, h=1e-5):
    """Check one op against finite differences.

    `build(graph, *nodes)` returns the op's output node; the output is reduced to
    a scalar through a fixed random weighting so every output entry influences
    the loss. Returns the worst relative error over all inputs.
    """
    params = [nc.Parameter(f"p{k}", a) for k, a in enumerate(arrays)]
    g = nc.Graph()
    out = build(g, *[g.param(p) for p in params])
    w = rng.standard_normal(out.data.shape)
    loss = nc.sum_all(nc.multiply(out, g.constant(w)))
    grads = g.backward(loss)

    worst = 0.0
    for k, p in enumerate(params):
        def scalar(x, k=k):
            gg = nc.Graph()
            nodes = []
            for kk, pp in enumerate(params):
                nodes.append(gg.constant(x if kk == k else pp.data))
            o = build(gg, *nodes)
            return float(np.sum(o.data * w))

        numeric = finite_diff_grad(scalar, p.data, h=h)
        worst = max(worst, max_rel_err(grads[p], numeric))
    assert worst < tol, f"gradcheck failed: max rel err {worst:.3e} >= {tol}"
    return worst
