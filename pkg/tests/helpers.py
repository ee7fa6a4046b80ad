"""Shared test utilities: finite-difference gradient checking and a frozen
noise source for reproducible stochastic losses."""

import numpy as np


class FrozenRng:
    """Replays a fixed list of normal draws; replaces RngState in tests."""

    def __init__(self, seed, shapes):
        gen = np.random.Generator(np.random.Philox(seed))
        self._samples = [gen.standard_normal(s) for s in shapes]
        self._i = 0

    def normal(self, shape):
        s = self._samples[self._i % len(self._samples)]
        assert s.shape == tuple(shape)
        self._i += 1
        return s

    def reset(self):
        self._i = 0


def grad_check(f, params, step=1e-4, rel_tol=1e-4):
    """Compare analytic gradients of scalar f() against central differences.

    f must rebuild the graph on every call (and zero grads first). Returns
    the worst relative error over all parameter entries.
    """
    out = f()
    out.backward()
    grads = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.values))
             for name, t in params.items()}
    worst = 0.0
    worst_name = None
    for name, t in params.items():
        g = grads[name]
        it = np.nditer(t.values, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = t.values[ix]
            t.values[ix] = orig + step
            f_plus = f().item()
            t.values[ix] = orig - step
            f_minus = f().item()
            t.values[ix] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            denom = max(abs(numeric), abs(g[ix]), 1e-6)
            rel = abs(numeric - g[ix]) / denom
            if rel > worst:
                worst = rel
                worst_name = name
    assert worst < rel_tol, "worst rel err %g at %s" % (worst, worst_name)
    return worst
