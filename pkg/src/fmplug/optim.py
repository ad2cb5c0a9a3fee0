"""Adam with bias correction, operating on plain numpy arrays."""

import numpy as np


class Adam:
    """Adam state for a set of named variables.

    ``step(name, param, grad)`` returns the updated parameter; the caller
    keeps ownership of the arrays.

    With ``per_variable=True`` the second-moment estimate is one scalar per
    variable (the mean of ``grad**2`` over its entries) instead of one per
    entry.  The preconditioner is then isotropic within each variable, which
    keeps the fixed points of projected steps at the constrained optimum.
    """

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8, per_variable=False):
        # lr may be a float or a {name: float} mapping
        self.lr = lr
        self.per_variable = per_variable
        self.b1, self.b2 = betas
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = {}

    def rate(self, name):
        return self.lr[name] if isinstance(self.lr, dict) else self.lr

    def step(self, name, param, grad):
        m = self._m.get(name)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros(()) if self.per_variable else np.zeros_like(grad)
            t = 0
        else:
            v, t = self._v[name], self._t[name]
        t += 1
        m = self.b1 * m + (1.0 - self.b1) * grad
        g2 = np.mean(grad * grad) if self.per_variable else grad * grad
        v = self.b2 * v + (1.0 - self.b2) * g2
        self._m[name], self._v[name], self._t[name] = m, v, t
        mhat = m / (1.0 - self.b1 ** t)
        vhat = v / (1.0 - self.b2 ** t)
        return param - self.rate(name) * mhat / (np.sqrt(vhat) + self.eps)
