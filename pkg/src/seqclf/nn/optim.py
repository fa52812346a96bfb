import numpy as np

from ..errors import NumericalError, StateError


def adam_update(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=1):
    """Bias-corrected Adam step applied in place.

    params/grads: dicts name -> ndarray; state: dict name -> (m, v), created on
    first use.  Raises NumericalError naming the first parameter whose gradient
    is not finite, before touching any parameter.
    """
    if step < 1:
        raise StateError("adam step counter must start at 1")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}; try a lower learning rate")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m, v = state.get(name) or (np.zeros_like(p), np.zeros_like(p))
        if m.shape != p.shape:
            raise StateError(f"optimizer state shape {m.shape} does not match parameter {name!r} {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
        state[name] = (m, v)
    return params, state


class Adam:
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.state = {}

    def step(self):
        self.t += 1
        data = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_update(data, grads, self.state, self.lr, self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
